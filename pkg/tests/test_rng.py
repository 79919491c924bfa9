import math

from sig.rng import MASK64, Xoshiro256StarStar, hash64


def test_hash64_stable_and_order_sensitive():
    a = hash64("alpha", 1)
    assert a == hash64("alpha", 1)
    assert a != hash64(1, "alpha")
    assert a != hash64("alpha", 2)
    assert 0 <= a <= MASK64


def test_hash64_int_and_str_render_identically():
    # ints are encoded as decimal text, so 7 and "7" collapse on purpose
    assert hash64(7, "x") == hash64("7", "x")


def test_stream_determinism_and_range():
    a = Xoshiro256StarStar(123)
    b = Xoshiro256StarStar(123)
    seq_a = [a.next_u64() for _ in range(64)]
    seq_b = [b.next_u64() for _ in range(64)]
    assert seq_a == seq_b
    assert all(0 <= v <= MASK64 for v in seq_a)
    assert len(set(seq_a)) == 64


def test_different_seeds_diverge():
    a = [Xoshiro256StarStar(1).next_u64() for _ in range(8)]
    b = [Xoshiro256StarStar(2).next_u64() for _ in range(8)]
    assert a != b


def test_golden_vector_frozen():
    # Pins the generator's exact output: any platform or refactor drift here
    # would silently change every seeded artifact in the pipeline. Update
    # only with a deliberate format bump.
    rng = Xoshiro256StarStar(42)
    values = [rng.next_u64() for _ in range(4)]
    assert values == [
        1546998764402558742,
        6990951692964543102,
        12544586762248559009,
        17057574109182124193,
    ]


def test_below_bounds_and_determinism():
    rng = Xoshiro256StarStar(99)
    draws = [rng.below(10) for _ in range(1000)]
    assert set(draws) <= set(range(10))
    # every residue shows up over 1000 draws
    assert set(draws) == set(range(10))


def test_unit01_in_range():
    rng = Xoshiro256StarStar(5)
    xs = [rng.unit01() for _ in range(1000)]
    assert all(0.0 <= x < 1.0 for x in xs)
    assert abs(sum(xs) / len(xs) - 0.5) < 0.05


def test_normal_pair_moments():
    rng = Xoshiro256StarStar(2024)
    vals = []
    for _ in range(5000):
        a, b = rng.normal_pair()
        vals.extend((a, b))
    n = len(vals)
    mean = sum(vals) / n
    var = sum((v - mean) ** 2 for v in vals) / (n - 1)
    assert abs(mean) < 0.05
    assert abs(math.sqrt(var) - 1.0) < 0.05


def test_sample_distinct_is_a_permutation_prefix():
    rng = Xoshiro256StarStar(7)
    out = rng.sample_distinct(100, 100)
    assert sorted(out) == list(range(100))
    rng2 = Xoshiro256StarStar(7)
    assert rng2.sample_distinct(100, 10) == out[:10]


def test_sample_distinct_uniformity_smoke():
    # first element of a size-4 permutation should be ~uniform
    counts = {i: 0 for i in range(4)}
    for seed in range(2000):
        counts[Xoshiro256StarStar(seed).sample_distinct(4, 1)[0]] += 1
    for c in counts.values():
        assert 380 <= c <= 620  # 500 expected
