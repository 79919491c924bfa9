"""Verification-style analysis over manifest images and their embeddings.

Implements the evaluation protocol end to end: mated / non-mated pair
construction (frontal-only and per-race controls, seeded sampling under a
cap), the normalized similarity score s = (1 + cosine) / 2 so orthogonal
embeddings land at 0.5, Gaussian KDE with Silverman bandwidth, two-sample
Kolmogorov-Smirnov and KDE-overlap comparisons, cross-race mean-score
heatmaps, and per-identity consistency summaries.

Scoring is pure over the embedding matrix, so everything here is
re-entrant and deterministic given (manifest, matrix, policy, seed).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyCellError,
    EmptyInputError,
    InsufficientDataError,
    ZeroVectorError,
)
from .manifest import STATUS_GENERATED
from .pools import RACES
from .rng import Xoshiro256StarStar, hash64

FRONTAL_POSE = "front"
DEFAULT_NONMATED_CAP = 10_000
KDE_BANDWIDTH_FLOOR = 1e-3


# --- similarity -----------------------------------------------------------


def similarity_score(a, b) -> float:
    """(1 + cosine(a, b)) / 2: 1 for identical direction, 0.5 for
    orthogonal, 0 for antipodal."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"vector dims differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < 1e-12 or nb < 1e-12:
        raise ZeroVectorError("similarity undefined for zero vectors")
    cos = float(np.dot(a, b) / (na * nb))
    cos = max(-1.0, min(1.0, cos))
    return (1.0 + cos) / 2.0


def _pair_scores(matrix, pairs) -> np.ndarray:
    """Vectorized scores for [(image_id_a, image_id_b), ...]."""
    if not pairs:
        return np.zeros(0, dtype=np.float64)
    rows_a = matrix.rows_for([p[0] for p in pairs])
    rows_b = matrix.rows_for([p[1] for p in pairs])
    va = matrix.vectors[rows_a].astype(np.float64)
    vb = matrix.vectors[rows_b].astype(np.float64)
    na = np.linalg.norm(va, axis=1)
    nb = np.linalg.norm(vb, axis=1)
    cos = np.clip(np.einsum("ij,ij->i", va, vb) / (na * nb), -1.0, 1.0)
    return (1.0 + cos) / 2.0


# --- pair protocols ---------------------------------------------------------


@dataclass
class PairPolicy:
    frontal_only: bool = True
    intra_race: bool = True
    cap_per_race: int = DEFAULT_NONMATED_CAP
    frontal_pose: str = FRONTAL_POSE


@dataclass
class PairSet:
    mated: list = field(default_factory=list)      # (image_a, image_b, identity_id)
    nonmated: list = field(default_factory=list)   # (image_a, image_b, group_label)
    policy: PairPolicy = field(default_factory=PairPolicy)
    seed: int = 0
    warnings: list = field(default_factory=list)


def _unrank_pair(k: int, m: int):
    """k-th unordered pair (i < j) of range(m), lexicographic by i."""
    lo, hi = 0, m - 1
    # smallest i with cum(i+1) > k, cum(i) = i*m - i*(i+1)/2
    while lo < hi:
        mid = (lo + hi) // 2
        cum_next = (mid + 1) * m - (mid + 1) * (mid + 2) // 2
        if cum_next > k:
            hi = mid
        else:
            lo = mid + 1
    i = lo
    cum_i = i * m - i * (i + 1) // 2
    j = i + 1 + (k - cum_i)
    return i, j


def _sample_group_pairs(image_ids, identity_of, cap, rng):
    """Up to ``cap`` distinct unordered image pairs with distinct
    identities, uniform over the valid pairs (prefix of a uniform
    permutation of the full C(m,2) space, filtered)."""
    m = len(image_ids)
    total = m * (m - 1) // 2
    if total == 0:
        return []
    same_identity = 0
    per_identity = {}
    for img in image_ids:
        ident = identity_of[img]
        per_identity[ident] = per_identity.get(ident, 0) + 1
    for k in per_identity.values():
        same_identity += k * (k - 1) // 2
    valid_total = total - same_identity
    if valid_total <= 0:
        return []
    want = min(cap, valid_total)
    out = []
    swaps = {}
    for step in range(total):
        j = step + rng.below(total - step)
        vi = swaps.get(step, step)
        vj = swaps.get(j, j)
        swaps[step], swaps[j] = vj, vi
        a, b = _unrank_pair(vj, m)
        img_a, img_b = image_ids[a], image_ids[b]
        if identity_of[img_a] == identity_of[img_b]:
            continue
        out.append((img_a, img_b))
        if len(out) == want:
            break
    return out


def build_pairs(records, policy: PairPolicy, seed: int) -> PairSet:
    """Construct mated and non-mated pairs from generated records.

    Mated: all C(k, 2) pairs within each identity's k images. Non-mated:
    seeded sample without replacement, within race when
    ``policy.intra_race`` (the default), restricted to frontal images
    when ``policy.frontal_only``. Groups too small to pair are recorded
    as warnings, not errors.
    """
    records = [r for r in records if r.status == STATUS_GENERATED]
    pairs = PairSet(policy=policy, seed=seed)

    by_identity = {}
    for rec in records:
        by_identity.setdefault(rec.identity_id, []).append(rec)
    for identity_id, recs in by_identity.items():
        ids = [r.image_id for r in recs]
        for i in range(len(ids)):
            for j in range(i + 1, len(ids)):
                pairs.mated.append((ids[i], ids[j], identity_id))

    eligible = records
    if policy.frontal_only:
        eligible = [r for r in records if r.pose == policy.frontal_pose]
    identity_of = {r.image_id: r.identity_id for r in eligible}

    if policy.intra_race:
        groups = {}
        for rec in eligible:
            groups.setdefault(rec.race or "unknown", []).append(rec.image_id)
        group_items = sorted(groups.items())
    else:
        group_items = [("all", [r.image_id for r in eligible])]

    for label, image_ids in group_items:
        idents = {identity_of[i] for i in image_ids}
        if len(idents) < 2:
            pairs.warnings.append(
                f"group {label!r}: {len(idents)} identit(ies); no non-mated pairs"
            )
            continue
        rng = Xoshiro256StarStar(hash64(seed, "nonmated", label))
        for img_a, img_b in _sample_group_pairs(
            image_ids, identity_of, policy.cap_per_race, rng
        ):
            pairs.nonmated.append((img_a, img_b, label))
    return pairs


# --- score distributions ----------------------------------------------------


def summarize(scores) -> dict:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        return {"n": 0, "mean": None, "std": None, "median": None, "q05": None, "q95": None}
    return {
        "n": int(scores.size),
        "mean": float(np.mean(scores)),
        "std": float(np.std(scores, ddof=1)) if scores.size > 1 else 0.0,
        "median": float(np.median(scores)),
        "q05": float(np.quantile(scores, 0.05)),
        "q95": float(np.quantile(scores, 0.95)),
    }


@dataclass
class ScoreDistribution:
    group: str
    scores: np.ndarray
    summary: dict
    kde: tuple | None = None  # (grid, densities)

    @classmethod
    def from_scores(cls, group, scores) -> "ScoreDistribution":
        scores = np.asarray(scores, dtype=np.float64)
        return cls(group=group, scores=scores, summary=summarize(scores))


def score_pairs(pairs: PairSet, matrix) -> dict:
    """Score every pair; returns {group: ScoreDistribution} with one group
    per non-mated label plus "all" (their union) and "mated"."""
    out = {}
    nonmated_by_group = {}
    for a, b, label in pairs.nonmated:
        nonmated_by_group.setdefault(label, []).append((a, b))
    all_scores = []
    for label in sorted(nonmated_by_group):
        scores = _pair_scores(matrix, nonmated_by_group[label])
        out[label] = ScoreDistribution.from_scores(label, scores)
        all_scores.append(scores)
    union = np.concatenate(all_scores) if all_scores else np.zeros(0)
    out["all"] = ScoreDistribution.from_scores("all", union)
    mated_scores = _pair_scores(matrix, [(a, b) for a, b, _ in pairs.mated])
    out["mated"] = ScoreDistribution.from_scores("mated", mated_scores)
    return out


# --- KDE ---------------------------------------------------------------------


def silverman_bandwidth(scores) -> float:
    """1.06 * sigma_hat * n^(-1/5), floored at 1e-3."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    sigma = float(np.std(scores, ddof=1)) if n > 1 else 0.0
    return max(1.06 * sigma * n ** (-0.2), KDE_BANDWIDTH_FLOOR)


def default_grid(scores, bandwidth: float, min_points: int = 512):
    """Grid covering the sample plus 5 bandwidths of tail on each side,
    spaced at most bandwidth/3 apart so trapezoidal mass is accurate."""
    scores = np.asarray(scores, dtype=np.float64)
    lo = float(scores.min()) - 5.0 * bandwidth
    hi = float(scores.max()) + 5.0 * bandwidth
    span = hi - lo
    n = max(min_points, int(math.ceil(span / (bandwidth / 3.0))) + 1)
    return lo, hi, n


def kde(scores, bandwidth: float | None = None, grid: tuple | None = None):
    """Gaussian-kernel density estimate on a uniform grid.

    ``grid`` is (lo, hi, n); when omitted it is derived from the sample
    and bandwidth (see default_grid). Returns (grid_points, densities).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size < 2:
        raise InsufficientDataError(f"KDE needs >= 2 scores, got {scores.size}")
    if bandwidth is not None and bandwidth <= 0:
        raise InsufficientDataError("bandwidth must be positive")
    h = bandwidth if bandwidth is not None else silverman_bandwidth(scores)
    h = max(h, KDE_BANDWIDTH_FLOOR)
    if grid is None:
        grid = default_grid(scores, h)
    lo, hi, n = grid
    if hi <= lo or int(n) < 2:
        raise InsufficientDataError(f"bad KDE grid (lo={lo}, hi={hi}, n={n})")
    points = np.linspace(lo, hi, int(n))
    dens = np.zeros(points.size, dtype=np.float64)
    norm = 1.0 / (scores.size * h * math.sqrt(2.0 * math.pi))
    # chunked to bound the (grid x samples) broadcast
    step = 1024
    for start in range(0, points.size, step):
        block = points[start : start + step, None]
        z = (block - scores[None, :]) / h
        dens[start : start + step] = norm * np.exp(-0.5 * z * z).sum(axis=1)
    return points, dens


def trapezoid(ys, xs) -> float:
    ys = np.asarray(ys, dtype=np.float64)
    xs = np.asarray(xs, dtype=np.float64)
    return float(np.sum((ys[1:] + ys[:-1]) * np.diff(xs)) / 2.0)


# --- distribution comparison --------------------------------------------------


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic, exact.

    Computed over integer counts (max |count_a * m - count_b * n|) with a
    single final division, so the result is the correctly rounded value
    of the underlying rational.
    """
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    n, m = a.size, b.size
    if n == 0 or m == 0:
        raise EmptyInputError("KS statistic needs two non-empty samples")
    values = np.concatenate([a, b])
    ca = np.searchsorted(a, values, side="right").astype(np.int64)
    cb = np.searchsorted(b, values, side="right").astype(np.int64)
    worst = int(np.max(np.abs(ca * m - cb * n)))  # exact while n*m < 2^63
    return worst / (n * m)


def compare_distributions(a, b, bandwidth: float | None = None) -> dict:
    """KS statistic, mean shift, and KDE overlap coefficient of two score
    samples. Overlap integrates min(kde_a, kde_b) on a shared grid."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise EmptyInputError("compare_distributions needs non-empty samples")
    ha = bandwidth if bandwidth is not None else silverman_bandwidth(a)
    hb = bandwidth if bandwidth is not None else silverman_bandwidth(b)
    lo = float(min(a.min(), b.min())) - 5.0 * max(ha, hb)
    hi = float(max(a.max(), b.max())) + 5.0 * max(ha, hb)
    h_fine = min(ha, hb)
    n = max(512, int(math.ceil((hi - lo) / (h_fine / 3.0))) + 1)
    shared = (lo, hi, n)
    overlap = None  # undefined when either sample cannot support a KDE
    if a.size >= 2 and b.size >= 2:
        grid_a, dens_a = kde(a, bandwidth=ha, grid=shared)
        _, dens_b = kde(b, bandwidth=hb, grid=shared)
        overlap = float(trapezoid(np.minimum(dens_a, dens_b), grid_a))
    return {
        "ks_stat": ks_statistic(a, b),
        "mean_shift": float(np.mean(a) - np.mean(b)),
        "overlap_coefficient": overlap,
    }


# --- race heatmap ---------------------------------------------------------------


@dataclass
class RaceHeatmap:
    races: tuple
    means: np.ndarray   # NaN where a cell has no data
    counts: np.ndarray
    empty_cells: list

    def to_json_dict(self) -> dict:
        means = [
            [None if math.isnan(v) else float(v) for v in row] for row in self.means.tolist()
        ]
        return {
            "races": list(self.races),
            "means": means,
            "counts": [[int(c) for c in row] for row in self.counts.tolist()],
            "empty_cells": [list(c) for c in self.empty_cells],
        }


def race_heatmap(records, matrix, policy: PairPolicy, seed: int) -> RaceHeatmap:
    """Mean non-mated similarity between frontal images of each race pair.

    Diagonal cells use intra-race non-mated pairs; off-diagonal cells use
    cross-race pairs; each cell samples up to policy.cap_per_race pairs
    (seeded). Symmetric by construction. Cells without enough data are
    NaN and listed in empty_cells; it is an error only when *no* cell has
    data.
    """
    frontal = [
        r for r in records if r.status == STATUS_GENERATED and r.pose == policy.frontal_pose
    ]
    by_race = {}
    for rec in frontal:
        by_race.setdefault(rec.race, []).append(rec)
    races = RACES
    k = len(races)
    means = np.full((k, k), np.nan)
    counts = np.zeros((k, k), dtype=np.int64)
    empty = []
    identity_of = {r.image_id: r.identity_id for r in frontal}
    for i, race_a in enumerate(races):
        for j in range(i, k):
            race_b = races[j]
            rng = Xoshiro256StarStar(hash64(seed, "heatmap", race_a, race_b))
            if i == j:
                image_ids = [r.image_id for r in by_race.get(race_a, [])]
                idents = {identity_of[x] for x in image_ids}
                if len(idents) < 2:
                    empty.append((race_a, race_b))
                    continue
                sampled = _sample_group_pairs(
                    image_ids, identity_of, policy.cap_per_race, rng
                )
            else:
                ids_a = [r.image_id for r in by_race.get(race_a, [])]
                ids_b = [r.image_id for r in by_race.get(race_b, [])]
                total = len(ids_a) * len(ids_b)
                if total == 0:
                    empty.append((race_a, race_b))
                    continue
                want = min(policy.cap_per_race, total)
                picks = rng.sample_distinct(total, want)
                sampled = [(ids_a[p // len(ids_b)], ids_b[p % len(ids_b)]) for p in picks]
            if not sampled:
                empty.append((race_a, race_b))
                continue
            scores = _pair_scores(matrix, sampled)
            means[i, j] = means[j, i] = float(np.mean(scores))
            counts[i, j] = counts[j, i] = scores.size
    if np.all(np.isnan(means)):
        raise EmptyCellError("no race cell has enough frontal images for a heatmap")
    return RaceHeatmap(races=races, means=means, counts=counts, empty_cells=empty)


# --- identity consistency ----------------------------------------------------------


@dataclass
class ConsistencyReport:
    per_identity: dict            # identity_id -> {"mean", "min", "n_pairs"}
    flagged: list                 # identity ids with min below threshold
    threshold: float
    aggregate: ScoreDistribution  # all mated scores pooled
    warnings: list


def identity_consistency_report(records, matrix, threshold: float = 0.6) -> ConsistencyReport:
    """Per-identity mated-score summary; identities whose minimum mated
    score falls below ``threshold`` are flagged. Identities with fewer
    than two embedded images are warned about and excluded."""
    records = [r for r in records if r.status == STATUS_GENERATED]
    by_identity = {}
    for rec in records:
        by_identity.setdefault(rec.identity_id, []).append(rec.image_id)
    per_identity = {}
    flagged = []
    warnings = []
    pooled = []
    for identity_id in sorted(by_identity):
        image_ids = by_identity[identity_id]
        if len(image_ids) < 2:
            warnings.append(f"identity {identity_id}: only {len(image_ids)} image(s); excluded")
            continue
        pair_list = [
            (image_ids[i], image_ids[j])
            for i in range(len(image_ids))
            for j in range(i + 1, len(image_ids))
        ]
        scores = _pair_scores(matrix, pair_list)
        pooled.append(scores)
        entry = {
            "mean": float(np.mean(scores)),
            "min": float(np.min(scores)),
            "n_pairs": int(scores.size),
        }
        per_identity[identity_id] = entry
        if entry["min"] < threshold:
            flagged.append(identity_id)
    aggregate = ScoreDistribution.from_scores(
        "mated", np.concatenate(pooled) if pooled else np.zeros(0)
    )
    return ConsistencyReport(
        per_identity=per_identity,
        flagged=flagged,
        threshold=threshold,
        aggregate=aggregate,
        warnings=warnings,
    )
