"""Culturally tagged name pools and name-triplet combinatorics.

A pool is a CSV file (``name,gender,race,country``; ``#`` comments allowed)
of names tagged by gender and race. Unordered triplets of distinct names
define synthetic identities, so a cell of n names supports C(n, 3)
identities. Pools are immutable after load and safe to share across
threads; the ``used`` set passed to :func:`sample_triplet` is the caller's
to own and is not concurrency-safe.
"""

import csv
import io
from dataclasses import dataclass
from importlib import resources

from .errors import (
    CellExhaustedError,
    DuplicateNameError,
    PoolParseError,
    ReservedCharacterError,
)
from .rng import Xoshiro256StarStar

RACES = ("African", "Asian", "Caucasian", "Indian")
GENDERS = ("Male", "Female")

# Reserved by the prompt blend syntax `[A | B | C]`.
RESERVED_CHARS = ("[", "]", "|")

_CANON_RACE = {r.lower(): r for r in RACES}
_CANON_GENDER = {g.lower(): g for g in GENDERS}


@dataclass(frozen=True)
class NameEntry:
    name: str
    gender: str
    race: str
    country: str


@dataclass(frozen=True)
class IdentityTriplet:
    """Three distinct names; the unordered set is the identity key."""

    names: tuple
    race: str
    gender: str

    @property
    def canonical_key(self) -> str:
        return "|".join(sorted(self.names))


class NamePool:
    """Validated, immutable collection of name entries."""

    def __init__(self, entries):
        self.entries = tuple(entries)
        cells = {}
        for e in self.entries:
            cells.setdefault((e.race, e.gender), []).append(e.name)
        self._cells = {k: tuple(v) for k, v in cells.items()}

    @property
    def counts(self) -> dict:
        """Tally of names per (race, gender) cell."""
        return {k: len(v) for k, v in self._cells.items()}

    def cell(self, race: str, gender: str) -> tuple:
        """Names available for one (race, gender) cell (may be empty)."""
        return self._cells.get((race, gender), ())

    def gender_names(self, gender: str) -> tuple:
        """Names across all races for one gender (cross-race blending)."""
        merged = []
        for race in RACES:
            merged.extend(self._cells.get((race, gender), ()))
        return tuple(merged)

    def __len__(self):
        return len(self.entries)


def _canonical_enum(raw: str, table: dict, field: str, line_no: int) -> str:
    value = table.get(raw.strip().lower())
    if value is None:
        allowed = ", ".join(sorted(table.values()))
        raise PoolParseError(f"line {line_no}: unknown {field} {raw!r} (expected one of: {allowed})")
    return value


def parse_pool(text: str, source: str = "<pool>") -> NamePool:
    """Parse pool CSV text; see module docstring for the format."""
    entries = []
    seen = set()
    reader = csv.reader(io.StringIO(text))
    header = None
    for line_no, row in enumerate(reader, start=1):
        if not row or (row[0].lstrip().startswith("#")):
            continue
        if header is None:
            header = [c.strip().lower() for c in row]
            if header != ["name", "gender", "race", "country"]:
                raise PoolParseError(
                    f"{source}: line {line_no}: expected header 'name,gender,race,country', got {','.join(row)!r}"
                )
            continue
        if len(row) != 4:
            raise PoolParseError(f"{source}: line {line_no}: expected 4 fields, got {len(row)}")
        name = row[0].strip()
        if not name:
            raise PoolParseError(f"{source}: line {line_no}: empty name")
        for ch in RESERVED_CHARS:
            if ch in name:
                raise ReservedCharacterError(
                    f"{source}: line {line_no}: name {name!r} contains reserved character {ch!r}"
                )
        gender = _canonical_enum(row[1], _CANON_GENDER, "gender", line_no)
        race = _canonical_enum(row[2], _CANON_RACE, "race", line_no)
        country = row[3].strip() or "other"
        key = (name, gender, race)
        if key in seen:
            raise DuplicateNameError(f"{source}: line {line_no}: duplicate entry {key!r}")
        seen.add(key)
        entries.append(NameEntry(name=name, gender=gender, race=race, country=country))
    if header is None:
        raise PoolParseError(f"{source}: empty pool file")
    if not entries:
        raise PoolParseError(f"{source}: pool has a header but no entries")
    return NamePool(entries)


def load_pool(path) -> NamePool:
    """Load and validate a pool file from disk."""
    with open(path, encoding="utf-8") as fh:
        return parse_pool(fh.read(), source=str(path))


def serialize_pool(pool: NamePool) -> str:
    """Render a pool back to canonical CSV (load/serialize round-trips)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["name", "gender", "race", "country"])
    for e in pool.entries:
        writer.writerow([e.name, e.gender, e.race, e.country])
    return out.getvalue()


def load_bundled_pool() -> NamePool:
    """The small hand-curated pool shipped with the package."""
    text = resources.files("sig.data").joinpath("sample_pool.csv").read_text(encoding="utf-8")
    return parse_pool(text, source="bundled sample_pool.csv")


def bundled_pool_text() -> str:
    return resources.files("sig.data").joinpath("sample_pool.csv").read_text(encoding="utf-8")


def count_triplets(n: int) -> int:
    """Number of unordered 3-subsets of n names: C(n, 3), exact."""
    if n < 3:
        return 0
    return n * (n - 1) * (n - 2) // 6


def _count_used_in_cell(names, used) -> int:
    """How many keys in `used` are triplets drawable from `names`."""
    name_set = set(names)
    hits = 0
    for key in used:
        parts = key.split("|")
        if len(parts) == 3 and all(p in name_set for p in parts):
            hits += 1
    return hits


def sample_triplet(
    pool: NamePool,
    race: str,
    gender: str,
    seed: int,
    used: set,
    cross_race: bool = False,
) -> IdentityTriplet:
    """Draw an unused name triplet from one (race, gender) cell.

    Deterministic for fixed inputs sampled via xoshiro256**(seed):
    three distinct indices are drawn by partial Fisher-Yates and the draw
    repeats while the triplet's canonical key is in ``used``. With
    ``cross_race`` the candidate names span all races for the gender; the
    returned triplet still carries the requested race label.

    Raises CellExhaustedError when every triplet of the cell is used.
    """
    names = pool.gender_names(gender) if cross_race else pool.cell(race, gender)
    n = len(names)
    if n < 3:
        cell = f"{race}/{gender}" + (" (cross-race)" if cross_race else "")
        raise CellExhaustedError(f"cell {cell} has only {n} name(s); triplet sampling needs >= 3")
    total = count_triplets(n)
    if used and _count_used_in_cell(names, used) >= total:
        raise CellExhaustedError(
            f"cell {race}/{gender}: all {total} name triplets already used"
        )
    rng = Xoshiro256StarStar(seed)
    while True:
        idx = rng.sample_distinct(n, 3)
        picked = tuple(names[i] for i in idx)
        triplet = IdentityTriplet(names=picked, race=race, gender=gender)
        if triplet.canonical_key not in used:
            return triplet
