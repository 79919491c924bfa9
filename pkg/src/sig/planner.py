"""Expand a dataset configuration into a balanced, deterministic plan.

The plan is exhaustive over the demographic grid: every (race, gender,
age) cell receives exactly ``identities_per_cell`` identities, so each
axis value gets an identical share by construction. All per-identity
randomness (name triplet, attribute picks) is derived from
``hash64(master_seed, identity_id)``, making plans reproducible
byte-for-byte.
"""

import json
from dataclasses import dataclass, field

from .errors import BlendGroupError, CellExhaustedError, ConfigError
from .pools import GENDERS, RACES, IdentityTriplet, NamePool, count_triplets, sample_triplet
from .rng import Xoshiro256StarStar, hash64
from .templates import (
    PromptTemplate,
    extract_blend_group,
    format_blend_group,
    parse_template,
)

RACE_CODES = {"African": "AF", "Asian": "AS", "Caucasian": "CA", "Indian": "IN"}
GENDER_CODES = {"Male": "M", "Female": "F"}

DEFAULT_AGES = (25, 50, 65)
DEFAULT_POSES = ("left", "front", "right")
DEFAULT_POSE_PHRASES = {
    "left": "head facing left",
    "front": "head facing forward",
    "right": "head facing right",
}

DEFAULT_TEMPLATE_ID = "default"
DEFAULT_TEMPLATE_TEXT = (
    "professional headshot photo of {name_blend}, a {age} year old {race} {gender}, "
    "{hairstyle}, {expression} expression, {background} background, {pose_phrase}, "
    "detailed skin texture, studio lighting"
)

DEFAULT_BACKGROUNDS = ("plain studio", "neutral gray", "office", "city street", "outdoor park")
DEFAULT_HAIRSTYLES = ("short hair", "long hair", "curly hair", "straight hair", "tied-back hair")
DEFAULT_EXPRESSIONS = ("neutral", "slight smile", "serious")


@dataclass(frozen=True)
class DemographicSpec:
    race: str
    gender: str
    age: int


@dataclass(frozen=True)
class AttributeVocab:
    backgrounds: tuple = DEFAULT_BACKGROUNDS
    hairstyles: tuple = DEFAULT_HAIRSTYLES
    expressions: tuple = DEFAULT_EXPRESSIONS


@dataclass
class DatasetConfig:
    races: tuple = RACES
    genders: tuple = GENDERS
    ages: tuple = DEFAULT_AGES
    poses: tuple = DEFAULT_POSES
    identities_per_cell: int = 1
    master_seed: int = 0
    template_id: str = DEFAULT_TEMPLATE_ID
    template_text: str = DEFAULT_TEMPLATE_TEXT
    negative_prompt: str = ""
    attribute_vocab: AttributeVocab = field(default_factory=AttributeVocab)
    pose_phrases: dict = field(default_factory=lambda: dict(DEFAULT_POSE_PHRASES))
    cross_race: bool = False

    def validate(self):
        """Collect every violation; raise ConfigError listing them all."""
        violations = []

        def check_axis(label, values, allowed=None):
            values = tuple(values)
            if not values:
                violations.append(f"{label} must be non-empty")
            if len(set(values)) != len(values):
                violations.append(f"{label} contains duplicates: {values}")
            if allowed:
                for v in values:
                    if v not in allowed:
                        violations.append(f"{label}: unknown value {v!r} (allowed: {allowed})")

        check_axis("races", self.races, RACES)
        check_axis("genders", self.genders, GENDERS)
        check_axis("ages", self.ages)
        for a in self.ages:
            if not isinstance(a, int) or a <= 0:
                violations.append(f"ages: {a!r} is not a positive integer")
        check_axis("poses", self.poses)
        if self.identities_per_cell < 1:
            violations.append(f"identities_per_cell must be >= 1, got {self.identities_per_cell}")
        if not 0 <= self.master_seed < 1 << 64:
            violations.append("master_seed must fit in an unsigned 64-bit integer")
        try:
            parse_template(self.template_text)
        except Exception as exc:  # template errors belong in the violation list
            violations.append(f"template: {exc}")
        if violations:
            raise ConfigError(violations)


@dataclass(frozen=True)
class IdentitySpec:
    identity_id: str
    triplet: IdentityTriplet
    demographics: DemographicSpec
    identity_seed: int
    attributes: dict

    def to_json_dict(self) -> dict:
        return {
            "identity_id": self.identity_id,
            "demographics": {
                "race": self.demographics.race,
                "gender": self.demographics.gender,
                "age": self.demographics.age,
            },
            "triplet": {
                "names": list(self.triplet.names),
                "race": self.triplet.race,
                "gender": self.triplet.gender,
                "canonical_key": self.triplet.canonical_key,
            },
            "identity_seed": self.identity_seed,
            "attributes": {
                "background": self.attributes.get("background"),
                "hairstyle": self.attributes.get("hairstyle"),
                "expression": self.attributes.get("expression"),
            },
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "IdentitySpec":
        trip = d["triplet"]
        demo = d["demographics"]
        return cls(
            identity_id=d["identity_id"],
            triplet=IdentityTriplet(
                names=tuple(trip["names"]), race=trip["race"], gender=trip["gender"]
            ),
            demographics=DemographicSpec(race=demo["race"], gender=demo["gender"], age=demo["age"]),
            identity_seed=d["identity_seed"],
            attributes=dict(d["attributes"]),
        )


@dataclass(frozen=True)
class PromptBundle:
    identity_id: str
    pose: str
    positive_prompt: str
    negative_prompt: str
    generation_seed: int


def _draw_attributes(vocab: AttributeVocab, identity_seed: int) -> dict:
    """Seeded uniform picks, fixed per identity so appearance cues stay
    constant across poses. Empty vocab lists yield None (placeholder left
    unresolved unless the template omits it)."""
    rng = Xoshiro256StarStar(hash64(identity_seed, "attributes"))

    def pick(options):
        options = tuple(options)
        if not options:
            return None
        return options[rng.below(len(options))]

    return {
        "background": pick(vocab.backgrounds),
        "hairstyle": pick(vocab.hairstyles),
        "expression": pick(vocab.expressions),
    }


def plan_dataset(config: DatasetConfig, pool: NamePool):
    """Produce the full list of IdentitySpec for a configuration.

    Exactly |races| * |genders| * |ages| * identities_per_cell identities,
    iterated race -> gender -> age -> cell index, with dataset-wide unique
    triplets. Deterministic for fixed (config, pool).
    """
    config.validate()
    if config.cross_race:
        needed_per_gender = config.identities_per_cell * len(config.ages) * len(config.races)
        for gender in config.genders:
            available = count_triplets(len(pool.gender_names(gender)))
            if available < needed_per_gender:
                raise CellExhaustedError(
                    f"cross-race pool for gender {gender} supports {available} triplets, "
                    f"plan needs {needed_per_gender}"
                )
    else:
        needed_per_pair = config.identities_per_cell * len(config.ages)
        for race in config.races:
            for gender in config.genders:
                available = count_triplets(len(pool.cell(race, gender)))
                if available < needed_per_pair:
                    raise CellExhaustedError(
                        f"pool cell {race}/{gender} supports {available} triplets, "
                        f"plan needs {needed_per_pair}"
                    )

    total = len(config.races) * len(config.genders) * len(config.ages) * config.identities_per_cell
    width = max(5, len(str(total)))
    used = set()
    specs = []
    ordinal = 0
    for race in config.races:
        for gender in config.genders:
            for age in config.ages:
                for _ in range(config.identities_per_cell):
                    ordinal += 1
                    identity_id = (
                        f"{ordinal:0{width}d}_{RACE_CODES[race]}{GENDER_CODES[gender]}{age}"
                    )
                    identity_seed = hash64(config.master_seed, identity_id)
                    triplet = sample_triplet(
                        pool,
                        race,
                        gender,
                        hash64(identity_seed, "triplet"),
                        used,
                        cross_race=config.cross_race,
                    )
                    used.add(triplet.canonical_key)
                    specs.append(
                        IdentitySpec(
                            identity_id=identity_id,
                            triplet=triplet,
                            demographics=DemographicSpec(race=race, gender=gender, age=age),
                            identity_seed=identity_seed,
                            attributes=_draw_attributes(config.attribute_vocab, identity_seed),
                        )
                    )
    return specs


def build_prompt(
    spec: IdentitySpec,
    pose: str,
    template,
    pose_phrases: dict | None = None,
    negative_prompt: str = "",
) -> PromptBundle:
    """Render one identity/pose into a PromptBundle.

    ``template`` may be a PromptTemplate or raw template text. The
    generation seed is hash64(identity_seed, pose). When the rendered
    prompt contains a blend group it must round-trip to the triplet names
    (guards against templates that mangle the blend syntax).
    """
    if not isinstance(template, PromptTemplate):
        template = parse_template(template)
    phrases = DEFAULT_POSE_PHRASES if pose_phrases is None else pose_phrases
    values = {
        "name_blend": format_blend_group(spec.triplet.names),
        "age": str(spec.demographics.age),
        "race": spec.demographics.race,
        "gender": spec.demographics.gender,
        "pose_phrase": phrases.get(pose, pose),
        "background": spec.attributes.get("background"),
        "hairstyle": spec.attributes.get("hairstyle"),
        "expression": spec.attributes.get("expression"),
    }
    positive = template.render(values)
    found = extract_blend_group(positive)
    if found is not None and found[1] != tuple(spec.triplet.names):
        raise BlendGroupError(
            f"blend group {found[0]!r} does not match triplet {spec.triplet.names}"
        )
    return PromptBundle(
        identity_id=spec.identity_id,
        pose=pose,
        positive_prompt=positive,
        negative_prompt=negative_prompt,
        generation_seed=hash64(spec.identity_seed, pose),
    )


def write_plan(specs, path):
    """Serialize a plan as JSON Lines, one identity per line, stable order."""
    with open(path, "w", encoding="utf-8") as fh:
        for spec in specs:
            fh.write(json.dumps(spec.to_json_dict(), ensure_ascii=False) + "\n")


def read_plan(path):
    specs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                specs.append(IdentitySpec.from_json_dict(json.loads(line)))
    return specs
