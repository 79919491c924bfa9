"""Shared builders for analysis-layer tests: synthetic manifests backed by
deterministic oracle vectors, with no files or servers involved."""

import numpy as np

from sig.embeddings import OracleParams, build_matrix, oracle_view_vector
from sig.manifest import ManifestRecord
from sig.pools import RACES


def make_records(n_per_race, races=RACES, poses=("front",)):
    records = []
    for race in races:
        for i in range(n_per_race):
            identity = f"{race[:2].lower()}{i:04d}"
            for pose in poses:
                records.append(
                    ManifestRecord(
                        identity_id=identity,
                        pose=pose,
                        demographics={"race": race, "gender": "Female", "age": 25},
                        triplet_key=f"{identity}|x|y",
                        prompt_sha256="",
                        generation_seed=7,
                        status="generated",
                        image_path=f"images/{identity}_{pose}.png",
                    )
                )
    return records


def oracle_matrix(records, sigma=0.25, dim=512):
    params = OracleParams(dim=dim, sigma=sigma)
    vectors = [
        oracle_view_vector(params, rec.identity_id, rec.pose, str(rec.generation_seed))
        for rec in records
    ]
    return build_matrix(np.stack(vectors), [r.image_id for r in records], params.model_id())


def normal_scores(rng, n, mean=0.5, std=0.02):
    out = []
    while len(out) < n:
        a, b = rng.normal_pair()
        out.append(mean + std * a)
        if len(out) < n:
            out.append(mean + std * b)
    return np.array(out)
