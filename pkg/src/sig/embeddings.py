"""Embedding vectors for manifest images, from three interchangeable sources.

* ``read_embeddings`` / ``write_embeddings``: the EMB1 binary format
  (magic ``EMB1``, u32 LE dim, u64 LE count, then count*dim float32 LE
  values row-major), with a companion ``<path>.index.json`` mapping
  image_id -> row and recording the model_id.
* ``embed_via_service``: POST /v1/embed per image against a real
  embedding backend.
* ``oracle_embed``: deterministic stand-in with analytically known
  statistics, keyed off the ``sig.*`` tEXt chunks the mock backend writes:
  vector = normalize(v_id + sigma * u) where v_id is a unit vector from
  PRNG(namespace, identity tag) and u is a unit vector from
  PRNG(namespace, identity tag, pose tag, seed tag). Distinct identities
  are near-orthogonal in high dimension, so non-mated similarity scores
  concentrate at 0.5 with std about 1/(2*sqrt(dim)).

Vectors are L2-normalized on ingest regardless of source.
"""

import base64
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import (
    BadMagicError,
    DimensionMismatchError,
    IndexMismatchError,
    MissingChunkError,
    MissingEmbeddingError,
    ProtocolError,
    TruncatedFileError,
    ZeroVectorError,
)
from .pngmeta import read_text_chunks
from .rng import Xoshiro256StarStar, hash64

MAGIC = b"EMB1"
DEFAULT_DIM = 512
UNIT_NORM_TOL = 1e-4

REQUIRED_CHUNKS = ("sig.identity", "sig.pose", "sig.seed")


@dataclass
class OracleParams:
    dim: int = DEFAULT_DIM
    sigma: float = 0.25
    seed_namespace: str = "sig-oracle"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"oracle dim must be positive, got {self.dim}")
        if self.sigma < 0:
            raise ValueError(f"oracle sigma must be >= 0, got {self.sigma}")

    def model_id(self) -> str:
        return f"oracle-dim{self.dim}-sigma{self.sigma}"


class EmbeddingMatrix:
    """Dense float32 vectors with an image_id -> row index."""

    def __init__(self, vectors: np.ndarray, index: dict, model_id: str):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValueError("vectors must be a 2-D array")
        if len(index) != vectors.shape[0]:
            raise IndexMismatchError(
                f"index has {len(index)} entries for {vectors.shape[0]} rows"
            )
        rows = sorted(index.values())
        if rows != list(range(vectors.shape[0])):
            raise IndexMismatchError("index is not a bijection onto row numbers")
        self.vectors = vectors
        self.index = dict(index)
        self.model_id = model_id

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])

    def vector(self, image_id: str) -> np.ndarray:
        row = self.index.get(image_id)
        if row is None:
            raise MissingEmbeddingError(f"no embedding for image_id {image_id!r}")
        return self.vectors[row]

    def rows_for(self, image_ids) -> np.ndarray:
        return np.array([self.index_of(i) for i in image_ids], dtype=np.int64)

    def index_of(self, image_id: str) -> int:
        row = self.index.get(image_id)
        if row is None:
            raise MissingEmbeddingError(f"no embedding for image_id {image_id!r}")
        return row


def _normalize_rows(vectors: np.ndarray) -> np.ndarray:
    if vectors.size == 0:
        return vectors.astype(np.float32)
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms < 1e-12):
        bad = int(np.argmin(norms))
        raise ZeroVectorError(f"embedding row {bad} has (near-)zero norm")
    return (vectors / norms[:, None]).astype(np.float32)


def build_matrix(vectors, image_ids, model_id: str) -> EmbeddingMatrix:
    """Assemble + normalize a matrix from parallel (vectors, image_ids)."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.size == 0:
        dim = vectors.shape[1] if vectors.ndim == 2 and vectors.shape[1] else DEFAULT_DIM
        return EmbeddingMatrix(np.zeros((0, dim), dtype=np.float32), {}, model_id)
    index = {image_id: row for row, image_id in enumerate(image_ids)}
    if len(index) != len(image_ids):
        raise IndexMismatchError("duplicate image_id while assembling matrix")
    return EmbeddingMatrix(_normalize_rows(vectors), index, model_id)


# --- deterministic oracle -------------------------------------------------


def unit_vector_from_seed(seed: int, dim: int) -> np.ndarray:
    """Deterministic unit vector: dim standard normals (Box-Muller over
    xoshiro256**, fixed draw order), L2-normalized."""
    rng = Xoshiro256StarStar(seed)
    vals = np.empty(dim, dtype=np.float64)
    i = 0
    while i < dim:
        a, b = rng.normal_pair()
        vals[i] = a
        if i + 1 < dim:
            vals[i + 1] = b
        i += 2
    return vals / np.linalg.norm(vals)


def oracle_identity_vector(params: OracleParams, identity_tag: str) -> np.ndarray:
    return unit_vector_from_seed(hash64(params.seed_namespace, identity_tag), params.dim)


def oracle_view_vector(
    params: OracleParams, identity_tag: str, pose_tag: str, seed_tag: str
) -> np.ndarray:
    """The embedding the oracle assigns one image (already unit norm)."""
    v_id = oracle_identity_vector(params, identity_tag)
    if params.sigma == 0:
        return v_id
    u = unit_vector_from_seed(
        hash64(params.seed_namespace, identity_tag, pose_tag, seed_tag), params.dim
    )
    mixed = v_id + params.sigma * u
    return mixed / np.linalg.norm(mixed)


def oracle_embed(records, out_dir, params: OracleParams | None = None) -> EmbeddingMatrix:
    """Embed generated records by reading their sig.* PNG chunks.

    Raises MissingChunkError (naming the file) for images that were not
    produced by the mock backend.
    """
    params = params or OracleParams()
    vectors = []
    image_ids = []
    for rec in records:
        path = os.path.join(out_dir, rec.image_path)
        with open(path, "rb") as fh:
            data = fh.read()
        chunks = read_text_chunks(data)
        missing = [k for k in REQUIRED_CHUNKS if k not in chunks]
        if missing:
            raise MissingChunkError(f"{path}: missing PNG text chunk(s): {', '.join(missing)}")
        vectors.append(
            oracle_view_vector(
                params, chunks["sig.identity"], chunks["sig.pose"], chunks["sig.seed"]
            )
        )
        image_ids.append(rec.image_id)
    if not vectors:
        return build_matrix(np.zeros((0, params.dim)), [], params.model_id())
    return build_matrix(np.stack(vectors), image_ids, params.model_id())


# --- embedding service ----------------------------------------------------


def embed_via_service(records, out_dir, service_url: str, concurrency: int = 4,
                      timeout: float = backend.DEFAULT_TIMEOUT) -> EmbeddingMatrix:
    """POST /v1/embed {"image_b64"} per generated record; bounded fan-out."""
    backend.check_health(service_url)

    def one(rec):
        path = os.path.join(out_dir, rec.image_path)
        with open(path, "rb") as fh:
            payload = {"image_b64": base64.b64encode(fh.read()).decode("ascii")}
        body = backend.http_json(
            service_url.rstrip("/") + "/v1/embed", payload, timeout=timeout
        )
        if not isinstance(body, dict) or "vector" not in body:
            raise ProtocolError(f"embed response missing 'vector' for {rec.image_id}")
        vec = np.asarray(body["vector"], dtype=np.float64)
        if vec.ndim != 1 or vec.size == 0:
            raise ProtocolError(f"embed response vector malformed for {rec.image_id}")
        dim = body.get("dim", vec.size)
        if dim != vec.size:
            raise ProtocolError(
                f"embed response dim {dim} disagrees with vector length {vec.size}"
            )
        return vec, body.get("model_id", "")

    records = list(records)
    if not records:
        return build_matrix(np.zeros((0, DEFAULT_DIM)), [], "")
    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        results = list(pool.map(one, records))
    dims = {vec.size for vec, _ in results}
    if len(dims) > 1:
        raise DimensionMismatchError(f"service returned mixed dimensions: {sorted(dims)}")
    model_ids = {m for _, m in results if m}
    model_id = sorted(model_ids)[0] if model_ids else ""
    return build_matrix(
        np.stack([vec for vec, _ in results]), [r.image_id for r in records], model_id
    )


# --- EMB1 file format -------------------------------------------------------


def index_path(path) -> str:
    return str(path) + ".index.json"


def write_embeddings(matrix: EmbeddingMatrix, path) -> None:
    """Lossless EMB1 + index write; see module docstring for the layout."""
    data = matrix.vectors.astype("<f4", copy=False)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", matrix.dim))
        fh.write(struct.pack("<Q", matrix.count))
        fh.write(data.tobytes(order="C"))
    index_doc = {
        "model_id": matrix.model_id,
        "dim": matrix.dim,
        "count": matrix.count,
        "index": {k: int(v) for k, v in sorted(matrix.index.items())},
    }
    with open(index_path(path), "w", encoding="utf-8") as fh:
        json.dump(index_doc, fh, indent=2, sort_keys=False)
        fh.write("\n")


def read_embeddings(path) -> EmbeddingMatrix:
    """Read + validate an EMB1 file and its companion index."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an EMB1 file (magic {blob[:4]!r})")
    if len(blob) < 16:
        raise TruncatedFileError(f"{path}: header truncated")
    (dim,) = struct.unpack_from("<I", blob, 4)
    (count,) = struct.unpack_from("<Q", blob, 8)
    expected = 16 + 4 * dim * count
    if len(blob) < expected:
        raise TruncatedFileError(
            f"{path}: expected {expected} bytes for {count}x{dim}, have {len(blob)}"
        )
    if len(blob) > expected:
        raise TruncatedFileError(f"{path}: {len(blob) - expected} trailing bytes")
    vectors = np.frombuffer(blob, dtype="<f4", count=dim * count, offset=16).reshape(count, dim)
    vectors = vectors.copy()
    if count:
        # Normalize imported rows that are genuinely unnormalized; rows already
        # unit within tolerance are left bit-identical so round-trips are lossless.
        norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
        if np.any(norms < 1e-12):
            raise ZeroVectorError(f"{path}: contains a (near-)zero vector")
        off = np.abs(norms - 1.0) > UNIT_NORM_TOL
        if np.any(off):
            vectors[off] = (vectors[off].astype(np.float64) / norms[off][:, None]).astype(
                np.float32
            )
    ipath = index_path(path)
    if not os.path.exists(ipath):
        raise IndexMismatchError(f"missing companion index file: {ipath}")
    with open(ipath, encoding="utf-8") as fh:
        doc = json.load(fh)
    index = {str(k): int(v) for k, v in doc.get("index", {}).items()}
    for image_id, row in index.items():
        if not 0 <= row < count:
            raise IndexMismatchError(f"{ipath}: {image_id!r} points at row {row} of {count}")
    if doc.get("dim") not in (None, dim) or doc.get("count") not in (None, count):
        raise IndexMismatchError(f"{ipath}: header disagrees with binary file")
    return EmbeddingMatrix(vectors, index, doc.get("model_id", ""))
