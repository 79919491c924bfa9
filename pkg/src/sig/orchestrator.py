"""Drive a diffusion backend over the wire to materialize a plan.

Jobs run with bounded parallelism, but manifest records are written by a
single writer in plan order (completed jobs are consumed in submission
order), so an interrupted run leaves a clean prefix and a resumed run
reproduces the exact same manifest as an uninterrupted one. Rerunning is
idempotent: records already ``generated`` are skipped after their image
checksum verifies; ``failed`` records are retried while their cumulative
attempt count stays under the limit.
"""

import logging
import os
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import backend
from .errors import BackendUnreachableError, JobValidationError
from .manifest import (
    STATUS_FAILED,
    STATUS_GENERATED,
    DatasetManifest,
    ManifestRecord,
    ManifestWriter,
    prompt_fingerprint,
    sha256_file,
    sha256_hex,
    utc_now,
)
from .planner import DEFAULT_POSE_PHRASES, DEFAULT_TEMPLATE_TEXT, build_prompt
from .templates import parse_template

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
IMAGES_DIR = "images"


@dataclass(frozen=True)
class PoseAsset:
    """Opaque control images for one pose label, keyed by control type."""

    pose: str
    control_maps: tuple  # of (control_type, png_bytes, sha256_hex)

    @classmethod
    def from_bytes(cls, pose: str, maps: dict) -> "PoseAsset":
        if "openpose" not in maps:
            raise JobValidationError(f"pose asset {pose!r} is missing its openpose map")
        control = tuple(
            (ctype, data, sha256_hex(data)) for ctype, data in sorted(maps.items())
        )
        return cls(pose=pose, control_maps=control)

    @property
    def hashes(self):
        return [h for _, _, h in self.control_maps]

    @property
    def wire_maps(self):
        return [(ctype, data) for ctype, data, _ in self.control_maps]


@dataclass(frozen=True)
class GenerationJob:
    identity_id: str
    pose: str
    positive_prompt: str
    negative_prompt: str
    generation_seed: int
    width: int = 512
    height: int = 512
    steps: int = 30
    guidance: float = 7.0
    control_refs: tuple = ()


@dataclass
class GenerationSettings:
    width: int = 512
    height: int = 512
    steps: int = 30
    guidance: float = 7.0
    concurrency: int = 4
    attempts: int = 3
    retry_base_delay: float = 1.0
    timeout: float = backend.DEFAULT_TIMEOUT
    template_text: str = DEFAULT_TEMPLATE_TEXT
    negative_prompt: str = ""
    pose_phrases: dict = field(default_factory=lambda: dict(DEFAULT_POSE_PHRASES))


def load_pose_assets(paths_by_pose: dict) -> dict:
    """Read pose asset PNGs from disk: {pose: {control_type: path}}."""
    assets = {}
    for pose, type_paths in paths_by_pose.items():
        maps = {}
        for ctype, path in type_paths.items():
            with open(path, "rb") as fh:
                maps[ctype] = fh.read()
        assets[pose] = PoseAsset.from_bytes(pose, maps)
    return assets


def placeholder_pose_assets(poses, size: int = 512) -> dict:
    """Deterministic stand-in control maps for runs without real pose
    extractions (mock-backend workflows). One openpose-style map per pose:
    a head dot and shoulder bar shifted by pose label."""
    import numpy as np

    from . import pngmeta

    assets = {}
    for pose in poses:
        shift = {"left": -size // 8, "right": size // 8}.get(pose, 0)
        canvas = np.zeros((size, size, 3), dtype=np.uint8)
        cx, cy = size // 2 + shift, size // 3
        y, x = np.ogrid[:size, :size]
        head = (x - cx) ** 2 + (y - cy) ** 2 <= (size // 12) ** 2
        canvas[head] = (255, 220, 80)
        canvas[cy + size // 8 : cy + size // 8 + size // 48, size // 4 : 3 * size // 4] = (
            80,
            160,
            255,
        )
        assets[pose] = PoseAsset.from_bytes(pose, {"openpose": pngmeta.write_png(canvas)})
    return assets


def build_job(spec, pose, asset: PoseAsset, settings: GenerationSettings, template) -> GenerationJob:
    bundle = build_prompt(
        spec,
        pose,
        template,
        pose_phrases=settings.pose_phrases,
        negative_prompt=settings.negative_prompt,
    )
    return GenerationJob(
        identity_id=spec.identity_id,
        pose=pose,
        positive_prompt=bundle.positive_prompt,
        negative_prompt=bundle.negative_prompt,
        generation_seed=bundle.generation_seed,
        width=settings.width,
        height=settings.height,
        steps=settings.steps,
        guidance=settings.guidance,
        control_refs=tuple(asset.hashes),
    )


def _attempt_job(job, asset, backend_url, settings, budget):
    """Run one job with up to ``budget`` tries; returns (png, model_id,
    attempts_used) on success, raises the last error (carrying .attempts)
    on failure. The budget keeps cumulative attempts across resumed runs
    under the configured limit."""
    last_exc = None
    for attempt in range(1, budget + 1):
        try:
            png, model_id = backend.generate_image(
                job, backend_url, control_maps=asset.wire_maps, timeout=settings.timeout
            )
            return png, model_id, attempt
        except JobValidationError:
            raise
        except Exception as exc:  # transport, HTTP, protocol: retry with backoff
            last_exc = exc
            if attempt < budget:
                delay = settings.retry_base_delay * (2 ** (attempt - 1))
                delay *= 0.5 + random.random()  # jitter; timing only, not data
                log.warning(
                    "job %s/%s attempt %d failed (%s); retrying in %.2fs",
                    job.identity_id, job.pose, attempt, exc, delay,
                )
                time.sleep(delay)
    last_exc.attempts = budget
    raise last_exc


def _health_check_with_retries(backend_url, settings):
    delay = settings.retry_base_delay
    for attempt in range(1, settings.attempts + 1):
        try:
            return backend.check_health(backend_url)
        except BackendUnreachableError:
            if attempt == settings.attempts:
                raise
            time.sleep(delay * (0.5 + random.random()))
            delay *= 2


def run_generation(
    plan,
    poses: dict,
    backend_url: str,
    out_dir,
    settings: GenerationSettings | None = None,
) -> DatasetManifest:
    """Materialize every (identity, pose) image under out_dir.

    ``poses`` maps pose label -> PoseAsset; pose order follows the dict.
    Returns the manifest view after the run. Raises
    BackendUnreachableError (before touching the manifest) when the
    health check fails; per-job failures become ``failed`` records.
    """
    settings = settings or GenerationSettings()
    template = parse_template(settings.template_text)

    os.makedirs(out_dir, exist_ok=True)
    images_dir = os.path.join(out_dir, IMAGES_DIR)
    os.makedirs(images_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)

    prior = {}
    if os.path.exists(manifest_path):
        prior = DatasetManifest.load(manifest_path).latest()

    jobs = []  # (spec, pose, prior_attempts)
    skipped = 0
    for spec in plan:
        for pose in poses:
            rec = prior.get((spec.identity_id, pose))
            if rec is not None and rec.status == STATUS_GENERATED:
                image_path = os.path.join(out_dir, rec.image_path)
                if os.path.exists(image_path) and sha256_file(image_path) == rec.image_sha256:
                    skipped += 1
                    continue
                log.warning(
                    "record %s/%s says generated but image is missing or altered; regenerating",
                    spec.identity_id, pose,
                )
                jobs.append((spec, pose, rec.attempts))
            elif rec is not None and rec.status == STATUS_FAILED:
                if rec.attempts >= settings.attempts:
                    log.warning(
                        "record %s/%s exhausted its %d attempts; leaving failed "
                        "(raise the attempt limit to retry)",
                        spec.identity_id, pose, rec.attempts,
                    )
                    skipped += 1
                    continue
                jobs.append((spec, pose, rec.attempts))
            else:
                jobs.append((spec, pose, 0))

    log.info("run: %d jobs to execute, %d already satisfied", len(jobs), skipped)
    if not jobs:
        # fully satisfied: no backend traffic, manifest file untouched
        return DatasetManifest.load(manifest_path) if os.path.exists(manifest_path) else DatasetManifest()

    model_hint = _health_check_with_retries(backend_url, settings)
    log.info("backend healthy: %s", model_hint)

    with ManifestWriter(manifest_path) as writer:
        executor = ThreadPoolExecutor(max_workers=max(1, settings.concurrency))
        try:
            futures = []
            for spec, pose, prior_attempts in jobs:
                job = build_job(spec, pose, poses[pose], settings, template)
                budget = max(1, settings.attempts - prior_attempts)
                fut = executor.submit(
                    _attempt_job, job, poses[pose], backend_url, settings, budget
                )
                futures.append((spec, pose, job, prior_attempts, fut))
            # single writer consumes results in plan order
            for spec, pose, job, prior_attempts, fut in futures:
                base = ManifestRecord(
                    identity_id=spec.identity_id,
                    pose=pose,
                    demographics={
                        "race": spec.demographics.race,
                        "gender": spec.demographics.gender,
                        "age": spec.demographics.age,
                    },
                    triplet_key=spec.triplet.canonical_key,
                    prompt_sha256=prompt_fingerprint(
                        job.positive_prompt, job.negative_prompt
                    ),
                    generation_seed=job.generation_seed,
                    created_at=utc_now(),
                )
                try:
                    png, model_id, attempts = fut.result()
                except JobValidationError:
                    raise
                except Exception as exc:
                    base.status = STATUS_FAILED
                    base.attempts = prior_attempts + getattr(exc, "attempts", settings.attempts)
                    base.model_id = ""
                    base.updated_at = utc_now()
                    writer.append(base)
                    log.error("job %s/%s failed permanently: %s", spec.identity_id, pose, exc)
                    continue
                filename = f"{spec.identity_id}_{pose}.png"
                rel_path = os.path.join(IMAGES_DIR, filename)
                final_path = os.path.join(images_dir, filename)
                tmp_path = final_path + ".tmp"
                with open(tmp_path, "wb") as fh:  # disk errors are fatal by design
                    fh.write(png)
                os.replace(tmp_path, final_path)
                base.status = STATUS_GENERATED
                base.attempts = prior_attempts + attempts
                base.model_id = model_id
                base.image_path = rel_path
                base.image_sha256 = sha256_hex(png)
                base.updated_at = utc_now()
                writer.append(base)
        except BaseException:
            # interrupted or fatal: stop scheduling, keep the prefix written so far
            executor.shutdown(wait=False, cancel_futures=True)
            raise
        executor.shutdown(wait=True)

    return DatasetManifest.load(manifest_path)


def verify_manifest(manifest: DatasetManifest, out_dir) -> dict:
    """Pure audit of latest records: {image_id: 'ok'|'missing'|'checksum_mismatch'}.

    Only ``generated`` records are checked; mutates nothing.
    """
    report = {}
    for rec in manifest.latest().values():
        if rec.status != STATUS_GENERATED:
            continue
        path = os.path.join(out_dir, rec.image_path)
        if not os.path.exists(path):
            report[rec.image_id] = "missing"
        elif sha256_file(path) != rec.image_sha256:
            report[rec.image_id] = "checksum_mismatch"
        else:
            report[rec.image_id] = "ok"
    return report


def count_pending(plan, poses, out_dir, attempts_limit=3) -> int:
    """Dry-run helper: jobs a run would execute, with zero network calls."""
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    prior = {}
    if os.path.exists(manifest_path):
        prior = DatasetManifest.load(manifest_path).latest()
    pending = 0
    for spec in plan:
        for pose in poses:
            rec = prior.get((spec.identity_id, pose))
            if rec is not None and rec.status == STATUS_GENERATED:
                image_path = os.path.join(out_dir, rec.image_path)
                if os.path.exists(image_path) and sha256_file(image_path) == rec.image_sha256:
                    continue
            if rec is not None and rec.status == STATUS_FAILED and rec.attempts >= attempts_limit:
                continue
            pending += 1
    return pending
