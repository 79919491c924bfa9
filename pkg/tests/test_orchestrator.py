import json

import pytest

import sig.backend
import sig.errors
from sig import orchestrator
from sig.errors import BackendUnreachableError, JobValidationError
from sig.manifest import DatasetManifest
from sig.orchestrator import (
    GenerationSettings,
    PoseAsset,
    placeholder_pose_assets,
    run_generation,
    verify_manifest,
)


def fast_settings(**kw):
    defaults = dict(concurrency=4, steps=2, retry_base_delay=0.01, attempts=3)
    defaults.update(kw)
    return GenerationSettings(**defaults)


def manifest_fingerprint(manifest: DatasetManifest):
    """Everything but timestamps, in file order."""
    return [json.loads(r.without_timestamps().to_json_line()) for r in manifest.records]


def test_end_to_end_two_identities(tiny_plan, mock_backend, tmp_path):
    config, plan = tiny_plan
    assets = placeholder_pose_assets(config.poses)
    manifest = run_generation(plan, assets, mock_backend.url, tmp_path, fast_settings())
    generated = manifest.generated()
    assert len(generated) == 6
    for rec in generated:
        path = tmp_path / rec.image_path
        assert path.exists()
        assert rec.image_sha256
        assert rec.model_id == "mock-diffusion-0"
    pngs = list((tmp_path / "images").glob("*.png"))
    assert len(pngs) == 6
    assert verify_manifest(manifest, tmp_path) == {r.image_id: "ok" for r in generated}


def test_rerun_is_idempotent_with_zero_backend_calls(tiny_plan, mock_backend, tmp_path):
    config, plan = tiny_plan
    assets = placeholder_pose_assets(config.poses)
    first = run_generation(plan, assets, mock_backend.url, tmp_path, fast_settings())
    calls_after_first = mock_backend.request_count
    manifest_bytes = (tmp_path / "manifest.jsonl").read_bytes()

    second = run_generation(plan, assets, mock_backend.url, tmp_path, fast_settings())
    assert mock_backend.request_count == calls_after_first
    assert (tmp_path / "manifest.jsonl").read_bytes() == manifest_bytes
    assert manifest_fingerprint(first) == manifest_fingerprint(second)


def test_backend_down_leaves_manifest_untouched(tiny_plan, tmp_path):
    config, plan = tiny_plan
    assets = placeholder_pose_assets(config.poses)
    with pytest.raises(BackendUnreachableError):
        run_generation(
            plan, assets, "http://127.0.0.1:9", tmp_path,
            fast_settings(attempts=2, timeout=0.5),
        )
    assert not (tmp_path / "manifest.jsonl").exists()


def test_kill_and_resume_matches_uninterrupted_run(tiny_plan, mock_backend, tmp_path, monkeypatch):
    config, plan = tiny_plan
    assets = placeholder_pose_assets(config.poses)

    run_a = tmp_path / "uninterrupted"
    manifest_a = run_generation(plan, assets, mock_backend.url, run_a, fast_settings())

    run_b = tmp_path / "interrupted"
    real_generate = sig.backend.generate_image
    state = {"successes": 0}

    def flaky(job, url, **kw):
        if state["successes"] >= 3:
            raise KeyboardInterrupt()
        result = real_generate(job, url, **kw)
        state["successes"] += 1
        return result

    monkeypatch.setattr(orchestrator.backend, "generate_image", flaky)
    with pytest.raises(KeyboardInterrupt):
        run_generation(plan, assets, mock_backend.url, run_b, fast_settings(concurrency=1))
    monkeypatch.setattr(orchestrator.backend, "generate_image", real_generate)

    partial = DatasetManifest.load(run_b / "manifest.jsonl")
    assert 0 < len(partial.records) < 6

    manifest_b = run_generation(plan, assets, mock_backend.url, run_b, fast_settings())
    assert manifest_fingerprint(manifest_a) == manifest_fingerprint(manifest_b)
    # deterministic backend: checksums identical file by file
    sums_a = {r.image_id: r.image_sha256 for r in manifest_a.generated()}
    sums_b = {r.image_id: r.image_sha256 for r in manifest_b.generated()}
    assert sums_a == sums_b
    assert verify_manifest(manifest_b, run_b) == {i: "ok" for i in sums_b}


def test_failed_jobs_recorded_not_fatal(tiny_plan, mock_backend, tmp_path, monkeypatch):
    config, plan = tiny_plan
    assets = placeholder_pose_assets(config.poses)
    real_generate = sig.backend.generate_image

    def fail_one(job, url, **kw):
        if job.identity_id == plan[0].identity_id and job.pose == "front":
            raise sig.errors.RequestFailedError("injected failure", status=500)
        return real_generate(job, url, **kw)

    monkeypatch.setattr(orchestrator.backend, "generate_image", fail_one)
    manifest = run_generation(plan, assets, mock_backend.url, tmp_path, fast_settings())
    latest = manifest.latest()
    failed = [r for r in latest.values() if r.status == "failed"]
    assert len(failed) == 1
    assert failed[0].pose == "front"
    assert failed[0].attempts == 3
    assert len(manifest.generated()) == 5

    # exhausted attempts: rerun leaves it failed without retrying
    monkeypatch.setattr(orchestrator.backend, "generate_image", real_generate)
    calls_before = mock_backend.request_count
    again = run_generation(plan, assets, mock_backend.url, tmp_path, fast_settings())
    assert mock_backend.request_count == calls_before
    assert len(again.generated()) == 5

    # raising the limit lets the rerun repair it
    repaired = run_generation(
        plan, assets, mock_backend.url, tmp_path, fast_settings(attempts=4)
    )
    assert len(repaired.generated()) == 6
    fixed = repaired.latest()[(plan[0].identity_id, "front")]
    assert fixed.attempts == 4  # cumulative across runs


def test_cumulative_attempts_capped_at_limit(tiny_plan, mock_backend, tmp_path, monkeypatch):
    """A resumed run's retries must not push cumulative attempts past the
    limit: prior failed attempts count against the budget."""
    config, plan = tiny_plan
    assets = placeholder_pose_assets(config.poses)

    def always_fail(job, url, **kw):
        raise ConnectionError("backend keeps failing")

    monkeypatch.setattr(orchestrator.backend, "generate_image", always_fail)
    # first run: every job burns 2 of the 3 allowed attempts
    run_generation(
        plan, assets, mock_backend.url, tmp_path, fast_settings(attempts=2)
    )
    first = DatasetManifest.load(tmp_path / "manifest.jsonl").latest()
    assert all(r.status == "failed" and r.attempts == 2 for r in first.values())

    # resume with limit 3: only one more try each, cumulative exactly 3
    run_generation(
        plan, assets, mock_backend.url, tmp_path, fast_settings(attempts=3)
    )
    second = DatasetManifest.load(tmp_path / "manifest.jsonl").latest()
    assert all(r.status == "failed" and r.attempts == 3 for r in second.values())


def test_transient_failure_retried_within_run(tiny_plan, mock_backend, tmp_path, monkeypatch):
    config, plan = tiny_plan
    assets = placeholder_pose_assets(config.poses)
    real_generate = sig.backend.generate_image
    flaky_state = {"failures_left": 2}

    def flaky(job, url, **kw):
        if flaky_state["failures_left"] > 0:
            flaky_state["failures_left"] -= 1
            raise ConnectionError("transient")
        return real_generate(job, url, **kw)

    monkeypatch.setattr(orchestrator.backend, "generate_image", flaky)
    manifest = run_generation(
        plan, assets, mock_backend.url, tmp_path, fast_settings(concurrency=1)
    )
    assert len(manifest.generated()) == 6
    assert manifest.records[0].attempts == 3  # two failures then success


def test_verify_manifest_missing_and_corrupt(tiny_plan, mock_backend, tmp_path):
    config, plan = tiny_plan
    assets = placeholder_pose_assets(config.poses)
    manifest = run_generation(plan, assets, mock_backend.url, tmp_path, fast_settings())
    recs = manifest.generated()

    victim_missing = tmp_path / recs[0].image_path
    victim_missing.unlink()

    victim_flip = tmp_path / recs[1].image_path
    blob = bytearray(victim_flip.read_bytes())
    blob[-20] ^= 0x01
    victim_flip.write_bytes(bytes(blob))

    audit = verify_manifest(manifest, tmp_path)
    assert audit[recs[0].image_id] == "missing"
    assert audit[recs[1].image_id] == "checksum_mismatch"
    assert all(v == "ok" for k, v in audit.items() if k not in (recs[0].image_id, recs[1].image_id))


def test_regenerates_when_image_tampered_or_deleted(tiny_plan, mock_backend, tmp_path):
    config, plan = tiny_plan
    assets = placeholder_pose_assets(config.poses)
    manifest = run_generation(plan, assets, mock_backend.url, tmp_path, fast_settings())
    recs = manifest.generated()
    (tmp_path / recs[0].image_path).write_bytes(b"\x89PNG garbage")
    (tmp_path / recs[1].image_path).unlink()

    repaired = run_generation(plan, assets, mock_backend.url, tmp_path, fast_settings())
    audit = verify_manifest(repaired, tmp_path)
    assert audit[recs[0].image_id] == "ok"
    assert audit[recs[1].image_id] == "ok"


def test_in_flight_requests_bounded_by_concurrency(tiny_plan, mock_backend, tmp_path, monkeypatch):
    import threading
    import time

    config, plan = tiny_plan
    assets = placeholder_pose_assets(config.poses)
    real = sig.backend.generate_image
    gauge = {"now": 0, "peak": 0}
    lock = threading.Lock()

    def tracked(job, url, **kw):
        with lock:
            gauge["now"] += 1
            gauge["peak"] = max(gauge["peak"], gauge["now"])
        time.sleep(0.02)  # hold the slot long enough to overlap
        try:
            return real(job, url, **kw)
        finally:
            with lock:
                gauge["now"] -= 1

    monkeypatch.setattr(orchestrator.backend, "generate_image", tracked)
    run_generation(plan, assets, mock_backend.url, tmp_path, fast_settings(concurrency=2))
    assert 1 <= gauge["peak"] <= 2


def test_pose_asset_requires_openpose():
    with pytest.raises(JobValidationError):
        PoseAsset.from_bytes("front", {"lineart": b"data"})


def test_records_never_regress_from_generated(tiny_plan, mock_backend, tmp_path):
    config, plan = tiny_plan
    assets = placeholder_pose_assets(config.poses)
    run_generation(plan, assets, mock_backend.url, tmp_path, fast_settings())
    run_generation(plan, assets, mock_backend.url, tmp_path, fast_settings())
    manifest = DatasetManifest.load(tmp_path / "manifest.jsonl")
    seen = {}
    for rec in manifest.records:
        if seen.get(rec.key) == "generated":
            assert rec.status == "generated"
        seen[rec.key] = rec.status


def test_count_pending_dry_run(tiny_plan, mock_backend, tmp_path):
    config, plan = tiny_plan
    assets = placeholder_pose_assets(config.poses)
    assert orchestrator.count_pending(plan, assets, tmp_path) == 6
    run_generation(plan, assets, mock_backend.url, tmp_path, fast_settings())
    assert orchestrator.count_pending(plan, assets, tmp_path) == 0
