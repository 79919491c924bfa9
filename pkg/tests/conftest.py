import shutil

import pytest

from sig import mockserver, orchestrator
from sig.planner import DatasetConfig, plan_dataset
from sig.pools import load_bundled_pool


@pytest.fixture(scope="session")
def bundled_pool():
    return load_bundled_pool()


@pytest.fixture()
def mock_backend():
    handle = mockserver.serve()
    yield handle
    handle.close()


@pytest.fixture(scope="session")
def tiny_plan(bundled_pool):
    """2 identities x 3 poses: the smallest interesting generation run."""
    config = DatasetConfig(
        races=("African",),
        genders=("Female",),
        ages=(25, 50),
        identities_per_cell=1,
        master_seed=7,
    )
    return config, plan_dataset(config, bundled_pool)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory, bundled_pool):
    """One shared 24-identity end-to-end run (mock generation + oracle
    embeddings) reused by analysis/report/acceptance tests."""
    from sig import embeddings

    out = tmp_path_factory.mktemp("desk_run")
    config = DatasetConfig(identities_per_cell=1, master_seed=42)
    plan = plan_dataset(config, bundled_pool)
    handle = mockserver.serve()
    try:
        assets = orchestrator.placeholder_pose_assets(config.poses)
        settings = orchestrator.GenerationSettings(concurrency=8, steps=4)
        manifest = orchestrator.run_generation(plan, assets, handle.url, str(out), settings)
    finally:
        handle.close()
    records = manifest.generated()
    matrix = embeddings.oracle_embed(records, str(out))
    return {
        "out": str(out),
        "config": config,
        "plan": plan,
        "manifest": manifest,
        "records": records,
        "matrix": matrix,
    }


@pytest.fixture()
def clean_dir(tmp_path):
    yield tmp_path
    shutil.rmtree(tmp_path, ignore_errors=True)
