import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from sig.analysis import PairPolicy, trapezoid
from sig.pools import RACES
from sig.report import analyze_dataset, emit_report

from helpers import make_records, oracle_matrix


@pytest.fixture()
def desk_analysis(desk_run):
    return analyze_dataset(
        "generated", desk_run["records"], desk_run["matrix"], PairPolicy(), seed=17
    )


@pytest.fixture()
def bundle(desk_analysis, tmp_path):
    written = emit_report([desk_analysis], tmp_path)
    return tmp_path, written


def test_full_oracle_run_bundle_contents(bundle):
    out, written = bundle
    assert len(written["csv"]) == 4  # one density CSV per race
    assert (out / "report.json").exists()
    assert (out / "heatmap_generated.svg").exists()
    for race in RACES:
        assert (out / f"density_{race}.csv").exists()
        assert (out / f"density_{race}.svg").exists()


def test_report_json_schema(bundle):
    out, _ = bundle
    doc = json.loads((out / "report.json").read_text())
    assert doc["report_version"] == 1
    ds = doc["datasets"]["generated"]
    assert ds["pair_counts"]["mated"] == 72
    groups = ds["groups"]
    for race in RACES:
        assert groups[race]["n"] > 0
        assert 0.0 <= groups[race]["mean"] <= 1.0
        assert "cosine_mean" in groups[race]
    assert groups["mated"]["mean"] > 0.9
    hm = ds["heatmap"]
    assert hm["races"] == list(RACES)
    assert len(hm["means"]) == 4 and len(hm["means"][0]) == 4
    # raw cosine emitted alongside normalized score
    assert groups["all"]["cosine_mean"] == pytest.approx(
         2 * groups["all"]["mean"] - 1, abs=1e-9
    )
    cons = ds["consistency"]
    assert cons["threshold"] == 0.6
    assert cons["flagged"] == []
    assert cons["flag_rate"] == 0.0


def test_density_csv_shape_and_mass(bundle):
    out, _ = bundle
    for race in RACES:
        with open(out / f"density_{race}.csv") as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], rows[1:]
        assert header[0] == "grid"
        assert header[1:] == ["generated"]
        grid = np.array([float(r[0]) for r in data])
        dens = np.array([float(r[1]) for r in data])
        assert np.all(np.diff(grid) > 0)
        assert abs(trapezoid(dens, grid) - 1.0) <= 1e-3


def test_svgs_are_wellformed_xml(bundle):
    out, written = bundle
    for path in written["svg"]:
        root = ET.parse(path).getroot()
        assert root.tag.endswith("svg")
        text = open(path).read()
        assert "http://" not in text.replace("http://www.w3.org/", "")  # self-contained


def test_two_datasets_flow_through_identical_path(tmp_path):
    # external-dataset parity: a second manifest+matrix joins the same report
    rec_a = make_records(30, poses=("front",))
    rec_b = make_records(40, poses=("front",))
    mat_a = oracle_matrix(rec_a, sigma=0.2)
    mat_b = oracle_matrix(rec_b, sigma=0.3)
    analyses = [
        analyze_dataset("generated", rec_a, mat_a, PairPolicy(cap_per_race=500), seed=1),
        analyze_dataset("imported", rec_b, mat_b, PairPolicy(cap_per_race=500), seed=1),
    ]
    written = emit_report(analyses, tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert set(doc["datasets"]) == {"generated", "imported"}
    # dataset-vs-dataset KS rows exist for every race
    cross = [row for row in doc["ks_table"] if row["a"] == "generated" and row["b"] == "imported"]
    assert {row["group"] for row in cross} >= set(RACES)
    for row in cross:
        assert 0.0 <= row["ks_stat"] <= 1.0
        assert row["overlap_coefficient"] is None or 0.0 <= row["overlap_coefficient"] <= 1.05
    # CSVs gain one density column per dataset
    with open(tmp_path / "density_African.csv") as fh:
        header = fh.readline().strip().split(",")
    assert header == ["grid", "generated", "imported"]
    assert (tmp_path / "heatmap_generated.svg").exists()
    assert (tmp_path / "heatmap_imported.svg").exists()


def test_empty_groups_noted_not_fatal(tmp_path):
    records = make_records(1, races=("Asian",), poses=("front",))  # no pairs at all
    matrix = oracle_matrix(records)
    analysis = analyze_dataset("generated", records, matrix, PairPolicy(), seed=1)
    written = emit_report([analysis], tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text())
    ds = doc["datasets"]["generated"]
    assert ds["pair_counts"]["nonmated"] == 0
    assert ds["groups"]["all"]["n"] == 0
    assert any("Asian" in w for w in ds["warnings"])
    assert written["csv"] == []  # nothing to densify


def test_unwritable_out_dir_is_fatal(desk_analysis, tmp_path):
    # a file where a directory must go fails makedirs for any uid
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    with pytest.raises(OSError):
        emit_report([desk_analysis], blocker / "nested")


def test_ks_table_race_pairs_within_dataset(bundle):
    out, _ = bundle
    doc = json.loads((out / "report.json").read_text())
    within = [row for row in doc["ks_table"] if row["a"] == row["b"] == "generated"]
    assert within, "expected race-vs-race comparisons inside one dataset"
    labels = {row["group"] for row in within}
    assert "African vs Asian" in labels
