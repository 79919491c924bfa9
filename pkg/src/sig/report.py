"""Assemble analysis outputs into a machine- and human-readable bundle.

One ``DatasetAnalysis`` per configured dataset (the generated set plus any
imported manifest/embedding pairs) flows through the identical path; the
bundle contains:

* ``report.json`` (schema ``report_version: 1``): per-dataset group
  summaries (normalized score and raw cosine), pair counts, consistency
  report, heatmap, warnings, and a KS table comparing datasets per group
  and race pairs within each dataset;
* ``density_<race>.csv``: header ``grid,<group1>,...``, one non-mated
  density column per dataset on a shared grid;
* ``density_<race>.svg`` line plots and ``heatmap_<dataset>.svg``.
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import svgplot
from .analysis import (
    PairPolicy,
    build_pairs,
    compare_distributions,
    identity_consistency_report,
    kde,
    race_heatmap,
    score_pairs,
    silverman_bandwidth,
)
from .errors import EmptyCellError
from .manifest import utc_now
from .pools import RACES

REPORT_VERSION = 1


@dataclass
class DatasetAnalysis:
    name: str
    distributions: dict           # group -> ScoreDistribution
    heatmap: object | None
    consistency: object
    pair_counts: dict
    warnings: list = field(default_factory=list)


def analyze_dataset(
    name,
    records,
    matrix,
    policy: PairPolicy | None = None,
    seed: int = 0,
    consistency_threshold: float = 0.6,
) -> DatasetAnalysis:
    """Run the full pair/score/heatmap/consistency protocol on one dataset."""
    policy = policy or PairPolicy()
    pairs = build_pairs(records, policy, seed)
    distributions = score_pairs(pairs, matrix)
    warnings = list(pairs.warnings)
    try:
        heatmap = race_heatmap(records, matrix, policy, seed)
    except EmptyCellError as exc:
        heatmap = None
        warnings.append(f"heatmap skipped: {exc}")
    consistency = identity_consistency_report(records, matrix, threshold=consistency_threshold)
    warnings.extend(consistency.warnings)
    return DatasetAnalysis(
        name=name,
        distributions=distributions,
        heatmap=heatmap,
        consistency=consistency,
        pair_counts={
            "mated": len(pairs.mated),
            "nonmated": len(pairs.nonmated),
        },
        warnings=warnings,
    )


def _group_payload(dist) -> dict:
    summary = dict(dist.summary)
    scores = np.asarray(dist.scores, dtype=np.float64)
    if scores.size:
        cosines = 2.0 * scores - 1.0
        summary["cosine_mean"] = float(np.mean(cosines))
        summary["cosine_std"] = float(np.std(cosines, ddof=1)) if scores.size > 1 else 0.0
    else:
        summary["cosine_mean"] = None
        summary["cosine_std"] = None
    return summary


def _shared_grid(samples, bandwidth):
    """One grid wide and fine enough for every sample's KDE."""
    usable = [np.asarray(s, dtype=np.float64) for s in samples if len(s) >= 2]
    if not usable:
        return None
    hs = [bandwidth
          if bandwidth is not None else silverman_bandwidth(s) for s in usable]
    lo = min(float(s.min()) for s in usable) - 5.0 * max(hs)
    hi = max(float(s.max()) for s in usable) + 5.0 * max(hs)
    n = max(512, int(math.ceil((hi - lo) / (min(hs) / 3.0))) + 1)
    return lo, hi, n


def _ks_table(analyses, groups) -> list:
    """Dataset-vs-dataset comparisons per group, then race-vs-race within
    each dataset; entries are skipped when a side is empty."""
    table = []
    for group in groups:
        for i in range(len(analyses)):
            for j in range(i + 1, len(analyses)):
                a = analyses[i].distributions.get(group)
                b = analyses[j].distributions.get(group)
                if a is None or b is None or not len(a.scores) or not len(b.scores):
                    continue
                row = {
                    "group": group,
                    "a": analyses[i].name,
                    "b": analyses[j].name,
                }
                row.update(compare_distributions(a.scores, b.scores))
                table.append(row)
    for analysis in analyses:
        race_groups = [r for r in RACES if r in analysis.distributions
                       and len(analysis.distributions[r].scores)]
        for i in range(len(race_groups)):
            for j in range(i + 1, len(race_groups)):
                row = {
                    "group": f"{race_groups[i]} vs {race_groups[j]}",
                    "a": analysis.name,
                    "b": analysis.name,
                }
                row.update(
                    compare_distributions(
                        analysis.distributions[race_groups[i]].scores,
                        analysis.distributions[race_groups[j]].scores,
                    )
                )
                table.append(row)
    return table


def emit_report(analyses, out_dir, kde_bandwidth: float | None = None) -> dict:
    """Write the report bundle; returns {artifact kind: [paths]}.

    ``analyses`` is a non-empty list of DatasetAnalysis; the first one is
    considered the primary dataset. Empty groups are noted, not fatal.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = {"json": [], "csv": [], "svg": []}

    datasets_payload = {}
    for analysis in analyses:
        datasets_payload[analysis.name] = {
            "groups": {
                group: _group_payload(dist)
                for group, dist in sorted(analysis.distributions.items())
            },
            "pair_counts": analysis.pair_counts,
            "consistency": {
                "threshold": analysis.consistency.threshold,
                "flagged": analysis.consistency.flagged,
                "flag_rate": (
                    len(analysis.consistency.flagged) / len(analysis.consistency.per_identity)
                    if analysis.consistency.per_identity
                    else None
                ),
                "aggregate": _group_payload(analysis.consistency.aggregate),
                "per_identity": analysis.consistency.per_identity,
            },
            "heatmap": analysis.heatmap.to_json_dict() if analysis.heatmap else None,
            "warnings": analysis.warnings,
        }

    report = {
        "report_version": REPORT_VERSION,
        "generated_at": utc_now(),
        "datasets": datasets_payload,
        "ks_table": _ks_table(analyses, list(RACES) + ["all", "mated"]),
    }
    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    written["json"].append(report_path)

    # densities: one CSV + SVG per race, datasets as columns/series
    for race in RACES:
        series = []
        samples = []
        for analysis in analyses:
            dist = analysis.distributions.get(race)
            if dist is not None and len(dist.scores) >= 2:
                samples.append(dist.scores)
        grid_spec = _shared_grid(samples, kde_bandwidth)
        if grid_spec is None:
            continue
        columns = {}
        for analysis in analyses:
            dist = analysis.distributions.get(race)
            if dist is None or len(dist.scores) < 2:
                continue
            grid, dens = kde(dist.scores, bandwidth=kde_bandwidth, grid=grid_spec)
            columns[analysis.name] = dens
            series.append((analysis.name, grid, dens))
        if not columns:
            continue
        grid = np.linspace(grid_spec[0], grid_spec[1], int(grid_spec[2]))
        csv_path = os.path.join(out_dir, f"density_{race}.csv")
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("grid," + ",".join(columns) + "\n")
            for row_idx in range(grid.size):
                vals = ",".join(f"{columns[name][row_idx]:.9g}" for name in columns)
                fh.write(f"{grid[row_idx]:.9g},{vals}\n")
        written["csv"].append(csv_path)
        svg_path = os.path.join(out_dir, f"density_{race}.svg")
        with open(svg_path, "w", encoding="utf-8") as fh:
            fh.write(
                svgplot.line_chart(
                    series,
                    title=f"Non-mated score density: {race}",
                    xlabel="similarity score",
                    ylabel="density",
                )
            )
        written["svg"].append(svg_path)

    for analysis in analyses:
        if analysis.heatmap is None:
            continue
        hm = analysis.heatmap.to_json_dict()
        svg_path = os.path.join(out_dir, f"heatmap_{analysis.name}.svg")
        with open(svg_path, "w", encoding="utf-8") as fh:
            fh.write(
                svgplot.heatmap_chart(
                    hm["races"],
                    hm["means"],
                    hm["counts"],
                    title=f"Mean non-mated score by race pair: {analysis.name}",
                )
            )
        written["svg"].append(svg_path)
    return written
