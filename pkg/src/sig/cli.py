"""Single entry point: plan, generate, embed, analyze, pool-stats, mock-serve.

Driven by one JSON config file; per-command flags override config values,
and the SIG_BACKEND_URL environment variable is the fallback backend URL.
Logs go to stderr, artifacts to disk; stdout stays silent except for the
pool-stats table. Exit code 0 on success, 2 with a one-line
``error: <code>: <message>`` on failure.
"""

import argparse
import json
import logging
import os
import sys

from . import embeddings, mockserver, orchestrator, report
from .analysis import PairPolicy
from .errors import ConfigError, MissingInputError, SigError
from .manifest import DatasetManifest
from .orchestrator import GenerationSettings
from .planner import (
    DEFAULT_TEMPLATE_TEXT,
    AttributeVocab,
    DatasetConfig,
    plan_dataset,
    read_plan,
    write_plan,
)
from .pools import load_bundled_pool, load_pool

log = logging.getLogger("sig")

PLAN_NAME = "plan.jsonl"
EMB_NAME = "embeddings.emb1"
REPORT_DIR = "report"

EMBED_SOURCES = ("oracle", "service", "file")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise MissingInputError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config {path} is not valid JSON: {exc}"])


def _dataset_config(cfg: dict, seed_override=None) -> DatasetConfig:
    d = cfg.get("dataset", {})
    vocab_cfg = d.get("attribute_vocab", {})
    vocab = AttributeVocab(
        backgrounds=tuple(vocab_cfg.get("backgrounds", AttributeVocab.backgrounds)),
        hairstyles=tuple(vocab_cfg.get("hairstyles", AttributeVocab.hairstyles)),
        expressions=tuple(vocab_cfg.get("expressions", AttributeVocab.expressions)),
    )
    template_text = d.get("template_text", DEFAULT_TEMPLATE_TEXT)
    if d.get("template_path"):
        try:
            with open(d["template_path"], encoding="utf-8") as fh:
                template_text = fh.read().strip("\n")
        except FileNotFoundError:
            raise MissingInputError(f"template file not found: {d['template_path']}")
    config = DatasetConfig(
        races=tuple(d.get("races", DatasetConfig.races)),
        genders=tuple(d.get("genders", DatasetConfig.genders)),
        ages=tuple(d.get("ages", DatasetConfig.ages)),
        poses=tuple(d.get("poses", DatasetConfig.poses)),
        identities_per_cell=d.get("identities_per_cell", 1),
        master_seed=seed_override if seed_override is not None else d.get("master_seed", 0),
        template_id=d.get("template_id", "default"),
        template_text=template_text,
        negative_prompt=d.get("negative_prompt", ""),
        attribute_vocab=vocab,
        pose_phrases=dict(d.get("pose_phrases", DatasetConfig().pose_phrases)),
        cross_race=bool(d.get("cross_race", False)),
    )
    return config


def _pool(cfg, args):
    path = getattr(args, "pool", None) or cfg.get("pool")
    if path:
        try:
            return load_pool(path)
        except FileNotFoundError:
            raise MissingInputError(f"pool file not found: {path}")
    return load_bundled_pool()


def _out_dir(cfg, args) -> str:
    out = getattr(args, "out", None) or cfg.get("out_dir")
    if not out:
        raise ConfigError(["no output directory: set out_dir in config or pass --out"])
    return out


def _backend_url(cfg, args) -> str:
    url = (
        getattr(args, "backend_url", None)
        or cfg.get("generation", {}).get("backend_url")
        or os.environ.get("SIG_BACKEND_URL")
    )
    if not url:
        raise ConfigError(
            ["no backend URL: pass --backend-url, set generation.backend_url, "
             "or export SIG_BACKEND_URL"]
        )
    return url


def _settings(cfg, args, config: DatasetConfig) -> GenerationSettings:
    g = cfg.get("generation", {})
    return GenerationSettings(
        width=g.get("width", 512),
        height=g.get("height", 512),
        steps=g.get("steps", 30),
        guidance=g.get("guidance", 7.0),
        concurrency=getattr(args, "concurrency", None) or g.get("concurrency", 4),
        attempts=g.get("attempts", 3),
        retry_base_delay=g.get("retry_base_delay", 1.0),
        timeout=g.get("timeout", 120.0),
        template_text=config.template_text,
        negative_prompt=config.negative_prompt,
        pose_phrases=config.pose_phrases,
    )


def _pose_assets(cfg, config: DatasetConfig):
    g = cfg.get("generation", {})
    spec = g.get("pose_assets", "builtin")
    if spec == "builtin":
        return orchestrator.placeholder_pose_assets(config.poses, size=g.get("width", 512))
    if not isinstance(spec, dict):
        raise ConfigError(["generation.pose_assets must be 'builtin' or {pose: {type: path}}"])
    missing = [p for p in config.poses if p not in spec]
    if missing:
        raise ConfigError([f"generation.pose_assets missing pose(s): {', '.join(missing)}"])
    return orchestrator.load_pose_assets({p: spec[p] for p in config.poses})


def _embed_source(cfg) -> tuple:
    e = cfg.get("embedding", {})
    source = e.get("source", "oracle")
    if source not in EMBED_SOURCES:
        raise ConfigError([f"embedding.source must be one of {EMBED_SOURCES}, got {source!r}"])
    return source, e


def _require_file(path, hint) -> str:
    if not os.path.exists(path):
        raise MissingInputError(f"{path} does not exist; {hint}")
    return path


# --- commands ---------------------------------------------------------------


def cmd_plan(args) -> int:
    cfg = _load_config(args.config)
    config = _dataset_config(cfg, seed_override=args.seed)
    pool = _pool(cfg, args)
    out_dir = _out_dir(cfg, args)
    os.makedirs(out_dir, exist_ok=True)
    specs = plan_dataset(config, pool)
    plan_path = os.path.join(out_dir, PLAN_NAME)
    write_plan(specs, plan_path)
    log.info("planned %d identities (%d images with %d poses) -> %s",
             len(specs), len(specs) * len(config.poses), len(config.poses), plan_path)
    return 0


def cmd_generate(args) -> int:
    cfg = _load_config(args.config)
    config = _dataset_config(cfg, seed_override=args.seed)
    out_dir = _out_dir(cfg, args)
    plan_path = _require_file(
        os.path.join(out_dir, PLAN_NAME), "run `sig plan` first"
    )
    plan = read_plan(plan_path)
    assets = _pose_assets(cfg, config)
    settings = _settings(cfg, args, config)
    if args.dry_run:
        pending = orchestrator.count_pending(plan, assets, out_dir, settings.attempts)
        log.info("dry-run: %d job(s) would run (%d identities x %d poses)",
                 pending, len(plan), len(assets))
        return 0
    backend_url = _backend_url(cfg, args)
    manifest = orchestrator.run_generation(plan, assets, backend_url, out_dir, settings)
    status = {}
    for rec in manifest.latest().values():
        status[rec.status] = status.get(rec.status, 0) + 1
    log.info("generation finished: %s", status)
    return 0


def cmd_embed(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _out_dir(cfg, args)
    manifest_path = _require_file(
        os.path.join(out_dir, orchestrator.MANIFEST_NAME), "run `sig generate` first"
    )
    manifest = DatasetManifest.load(manifest_path)
    records = manifest.generated()
    source, e = _embed_source(cfg)
    if source == "oracle":
        params_cfg = e.get("params", {})
        try:
            params = embeddings.OracleParams(
                dim=params_cfg.get("dim", embeddings.DEFAULT_DIM),
                sigma=params_cfg.get("sigma", 0.25),
                seed_namespace=params_cfg.get("seed_namespace", "sig-oracle"),
            )
        except ValueError as exc:
            raise ConfigError([f"embedding.params: {exc}"])
        matrix = embeddings.oracle_embed(records, out_dir, params)
    elif source == "service":
        url = e.get("service_url") or _backend_url(cfg, args)
        matrix = embeddings.embed_via_service(
            records, out_dir, url, concurrency=e.get("concurrency", 4)
        )
    else:  # file
        src = e.get("file")
        if not src:
            raise ConfigError(["embedding.source is 'file' but embedding.file is not set"])
        matrix = embeddings.read_embeddings(_require_file(src, "embedding file is configured"))
    emb_path = os.path.join(out_dir, EMB_NAME)
    embeddings.write_embeddings(matrix, emb_path)
    log.info("embedded %d images (dim %d, model %s) -> %s",
             matrix.count, matrix.dim, matrix.model_id or "?", emb_path)
    return 0


def cmd_analyze(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _out_dir(cfg, args)
    manifest_path = _require_file(
        os.path.join(out_dir, orchestrator.MANIFEST_NAME), "run `sig generate` first"
    )
    emb_path = _require_file(
        os.path.join(out_dir, EMB_NAME), "run `sig embed` first"
    )
    a = cfg.get("analysis", {})
    policy = PairPolicy(
        frontal_only=bool(a.get("frontal_only", True)),
        intra_race=bool(a.get("intra_race", True)),
        cap_per_race=int(a.get("nonmated_cap", PairPolicy.cap_per_race)),
        frontal_pose=a.get("frontal_pose", PairPolicy.frontal_pose),
    )
    seed = args.seed if args.seed is not None else a.get("seed", 0)
    threshold = a.get("consistency_threshold", 0.6)
    bandwidth = a.get("kde_bandwidth")

    manifest = DatasetManifest.load(manifest_path)
    matrix = embeddings.read_embeddings(emb_path)
    analyses = [
        report.analyze_dataset(
            a.get("dataset_name", "generated"),
            manifest.generated(),
            matrix,
            policy,
            seed,
            consistency_threshold=threshold,
        )
    ]
    for imp in a.get("imports", []):
        imp_manifest = DatasetManifest.load(
            _require_file(imp["manifest"], f"import {imp.get('name')}")
        )
        imp_matrix = embeddings.read_embeddings(
            _require_file(imp["embeddings"], f"import {imp.get('name')}")
        )
        analyses.append(
            report.analyze_dataset(
                imp.get("name", os.path.basename(imp["manifest"])),
                imp_manifest.generated(),
                imp_matrix,
                policy,
                seed,
                consistency_threshold=threshold,
            )
        )
    report_dir = os.path.join(out_dir, REPORT_DIR)
    written = report.emit_report(analyses, report_dir, kde_bandwidth=bandwidth)
    log.info("report bundle -> %s (%d json, %d csv, %d svg)",
             report_dir, len(written["json"]), len(written["csv"]), len(written["svg"]))
    return 0


def cmd_pool_stats(args) -> int:
    cfg = _load_config(args.config)
    pool = _pool(cfg, args)
    counts = pool.counts
    races = sorted({race for race, _ in counts})
    print(f"{'race':<12} {'gender':<8} {'names':>6}")
    total = 0
    for race in races:
        for gender in ("Female", "Male"):
            n = counts.get((race, gender), 0)
            total += n
            print(f"{race:<12} {gender:<8} {n:>6}")
    print(f"{'total':<21} {total:>6}")
    return 0


def cmd_mock_serve(args) -> int:
    config = mockserver.MockConfig(port=args.port, latency_ms=args.latency_ms)
    mockserver.serve_forever(config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sig",
        description="Plan, generate, embed, and analyze synthetic identity datasets.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, backend=False):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory (overrides config out_dir)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if backend:
            p.add_argument("--backend-url", help="backend URL (or SIG_BACKEND_URL env)")
            p.add_argument("--concurrency", type=int, help="parallel requests")

    p = sub.add_parser("plan", help="expand the config into a plan file")
    common(p)
    p.add_argument("--pool", help="name pool CSV (default: bundled sample)")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("generate", help="materialize the plan against a backend")
    common(p, backend=True)
    p.add_argument("--dry-run", action="store_true", help="print job count, no network calls")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("embed", help="produce embeddings for generated images")
    common(p, backend=True)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("analyze", help="run the verification analysis and report")
    common(p)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("pool-stats", help="print per-cell name counts")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--pool", help="name pool CSV (default: bundled sample)")
    p.set_defaults(fn=cmd_pool_stats)

    p = sub.add_parser("mock-serve", help="run the deterministic mock backend")
    p.add_argument("--port", type=int, default=8693)
    p.add_argument("--latency-ms", type=int, default=0)
    p.set_defaults(fn=cmd_mock_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except SigError as exc:
        print(f"error: {exc.one_line()}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing-input: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("error: interrupted: run again to resume", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
