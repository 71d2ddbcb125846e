"""Command-line harness tying stores, splits, estimators, probes and the
distillation loop into reproducible experiments.

Subcommands: ingest, validate, split, estimate, rank, probe, sweep, ssl,
report. Configuration comes from a JSON file (--config); command-line
flags override file values. Exit status: 0 success, 1 configuration
error, 2 runtime error. All reports are JSON and byte-reproducible for a
fixed config and seed; wall-clock info goes to a run_info.json sidecar.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cohort, distill, estimators, metrics, probe, store


class ConfigError(Exception):
    """Bad or missing configuration."""


_RUNTIME_ERRORS = (
    store.FormatError,
    store.ValidationError,
    store.IoError,
    cohort.CohortError,
    estimators.EstimatorError,
    estimators.AggregationError,
    estimators.RegistryError,
    probe.ProbeError,
    metrics.MetricError,
    distill.SslError,
)


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_sidecar(out_dir: Path, args_config: dict) -> None:
    _write_json(
        out_dir / "run_info.json",
        {"timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"), "config": args_config},
    )


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None


@dataclass
class ExperimentConfig:
    tables: dict = field(default_factory=dict)  # backbone -> {dataset -> path}
    estimator_names: list = field(default_factory=lambda: list(estimators.BUILTIN_ESTIMATORS))
    params: dict = field(default_factory=dict)  # backbone -> parameter count
    budget: int | None = None
    k_folds: int = 5
    fractions: list = field(default_factory=lambda: list(cohort.FRACTION_PRESETS["eighths"]))
    probe_lambda: float = 1e-2
    probe_tol: float = 1e-5
    probe_max_iter: int = 2000
    seed: int = 0
    out_dir: Path = Path("out")
    jobs: int = 1

    @classmethod
    def build(cls, file_cfg: dict, args) -> "ExperimentConfig":
        cfg = cls()
        cfg.tables = file_cfg.get("tables", {})
        cfg.estimator_names = file_cfg.get("estimators", cfg.estimator_names)
        cfg.params = {k: int(v) for k, v in file_cfg.get("params", {}).items()}
        cfg.budget = file_cfg.get("budget")
        cfg.k_folds = int(file_cfg.get("k_folds", cfg.k_folds))
        if "fraction_preset" in file_cfg:
            preset = file_cfg["fraction_preset"]
            if preset not in cohort.FRACTION_PRESETS:
                raise ConfigError(f"unknown fraction preset {preset!r}")
            cfg.fractions = list(cohort.FRACTION_PRESETS[preset])
        cfg.fractions = list(file_cfg.get("fractions", cfg.fractions))
        probe_cfg = file_cfg.get("probe", {})
        cfg.probe_lambda = float(probe_cfg.get("lambda", cfg.probe_lambda))
        cfg.probe_tol = float(probe_cfg.get("tol", cfg.probe_tol))
        cfg.probe_max_iter = int(probe_cfg.get("max_iter", cfg.probe_max_iter))
        cfg.seed = int(file_cfg.get("seed", cfg.seed))
        cfg.out_dir = Path(file_cfg.get("out", cfg.out_dir))
        # flags win over file values
        if getattr(args, "seed", None) is not None:
            cfg.seed = args.seed
        if getattr(args, "out", None) is not None:
            cfg.out_dir = Path(args.out)
        if getattr(args, "jobs", None) is not None:
            cfg.jobs = args.jobs
        if getattr(args, "budget", None) is not None:
            cfg.budget = args.budget
        if getattr(args, "k", None) is not None:
            cfg.k_folds = args.k
        if getattr(args, "fractions", None):
            cfg.fractions = [float(x) for x in args.fractions.split(",")]
        if getattr(args, "preset", None):
            cfg.fractions = list(cohort.FRACTION_PRESETS[args.preset])
        if getattr(args, "estimators", None):
            cfg.estimator_names = args.estimators.split(",")
        if getattr(args, "probe_lambda", None) is not None:
            cfg.probe_lambda = args.probe_lambda
        return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    table = store.read_table(args.input)
    meta = store.TableMeta(
        backbone=args.backbone if args.backbone is not None else table.meta.backbone,
        params=args.params if args.params is not None else table.meta.params,
        dataset=args.dataset if args.dataset is not None else table.meta.dataset,
    )
    out = store.EmbeddingTable(table.features, table.labels, table.groups, meta)
    store.write_table(out, args.output)
    print(f"wrote {args.output}: n={out.n}, d={out.d}")
    return 0


def cmd_validate(args) -> int:
    path = Path(args.input)
    if path.suffix.lower() != ".csv":
        raw = path.read_bytes()
        table = store._read_emb1(raw, path)  # parse without raising on invariants
    else:
        table = store._read_csv(path)
    violations = store.validate(table)
    print(json.dumps({"path": str(path), "violations": violations}, sort_keys=True))
    return 0 if not violations else 2


def cmd_split(args) -> int:
    cfg = ExperimentConfig.build(_load_config(args.config), args)
    table = store.read_table(args.input)
    plan = cohort.group_kfold(table, cfg.k_folds, cfg.seed)
    report = plan.to_report()
    if getattr(args, "fractions", None) or getattr(args, "preset", None):
        masks = cohort.stratified_subsample(table, cfg.fractions, cfg.seed)
        report["masks"] = [m.to_report() for m in masks]
    _write_json(cfg.out_dir / "folds.json", report)
    _write_sidecar(cfg.out_dir, {"command": "split", "seed": cfg.seed})
    print(f"wrote {cfg.out_dir / 'folds.json'}")
    return 0


def _estimate_cell(name, table, seed):
    try:
        return estimators.run_estimator(name, table, seed=seed), None
    except _RUNTIME_ERRORS as exc:
        return (
            estimators.TransferScore(
                estimator=name, score=float("nan"), converged=False, iterations=0
            ),
            str(exc),
        )


def cmd_estimate(args) -> int:
    cfg = ExperimentConfig.build(_load_config(args.config), args)
    if not cfg.tables:
        raise ConfigError("estimate needs a 'tables' map in the config file")
    loaded = {}
    params = dict(cfg.params)
    for backbone, per_ds in cfg.tables.items():
        for dataset, path in per_ds.items():
            if not Path(path).exists():
                raise ConfigError(f"missing table {path} for ({backbone}, {dataset})")
            loaded[(backbone, dataset)] = store.read_table(path)
        if backbone not in params:
            params[backbone] = loaded[(backbone, next(iter(per_ds)))].meta.params

    cells = [
        (backbone, dataset, est)
        for (backbone, dataset) in loaded
        for est in cfg.estimator_names
    ]

    def work(cell):
        backbone, dataset, est = cell
        return cell, _estimate_cell(est, loaded[(backbone, dataset)], cfg.seed)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(work, cells))
    else:
        results = [work(c) for c in cells]

    scores = {}
    records = []
    for (backbone, dataset, est), (ts, error) in results:
        scores[(backbone, dataset, ts.estimator)] = ts
        rec = {"backbone": backbone, "dataset": dataset, **ts.to_dict()}
        if error:
            rec["error"] = error
        records.append(rec)
    records.sort(key=lambda r: (r["backbone"], r["dataset"], r["estimator"]))
    _write_json(
        cfg.out_dir / "scores.json",
        {"seed": cfg.seed, "records": records, "params": params},
    )
    ranking = estimators.aggregate_ranking(scores, params, cfg.budget)
    _write_json(cfg.out_dir / "ranking.json", {"seed": cfg.seed, **ranking.to_dict()})
    _write_sidecar(cfg.out_dir, {"command": "estimate", "seed": cfg.seed})
    for w in ranking.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"winner: {ranking.winner}")
    return 0


def cmd_rank(args) -> int:
    with open(args.scores) as fh:
        payload = json.load(fh)
    scores = {}
    for rec in payload["records"]:
        scores[(rec["backbone"], rec["dataset"], rec["estimator"])] = (
            estimators.TransferScore(
                estimator=rec["estimator"],
                score=rec["score"] if rec["score"] is not None else float("nan"),
                converged=rec["converged"],
                iterations=rec["iterations"],
            )
        )
    params = {k: int(v) for k, v in payload["params"].items()}
    ranking = estimators.aggregate_ranking(scores, params, args.budget)
    out_dir = Path(args.out) if args.out else Path(".")
    _write_json(out_dir / "ranking.json", {"seed": payload.get("seed"), **ranking.to_dict()})
    print(f"winner: {ranking.winner}")
    return 0


def _fold_metrics(table, plan, fold, model) -> dict:
    test_rows = plan.rows_in_fold(fold)
    X_test = table.features[test_rows].astype(np.float64)
    y_test = table.labels[test_rows]
    proba = probe.predict_proba(model, X_test)
    preds = np.argmax(proba, axis=1)
    report = metrics.f1_report(preds, y_test)
    out = {
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "weighted_f1": report.weighted_f1,
    }
    if table.n_classes == 2 and len(np.unique(y_test)) == 2:
        out["auroc"] = metrics.auroc(proba[:, 1], y_test)
        out["aupr"] = metrics.aupr(proba[:, 1], y_test)
    return out


def _cv_eval(table, cfg: ExperimentConfig, fractions=None) -> dict:
    plan = cohort.group_kfold(table, cfg.k_folds, cfg.seed)
    fractions = fractions or [1.0]
    per_fraction = {f: [] for f in fractions}
    for fold in range(cfg.k_folds):
        train_rows = np.flatnonzero(plan.assignment != fold)
        sub = store.EmbeddingTable(
            table.features[train_rows],
            table.labels[train_rows],
            None if table.groups is None else table.groups[train_rows],
            table.meta,
        )
        if fractions == [1.0]:
            masks = [cohort.SubsampleMask(1.0, np.ones(sub.n, dtype=bool), cfg.seed)]
        else:
            masks = cohort.stratified_subsample(
                sub, fractions, seed=cfg.seed * 1000 + fold
            )
        for mask in masks:
            rows = np.flatnonzero(mask.selected)
            train_tab = store.EmbeddingTable(
                sub.features[rows], sub.labels[rows], None, table.meta
            )
            model = probe.train_probe(
                train_tab, cfg.probe_lambda, cfg.probe_tol, cfg.probe_max_iter
            )
            fold_rec = _fold_metrics(table, plan, fold, model)
            fold_rec["fold"] = fold
            fold_rec["train_rows"] = [int(train_rows[r]) for r in rows]
            per_fraction[mask.fraction].append(fold_rec)
    return {"fold_plan": plan.to_report(), "per_fraction": per_fraction}


def _summaries(fold_records) -> dict:
    keys = sorted(set().union(*(set(r) for r in fold_records)) - {"fold", "train_rows"})
    out = {}
    for key in keys:
        values = [r[key] for r in fold_records if key in r]
        if len(values) >= 2:
            out[key] = metrics.fold_summary(values).to_dict()
    return out


def cmd_probe_eval(args) -> int:
    cfg = ExperimentConfig.build(_load_config(args.config), args)
    table = store.read_table(args.input)
    result = _cv_eval(table, cfg)
    folds = result["per_fraction"][1.0]
    payload = {
        "seed": cfg.seed,
        "k_folds": cfg.k_folds,
        "fold_plan": result["fold_plan"],
        "folds": folds,
        "summary": _summaries(folds),
    }
    if args.baseline:
        base_table = store.read_table(args.baseline)
        if base_table.n != table.n:
            raise ConfigError("baseline table must cover the same rows")
        base = _cv_eval(base_table, cfg)["per_fraction"][1.0]
        tests = {}
        for key in payload["summary"]:
            a = [r[key] for r in folds]
            b = [r[key] for r in base]
            t, p = metrics.paired_ttest(a, b)
            tests[key] = {"t": t, "p": p}
        payload["baseline_folds"] = base
        payload["paired_ttests"] = tests
    _write_json(cfg.out_dir / "probe_eval.json", payload)
    _write_sidecar(cfg.out_dir, {"command": "probe", "seed": cfg.seed})
    for key, s in payload["summary"].items():
        print(f"{key}: {s['mean']:.4f} +/- {s['sd']:.4f}")
    return 0


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.build(_load_config(args.config), args)
    table = store.read_table(args.input)
    fractions = sorted(set(float(f) for f in cfg.fractions))
    if list(fractions) != [float(f) for f in cfg.fractions]:
        raise ConfigError(f"fractions must be strictly increasing: {cfg.fractions}")
    result = _cv_eval(table, cfg, fractions=fractions)
    curve = []
    for f in fractions:
        folds = result["per_fraction"][f]
        curve.append(
            {"fraction": f, "folds": folds, "summary": _summaries(folds)}
        )
    payload = {
        "seed": cfg.seed,
        "k_folds": cfg.k_folds,
        "fold_plan": result["fold_plan"],
        "curve": curve,
    }
    _write_json(cfg.out_dir / "sweep.json", payload)
    _write_sidecar(cfg.out_dir, {"command": "sweep", "seed": cfg.seed})
    for point in curve:
        acc = point["summary"].get("accuracy", {})
        print(f"fraction {point['fraction']}: accuracy {acc.get('mean', float('nan')):.4f}")
    return 0


def cmd_ssl(args) -> int:
    file_cfg = _load_config(args.config)
    ssl_cfg = file_cfg.get("ssl", file_cfg)
    known = {f.name for f in distill.SslConfig.__dataclass_fields__.values()}
    config = distill.SslConfig(**{k: v for k, v in ssl_cfg.items() if k in known})
    if args.seed is not None:
        config = distill.SslConfig(
            **{**{k: getattr(config, k) for k in known}, "seed": args.seed}
        )
    config.check()
    steps = args.steps if args.steps is not None else int(ssl_cfg.get("steps", 200))
    batch_size = int(ssl_cfg.get("batch_size", 16))
    n_clusters = int(ssl_cfg.get("data_clusters", 4))
    out_dir = Path(args.out) if args.out else Path("out")
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(config.seed)
    centers = rng.standard_normal((n_clusters, config.input_dim)) * 2.0
    batch = [
        centers[i % n_clusters] + 0.3 * rng.standard_normal(config.input_dim)
        for i in range(batch_size)
    ]

    state = distill.init_state(config)
    log_path = out_dir / "ssl_log.jsonl"
    with open(log_path, "w") as log:
        for _ in range(steps):
            state, loss = distill.train_step(state, batch, config)
            entropy = distill.collapse_entropy(state, batch, config)
            log.write(
                json.dumps(
                    {"step": state.step, "loss": loss, "teacher_entropy": entropy},
                    sort_keys=True,
                )
                + "\n"
            )
    ckpt = out_dir / "checkpoint.ssl1"
    distill.save_checkpoint(state, config, ckpt)
    final_entropy = distill.collapse_entropy(state, batch, config)
    _write_sidecar(out_dir, {"command": "ssl", "seed": config.seed, "steps": steps})
    print(
        json.dumps(
            {"steps": steps, "final_entropy": final_entropy, "checkpoint": str(ckpt)},
            sort_keys=True,
        )
    )
    return 0


def _fmt_pct(x) -> str:
    return f"{100.0 * x:.1f}" if isinstance(x, (int, float)) and x is not None else "-"


def cmd_report(args) -> int:
    with open(args.input) as fh:
        payload = json.load(fh)
    if "summary" in payload:  # probe_eval report
        print(f"{'metric':<14}{'mean':>8}{'sd':>8}")
        for key, s in sorted(payload["summary"].items()):
            print(f"{key:<14}{_fmt_pct(s['mean']):>8}{_fmt_pct(s['sd']):>8}")
        for key, t in payload.get("paired_ttests", {}).items():
            print(f"t-test {key}: t={t['t']:.4f} p={t['p']:.4f}")
    elif "curve" in payload:  # sweep report
        keys = sorted(payload["curve"][0]["summary"])
        print(f"{'fraction':<10}" + "".join(f"{k:>14}" for k in keys))
        for point in payload["curve"]:
            row = f"{point['fraction']:<10}"
            for k in keys:
                s = point["summary"].get(k)
                row += f"{_fmt_pct(s['mean']) if s else '-':>14}"
            print(row)
    elif "candidates" in payload:  # ranking report
        print(f"{'backbone':<20}{'params':>12}{'borda':>8}")
        for c in payload["candidates"]:
            print(f"{c['name']:<20}{c['params']:>12}{c['borda']:>8.1f}")
        print(f"winner: {payload['winner']}")
    else:
        raise ConfigError(f"{args.input}: unrecognized report type")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embsel",
        description="Backbone selection and evaluation over frozen embeddings",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--jobs", type=int, default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="convert CSV fixture to EMB1")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--backbone", default=None)
    p.add_argument("--params", type=int, default=None)
    p.add_argument("--dataset", default=None)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("validate", parents=[common], help="check table invariants")
    p.add_argument("--input", required=True)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("split", parents=[common], help="group k-fold plan (+ masks)")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--fractions", default=None, help="comma list, e.g. 0.25,0.5,1.0")
    p.add_argument("--preset", choices=sorted(cohort.FRACTION_PRESETS), default=None)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("estimate", parents=[common], help="score and rank backbones")
    p.add_argument("--estimators", default=None, help="comma list of estimator names")
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("rank", parents=[common], help="re-aggregate a scores.json")
    p.add_argument("--scores", required=True)
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("probe", parents=[common], help="k-fold linear probe eval")
    p.add_argument("--input", required=True)
    p.add_argument("--baseline", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--probe-lambda", type=float, default=None, dest="probe_lambda")
    p.set_defaults(fn=cmd_probe_eval)

    p = sub.add_parser("sweep", parents=[common], help="label-efficiency sweep")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--fractions", default=None)
    p.add_argument("--preset", choices=sorted(cohort.FRACTION_PRESETS), default=None)
    p.add_argument("--probe-lambda", type=float, default=None, dest="probe_lambda")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("ssl", parents=[common], help="run the toy distillation loop")
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(fn=cmd_ssl)

    p = sub.add_parser("report", parents=[common], help="render a JSON report")
    p.add_argument("--input", required=True)
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
