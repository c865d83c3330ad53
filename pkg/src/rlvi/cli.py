"""Benchmark harness: seeded Monte-Carlo trials, CSV output, metrics.

Subcommands map one-to-one onto the experiment protocols:

    linreg | logreg | pca | cov | online | nn | estep-bench

Every run writes one CSV row per (trial, method) with the fixed prefix
``trial,seed,method,epsilon_true,epsilon_hat,converged,iters`` followed by
task-specific metric columns, then ``wall_time,error``.  The CSV is a pure
function of configuration and seed except for the wall-time column.
Individual trial failures become rows with an error code; the run
continues and exits nonzero only if more than 10% of trials fail.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 excess trial
failures.  The environment variable ``RLVI_OUT_DIR`` sets the default
output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import core, em, models, nn, stream, synth

__all__ = [
    "RunConfig",
    "CsvSchema",
    "rel_error",
    "hyperplane_angle",
    "misalignment",
    "run_monte_carlo",
    "sweep_epsilon",
    "ingest_csv",
    "serialize_dataset",
    "main",
]

TASKS = ("linreg", "logreg", "pca", "cov", "online", "nn", "estep-bench")

PREFIX_COLUMNS = [
    "trial",
    "seed",
    "method",
    "epsilon_true",
    "epsilon_hat",
    "converged",
    "iters",
]

METRIC_COLUMNS: Dict[str, List[str]] = {
    "linreg": ["rel_error"],
    "logreg": ["angle_deg"],
    "pca": ["misalignment"],
    "cov": ["rel_error", "min_eigenvalue"],
    "online": ["recall_last100", "accuracy_mean"],
    "nn": ["test_accuracy", "corrupted_identified", "clean_truncated"],
    "estep-bench": ["residual", "objective"],
}

TASK_DEFAULTS: Dict[str, Dict[str, float]] = {
    "linreg": {"n": 40, "d": 10, "eps": 0.2},
    "logreg": {"n": 100, "d": 3, "eps": 0.05},
    "pca": {"n": 40, "d": 2, "eps": 0.2},
    "cov": {"n": 50, "d": 2, "eps": 0.2, "n0": 35.0},
    "online": {"batches": 240, "batch_size": 100, "d": 5},
    "nn": {"n": 3000, "d": 10, "eps": 0.4, "epochs": 60, "classes": 3},
    "estep-bench": {"n": 1000},
}


# ---------------------------------------------------------------------------
# error metrics


def rel_error(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Euclidean relative error |a - b| / |b|."""
    truth = np.asarray(truth, float)
    return float(
        np.linalg.norm(np.asarray(estimate, float) - truth) / np.linalg.norm(truth)
    )


def hyperplane_angle(estimate: np.ndarray, truth: np.ndarray) -> float:
    """Angle in degrees between weight vectors, intercepts excluded.

    Orientation matters: antiparallel directions give 180, not 0.
    """
    a = np.asarray(estimate, float)[:-1]
    b = np.asarray(truth, float)[:-1]
    cosine = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return float(np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0))))


def misalignment(estimate: np.ndarray, truth: np.ndarray) -> float:
    """1 - |cos angle| between directions (sign-invariant)."""
    a = np.asarray(estimate, float)
    b = np.asarray(truth, float)
    cosine = float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
    return float(1.0 - abs(cosine))


# ---------------------------------------------------------------------------
# CSV ingestion / serialization


@dataclass(frozen=True)
class CsvSchema:
    features: Tuple[str, ...]
    target: str


def ingest_csv(path: str, schema: CsvSchema):
    """Read a numeric feature/target CSV, validating header and rows.

    Malformed rows are rejected with their 1-based line numbers.
    """
    expected = list(schema.features) + [schema.target]
    xs: List[List[float]] = []
    ys: List[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if header != expected:
            raise ValueError(
                f"{path}: header {header!r} does not match schema {expected!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise ValueError(
                    f"{path}: line {lineno}: expected {len(expected)} columns, "
                    f"got {len(row)}"
                )
            try:
                values = [float(v) for v in row]
            except ValueError:
                raise ValueError(
                    f"{path}: line {lineno}: non-numeric value"
                ) from None
            xs.append(values[:-1])
            ys.append(values[-1])
    if not xs:
        raise ValueError(f"{path}: no data rows")
    return np.asarray(xs), np.asarray(ys)


def serialize_dataset(path: str, x: np.ndarray, y: np.ndarray, schema: CsvSchema):
    """Write a dataset in the schema accepted by :func:`ingest_csv`."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(schema.features) + [schema.target])
        for xi, yi in zip(x, y):
            writer.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    task: str
    runs: int = 100
    seed: int = 0
    eps: Optional[float] = None
    out: Optional[str] = None
    methods: Tuple[str, ...] = ("ml", "rlvi")
    jobs: int = 1
    n: Optional[int] = None
    d: Optional[int] = None
    n0: Optional[float] = None
    pert: Tuple[float, float, float] = (0.0, 0.1, 0.3)
    noise: str = "symmetric"
    batches: Optional[int] = None
    epochs: Optional[int] = None
    eps_grid: Optional[Tuple[float, ...]] = None


def _trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(trial,)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# per-task trials; module level so worker processes can pickle them


def _knob(cfg: dict, key: str):
    value = cfg.get(key)
    if value is None:
        value = TASK_DEFAULTS[cfg["task"]].get(key)
    return value


def _linreg_trial(method: str, tseed: int, cfg: dict) -> dict:
    data = synth.gen_linreg(
        n=int(_knob(cfg, "n")), d=int(_knob(cfg, "d")), eps=float(_knob(cfg, "eps")),
        seed=tseed,
    )
    model = models.LinearRegressionModel()
    pair = (data.x, data.y)
    if method == "ml":
        params = em.ml_fit(model, pair)
        return {"rel_error": rel_error(params.theta, data.theta_star),
                "epsilon_hat": float("nan"), "converged": True, "iters": 0}
    params, trace = em.rlvi_em(model, pair)
    return {"rel_error": rel_error(params.theta, data.theta_star),
            "epsilon_hat": trace.final_estep.epsilon_hat,
            "converged": trace.converged, "iters": trace.iterations}


def _logreg_trial(method: str, tseed: int, cfg: dict) -> dict:
    data = synth.gen_logreg(
        n=int(_knob(cfg, "n")), d=int(_knob(cfg, "d")), eps=float(_knob(cfg, "eps")),
        seed=tseed,
    )
    model = models.LogisticRegressionModel()
    pair = (data.x, data.y)
    if method == "ml":
        params = em.ml_fit(model, pair)
        return {"angle_deg": hyperplane_angle(params.theta, data.theta_star),
                "epsilon_hat": float("nan"), "converged": True, "iters": 0}
    params, trace = em.rlvi_em(model, pair)
    return {"angle_deg": hyperplane_angle(params.theta, data.theta_star),
            "epsilon_hat": trace.final_estep.epsilon_hat,
            "converged": trace.converged, "iters": trace.iterations}


def _pca_trial(method: str, tseed: int, cfg: dict) -> dict:
    data = synth.gen_pca(
        n=int(_knob(cfg, "n")), d=int(_knob(cfg, "d")), eps=float(_knob(cfg, "eps")),
        seed=tseed,
    )
    model = models.PcaModel()
    if method == "ml":
        params = em.ml_fit(model, data.z)
        return {"misalignment": misalignment(params.theta, data.axis_star),
                "epsilon_hat": float("nan"), "converged": True, "iters": 0}
    params, trace = em.rlvi_em(model, data.z)
    return {"misalignment": misalignment(params.theta, data.axis_star),
            "epsilon_hat": trace.final_estep.epsilon_hat,
            "converged": trace.converged, "iters": trace.iterations}


def _cov_trial(method: str, tseed: int, cfg: dict) -> dict:
    data = synth.gen_gauss(
        n=int(_knob(cfg, "n")), d=int(_knob(cfg, "d")), eps=float(_knob(cfg, "eps")),
        seed=tseed,
    )
    model = models.GaussianModel()
    if method == "ml":
        params = em.ml_fit(model, data.z)
        return {"rel_error": rel_error(params.sigma.ravel(), data.sigma_star.ravel()),
                "min_eigenvalue": float(np.linalg.eigvalsh(params.sigma).min()),
                "epsilon_hat": float("nan"), "converged": True, "iters": 0}
    n0 = cfg.get("n0")
    if n0 is None:
        n0 = TASK_DEFAULTS["cov"]["n0"]
    params, trace = em.rlvi_em(model, data.z, n0=float(n0))
    return {"rel_error": rel_error(params.sigma.ravel(), data.sigma_star.ravel()),
            "min_eigenvalue": float(np.linalg.eigvalsh(params.sigma).min()),
            "epsilon_hat": trace.final_estep.epsilon_hat,
            "converged": trace.converged, "iters": trace.iterations}


def _online_trial(method: str, tseed: int, cfg: dict) -> dict:
    n_batches = int(_knob(cfg, "batches"))
    pert = tuple(cfg.get("pert") or (0.0, 0.1, 0.3))
    batches = synth.gen_stream(n_batches, b=100, pert=pert, seed=tseed,
                               d=int(_knob(cfg, "d")))
    model = models.LogisticRegressionModel()
    sgd_cfg = stream.SgdConfig()
    metrics = stream.online_run(batches, model, sgd_cfg, run_plain_twin=True)
    tail = min(100, n_batches)
    if method == "ml":
        recall = float(np.nanmean(metrics.sgd_recall[-tail:]))
        acc = float(np.nanmean(metrics.sgd_accuracy))
        eps_hat = float("nan")
    else:
        recall = float(np.nanmean(metrics.recall[-tail:]))
        acc = float(np.nanmean(metrics.accuracy))
        eps_hat = float(np.nanmean(metrics.epsilon_hat))
    return {"recall_last100": recall, "accuracy_mean": acc,
            "epsilon_true": float(np.mean(metrics.epsilon_true)),
            "epsilon_hat": eps_hat, "converged": True, "iters": n_batches}


def _nn_trial(method: str, tseed: int, cfg: dict) -> dict:
    n = int(_knob(cfg, "n"))
    d = int(_knob(cfg, "d"))
    eps = float(_knob(cfg, "eps"))
    n_classes = int(TASK_DEFAULTS["nn"]["classes"])
    pool = synth.gen_blobs(n=n + n // 10, d=d, n_classes=n_classes, seed=tseed)
    test = synth.gen_blobs(n=1000, d=d, n_classes=n_classes, seed=tseed + 1,
                           centers=pool.centers)
    noisy_y, mask = synth.flip_labels(pool.y, n_classes, cfg.get("noise", "symmetric"),
                                      eps, seed=tseed)
    x_tr, y_tr, m_tr = pool.x[:n], noisy_y[:n], mask[:n]
    x_val, y_val = pool.x[n:], noisy_y[n:]
    config = nn.NnConfig(epochs=int(_knob(cfg, "epochs")), shuffle_seed=tseed)
    mlp = nn.Mlp.init(d, 64, n_classes, seed=tseed)
    _, state, records = nn.train_rlvi(
        mlp, (x_tr, y_tr), (x_val, y_val), config, test_set=(test.x, test.y),
        corrupted_mask=m_tr, robust=(method == "rlvi"),
    )
    last = records[-1]
    return {"test_accuracy": last.test_accuracy,
            "corrupted_identified": last.corrupted_below_tau,
            "clean_truncated": last.clean_below_tau,
            "epsilon_hat": last.epsilon_hat if method == "rlvi" else float("nan"),
            "converged": True, "iters": config.epochs}


def _estep_bench_trial(method: str, tseed: int, cfg: dict) -> dict:
    rng = synth.make_rng(tseed, (9,))
    n = int(_knob(cfg, "n"))
    losses = np.concatenate([
        rng.uniform(-1.5, -0.1, size=int(0.8 * n)),
        rng.uniform(0.5, 4.0, size=n - int(0.8 * n)),
    ])
    rng.shuffle(losses)
    result = core.capped_estep(losses)
    return {"residual": core.stationarity_residual(losses, result.weights),
            "objective": result.objective,
            "epsilon_hat": result.epsilon_hat,
            "converged": not result.degenerate, "iters": result.iterations}


_TRIALS = {
    "linreg": _linreg_trial,
    "logreg": _logreg_trial,
    "pca": _pca_trial,
    "cov": _cov_trial,
    "online": _online_trial,
    "nn": _nn_trial,
    "estep-bench": _estep_bench_trial,
}


def _run_one(args: tuple) -> dict:
    task, method, trial, seed, cfg = args
    tseed = _trial_seed(seed, trial)
    row = {
        "trial": trial,
        "seed": tseed,
        "method": method,
        "epsilon_true": _knob(cfg, "eps") if task not in ("online", "estep-bench") else "",
        "error": "",
    }
    start = time.perf_counter()
    try:
        row.update(_TRIALS[task](method, tseed, cfg))
    except Exception as exc:  # recorded, run continues
        row["error"] = type(exc).__name__
        row.setdefault("converged", False)
        row.setdefault("iters", 0)
        row.setdefault("epsilon_hat", float("nan"))
        for col in METRIC_COLUMNS[task]:
            row.setdefault(col, float("nan"))
    row["wall_time"] = time.perf_counter() - start
    return row


# ---------------------------------------------------------------------------
# orchestration


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def run_monte_carlo(config: RunConfig) -> Tuple[dict, List[dict]]:
    """Execute seeded trials for each method; write CSV; return the summary.

    Rows are sorted by (trial, method) before writing, so the worker count
    never changes the output.
    """
    if config.task not in TASKS:
        raise ValueError(f"unknown task {config.task!r}")
    methods = [m for m in config.methods if m in ("ml", "rlvi")]
    if config.task == "estep-bench":
        methods = ["rlvi"]
    if not methods:
        raise ValueError("no valid methods selected")

    cfg = {
        "task": config.task,
        "n": config.n,
        "d": config.d,
        "eps": config.eps,
        "n0": config.n0,
        "pert": config.pert,
        "noise": config.noise,
        "batches": config.batches,
        "epochs": config.epochs,
    }
    jobs = [
        (config.task, method, trial, config.seed, cfg)
        for trial in range(config.runs)
        for method in methods
    ]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            rows = list(pool.map(_run_one, jobs))
    else:
        rows = [_run_one(job) for job in jobs]
    rows.sort(key=lambda r: (r["trial"], r["method"]))

    columns = PREFIX_COLUMNS + METRIC_COLUMNS[config.task] + ["wall_time", "error"]
    out_path = config.out or _default_out(config.task)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(row.get(col, "")) for col in columns])

    failures = sum(1 for row in rows if row["error"])
    summary = {"out": out_path, "rows": len(rows), "failures": failures}
    metric = METRIC_COLUMNS[config.task][0]
    for method in methods:
        values = np.array(
            [row[metric] for row in rows if row["method"] == method and not row["error"]],
            dtype=float,
        )
        values = values[np.isfinite(values)]
        if values.size:
            summary[method] = {
                "q25": float(np.percentile(values, 25)),
                "median": float(np.percentile(values, 50)),
                "q75": float(np.percentile(values, 75)),
                "mean": float(values.mean()),
            }
    return summary, rows


def _default_out(task: str) -> str:
    out_dir = os.environ.get("RLVI_OUT_DIR", ".")
    os.makedirs(out_dir, exist_ok=True)
    return os.path.join(out_dir, f"{task}.csv")


def sweep_epsilon(config: RunConfig, eps_grid: Sequence[float]) -> List[dict]:
    """Monte-Carlo per grid point; one summary row per (epsilon, method).

    Writes a summary CSV with quartiles and mean of the task's main metric.
    """
    metric = METRIC_COLUMNS[config.task][0]
    out_path = config.out or _default_out(f"{config.task}-sweep")
    summaries = []
    for eps in eps_grid:
        point = RunConfig(
            task=config.task, runs=config.runs, seed=config.seed, eps=float(eps),
            out=os.devnull, methods=config.methods, jobs=config.jobs,
            n=config.n, d=config.d, n0=config.n0,
        )
        summary, _ = run_monte_carlo(point)
        for method in config.methods:
            if method in summary:
                summaries.append({"epsilon": float(eps), "method": method,
                                  **summary[method]})
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epsilon", "method", "q25", "median", "q75", "mean"])
        for row in summaries:
            writer.writerow([_format_cell(row[c]) for c in
                             ("epsilon", "method", "q25", "median", "q75", "mean")])
    return summaries


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rlvi",
        description="Robust-likelihood benchmark harness.",
        epilog=(
            "CSV columns: trial,seed,method,epsilon_true,epsilon_hat,converged,"
            "iters,<task metrics>,wall_time,error. Task metrics: "
            + "; ".join(f"{t}: {','.join(c)}" for t, c in METRIC_COLUMNS.items())
        ),
    )
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        p = sub.add_parser(task, help=f"run the {task} experiment")
        p.add_argument("--runs", type=int, default=argparse.SUPPRESS,
                       help="number of Monte-Carlo trials (default 100)")
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                       help="master seed; per-trial streams are split from it")
        p.add_argument("--eps", type=float, default=argparse.SUPPRESS,
                       help="corruption level override")
        p.add_argument("--out", type=str, default=argparse.SUPPRESS,
                       help="output CSV path (default $RLVI_OUT_DIR/<task>.csv)")
        p.add_argument("--methods", type=str, default=argparse.SUPPRESS,
                       help="comma list from {ml,rlvi} (default both)")
        p.add_argument("--jobs", type=int, default=argparse.SUPPRESS,
                       help="worker processes (default: all cores); results "
                            "are independent of this")
        p.add_argument("--config", type=str, default=argparse.SUPPRESS,
                       help="JSON file with defaults; explicit flags win")
        p.add_argument("--n", type=int, default=argparse.SUPPRESS,
                       help="sample count override")
        p.add_argument("--d", type=int, default=argparse.SUPPRESS,
                       help="dimension override")
        if task in ("linreg", "logreg", "pca", "cov"):
            p.add_argument("--eps-grid", type=str, default=argparse.SUPPRESS,
                           help="comma list of epsilons; runs a sweep and "
                                "writes a summary CSV instead")
        if task == "cov":
            p.add_argument("--n0", type=float, default=argparse.SUPPRESS,
                           help="minimum effective sample count (default 35)")
        if task == "online":
            p.add_argument("--pert", type=str, default=argparse.SUPPRESS,
                           help="min,mode,max of the per-batch flip level "
                                "(default 0,0.1,0.3)")
            p.add_argument("--batches", type=int, default=argparse.SUPPRESS,
                           help="number of stream batches (default 240)")
        if task == "nn":
            p.add_argument("--noise", choices=("symmetric", "pairflip"),
                           default=argparse.SUPPRESS, help="label-flip type")
            p.add_argument("--epochs", type=int, default=argparse.SUPPRESS,
                           help="training epochs (default 60)")
    return parser


def _merge_config(ns: argparse.Namespace) -> RunConfig:
    values = vars(ns).copy()
    task = values.pop("task")
    config_path = values.pop("config", None)
    merged: Dict = {}
    if config_path:
        with open(config_path) as fh:
            merged.update(json.load(fh))
    merged.update(values)  # explicit flags win over the config file

    methods = merged.get("methods", "ml,rlvi")
    if isinstance(methods, str):
        methods = tuple(m.strip() for m in methods.split(",") if m.strip())
    pert = merged.get("pert", (0.0, 0.1, 0.3))
    if isinstance(pert, str):
        pert = tuple(float(v) for v in pert.split(","))
        if len(pert) != 3:
            raise ValueError("--pert needs exactly min,mode,max")
    eps_grid = merged.get("eps_grid")
    if isinstance(eps_grid, str):
        eps_grid = tuple(float(v) for v in eps_grid.split(","))

    return RunConfig(
        task=task,
        runs=int(merged.get("runs", 100)),
        seed=int(merged.get("seed", 0)),
        eps=merged.get("eps"),
        out=merged.get("out"),
        methods=methods,
        jobs=int(merged.get("jobs", os.cpu_count() or 1)),
        n=merged.get("n"),
        d=merged.get("d"),
        n0=merged.get("n0"),
        pert=tuple(pert),
        noise=merged.get("noise", "symmetric"),
        batches=merged.get("batches"),
        epochs=merged.get("epochs"),
        eps_grid=eps_grid,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    ns = parser.parse_args(argv)
    try:
        config = _merge_config(ns)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    try:
        if config.eps_grid:
            summaries = sweep_epsilon(config, config.eps_grid)
            for row in summaries:
                print(
                    f"eps={row['epsilon']:.3f} {row['method']:>4}: "
                    f"q25={row['q25']:.4g} median={row['median']:.4g} "
                    f"q75={row['q75']:.4g} mean={row['mean']:.4g}"
                )
            return 0
        summary, rows = run_monte_carlo(config)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    print(f"wrote {summary['rows']} rows to {summary['out']}")
    for method in ("ml", "rlvi"):
        if method in summary:
            s = summary[method]
            print(
                f"{method:>4}: q25={s['q25']:.4g} median={s['median']:.4g} "
                f"q75={s['q75']:.4g} mean={s['mean']:.4g}"
            )
    if summary["failures"] > 0.1 * summary["rows"]:
        print(
            f"{summary['failures']} of {summary['rows']} trials failed",
            file=sys.stderr,
        )
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
