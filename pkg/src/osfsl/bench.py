"""Benchmark harness: run methods over shared episodes and write reports.

Episode seeds are derived from the master seed by index (rng.derive_seed),
never from sampling order, so a run is byte-identical whether episodes are
processed serially or by a worker pool. Every requested method sees the
identical episode. Per-episode failures are recorded and the run continues;
the CLI turns them into a partial-failure exit code.

Report files:

* ``outcomes.jsonl`` - one record per episode x method with the seed,
  preset and per-metric values;
* ``summary.csv`` - method, preset, metric, mean, ci95, n;
* ``summary.json`` - the same rows plus the run configuration echo.
"""

from __future__ import annotations

import json
import multiprocessing
import os
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import kernels
from .baselines import knn_outlier_scores, knn_predictions, simpleshot_maxprob
from .data import FeatureSet
from .episodes import Episode, EpisodeSpec, sample_episode
from .errors import ConfigError
from .losses import LossWeights
from .metrics import METRIC_NAMES, EpisodeOutcome, aggregate, episode_metrics
from .model import EOL, OSTIM, center_episode, query_posterior_table
from .optim import OptimConfig, transduce
from .rng import derive_seed

TRANSDUCTIVE_METHODS = (EOL, OSTIM)
ALL_METHODS = (EOL, OSTIM, "simpleshot", "knn")

#: Default balancing prior per preset, tracking the anticipated outlier
#: fraction of the query mix.
PRESET_B = {"balanced": 0.5, "ood20": 0.3, "ood50": 0.5, "ood80": 0.7}


@dataclass(frozen=True)
class SuiteConfig:
    base_spec: EpisodeSpec
    episodes: int
    methods: tuple[str, ...]
    weights: LossWeights
    optim: OptimConfig
    master_seed: int
    preset: str = "custom"
    knn_k: int = 3

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if not self.methods:
            raise ConfigError("method list must be non-empty")
        for m in self.methods:
            if m not in ALL_METHODS:
                raise ConfigError(f"unknown method {m!r} (choose from {ALL_METHODS})")


def run_method(method: str, episode: Episode, weights: LossWeights,
               cfg: OptimConfig, knn_k: int = 3) -> EpisodeOutcome:
    """Run one method on one episode; truth is only attached afterwards."""
    inputs = episode.inputs
    if method in TRANSDUCTIVE_METHODS:
        w = replace(weights, method=method)
        state, _ = transduce(inputs, w, cfg)
        table = query_posterior_table(state, center_episode(inputs), w.orientation)
        predictions = np.argmax(table.probs[:, : inputs.n_in], axis=1)
        scores = table.probs[:, inputs.n_in]
    elif method == "simpleshot":
        out = simpleshot_maxprob(inputs, cfg.eta0)
        predictions, scores = out.predictions, out.outlier_scores
    elif method == "knn":
        scores = knn_outlier_scores(inputs, knn_k)
        predictions = knn_predictions(inputs, knn_k)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return EpisodeOutcome(
        outlier_scores=np.asarray(scores, dtype=np.float64),
        predictions=np.asarray(predictions, dtype=np.int64),
        truth_flags=episode.truth.inlier_flags,
        truth_classes=episode.truth.class_indices,
    )


def _episode_records(pool: FeatureSet, cfg: SuiteConfig, index: int) -> list[dict]:
    seed = derive_seed(cfg.master_seed, index)
    spec = replace(cfg.base_spec, seed=seed)
    try:
        episode = sample_episode(pool, spec)
        records = []
        for method in cfg.methods:
            outcome = run_method(method, episode, cfg.weights, cfg.optim, cfg.knn_k)
            records.append({
                "episode_index": index,
                "episode_seed": seed,
                "preset": cfg.preset,
                "method": method,
                "metrics": episode_metrics(outcome),
            })
        return records
    except Exception as exc:  # recorded, run continues
        return [{
            "episode_index": index,
            "episode_seed": seed,
            "preset": cfg.preset,
            "error": f"{type(exc).__name__}: {exc}",
        }]


_WORKER: tuple[FeatureSet, SuiteConfig] | None = None


def _init_worker(pool: FeatureSet, cfg: SuiteConfig) -> None:
    global _WORKER
    _WORKER = (pool, cfg)


def _worker_run(index: int) -> list[dict]:
    pool, cfg = _WORKER
    return _episode_records(pool, cfg, index)


def run_suite(pool: FeatureSet, cfg: SuiteConfig, jobs: int = 1) -> list[dict]:
    """All episodes x methods; records come back ordered by episode index."""
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if jobs == 1 or cfg.episodes == 1:
        nested = [_episode_records(pool, cfg, i) for i in range(cfg.episodes)]
    else:
        if kernels.active_backend() == "numba":
            _warm_kernels()
        ctx = multiprocessing.get_context()
        with ctx.Pool(jobs, initializer=_init_worker, initargs=(pool, cfg)) as p:
            nested = p.map(_worker_run, range(cfg.episodes))
    return [rec for group in nested for rec in group]


def _warm_kernels() -> None:
    """Trigger JIT compilation in the parent so forked workers inherit it."""
    us = np.eye(2, 3)
    uq = np.eye(2, 3)
    ys = np.array([0, 1], dtype=np.int64)
    c = np.eye(2, 3) + 0.1
    one = np.ones(2)
    kernels.ostim_loss_grad(us, ys, uq, c, one, np.zeros(2), 1.0, 1.0, 1.0)
    kernels.eol_loss_grad(us, ys, uq, c, one, np.zeros(2), 1.0, 1.0, 1.0, 0.5, 1.0)


def summarize(records: list[dict], methods: tuple[str, ...], preset: str) -> list[dict]:
    """Long-format mean/ci95/n rows, fixed method-then-metric order."""
    rows = []
    for method in methods:
        values: dict[str, list] = {m: [] for m in METRIC_NAMES}
        for rec in records:
            if rec.get("method") == method and "metrics" in rec:
                for m in METRIC_NAMES:
                    values[m].append(rec["metrics"][m])
        for m in METRIC_NAMES:
            summary = aggregate(m, values[m])
            rows.append({
                "method": method,
                "preset": preset,
                "metric": m,
                "mean": None if summary is None else summary.mean,
                "ci95": None if summary is None else summary.ci95,
                "n": 0 if summary is None else summary.n,
            })
    return rows


def _fmt(x) -> str:
    if x is None:
        return ""
    return f"{x:.12g}"


def write_outcomes(path: str, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_summary_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method,preset,metric,mean,ci95,n\n")
        for r in rows:
            fh.write(
                f"{r['method']},{r['preset']},{r['metric']},"
                f"{_fmt(r['mean'])},{_fmt(r['ci95'])},{r['n']}\n"
            )


def write_summary_json(path: str, rows: list[dict], config_echo: dict,
                       failures: list[dict]) -> None:
    payload = {
        "backend": kernels.active_backend(),
        "config": config_echo,
        "rows": rows,
        "failures": failures,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _wide_metrics(records: list[dict], method: str) -> dict:
    done = [r for r in records if r.get("method") == method and "metrics" in r]
    cells = {"n": len(done)}
    for m in METRIC_NAMES:
        summary = aggregate(m, [r["metrics"][m] for r in done])
        cells[f"{m}_mean"] = None if summary is None else summary.mean
        cells[f"{m}_ci95"] = None if summary is None else summary.ci95
    return cells


def sweep_b(
    pool: FeatureSet,
    episodes: int,
    b_grid: tuple[float, ...],
    master_seed: int,
    optim: OptimConfig,
    weights: LossWeights,
    jobs: int = 1,
    presets: tuple[str, ...] = ("ood20", "ood50", "ood80"),
    k_shot: int = 5,
) -> dict:
    """Balancing-prior sweep: each preset runs every b over shared episodes.

    The episode seed depends only on (master_seed, index), so within a
    preset every b value sees identical episodes and the curves differ only
    through b.
    """
    from .episodes import preset_spec

    rows = []
    failures = []
    argmax_auroc: dict[str, float] = {}
    for preset in presets:
        best_b, best_auroc = None, -np.inf
        for b in b_grid:
            cfg = SuiteConfig(
                base_spec=preset_spec(preset, k_shot=k_shot),
                episodes=episodes,
                methods=(EOL,),
                weights=replace(weights, method=EOL, b=float(b)),
                optim=optim,
                master_seed=master_seed,
                preset=preset,
            )
            records = run_suite(pool, cfg, jobs)
            failures.extend(r for r in records if "error" in r)
            row = {"preset": preset, "b": float(b)}
            row.update(_wide_metrics(records, EOL))
            rows.append(row)
            if row["auroc_mean"] is not None and row["auroc_mean"] > best_auroc:
                best_auroc, best_b = row["auroc_mean"], float(b)
        argmax_auroc[preset] = best_b
    return {"rows": rows, "argmax_auroc": argmax_auroc, "failures": failures}


ABLATION_COMBOS = (
    ("none", False, False),
    ("eta", True, False),
    ("delta", False, True),
    ("eta+delta", True, True),
)


def ablate(
    pool: FeatureSet,
    episodes: int,
    master_seed: int,
    optim: OptimConfig,
    weights: LossWeights,
    jobs: int = 1,
    presets: tuple[str, ...] = ("ood20", "ood50", "ood80"),
    k_shot: int = 5,
) -> dict:
    """Calibration ablation: the four eta/delta flag combinations per preset
    over shared episodes; b follows the per-preset default."""
    from .episodes import preset_spec

    rows = []
    failures = []
    for preset in presets:
        b = PRESET_B.get(preset, weights.b)
        for name, opt_eta, opt_delta in ABLATION_COMBOS:
            cfg = SuiteConfig(
                base_spec=preset_spec(preset, k_shot=k_shot),
                episodes=episodes,
                methods=(EOL,),
                weights=replace(weights, method=EOL, b=b),
                optim=replace(optim, optimize_eta=opt_eta, optimize_delta=opt_delta),
                master_seed=master_seed,
                preset=preset,
            )
            records = run_suite(pool, cfg, jobs)
            failures.extend(r for r in records if "error" in r)
            row = {"preset": preset, "calibration": name, "b": b}
            row.update(_wide_metrics(records, EOL))
            rows.append(row)
    return {"rows": rows, "failures": failures}


def write_wide_csv(path: str, rows: list[dict], key_cols: tuple[str, ...]) -> None:
    metric_cols = [f"{m}_{s}" for m in METRIC_NAMES for s in ("mean", "ci95")]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(key_cols) + "," + ",".join(metric_cols) + ",n\n")
        for r in rows:
            keys = [str(r[k]) for k in key_cols]
            cells = [_fmt(r[c]) for c in metric_cols]
            fh.write(",".join(keys) + "," + ",".join(cells) + f",{r['n']}\n")


def bench_run(pool: FeatureSet, cfg: SuiteConfig, jobs: int, out_dir: str) -> list[dict]:
    """Full bench command: run, aggregate, write the three report files.

    Returns the failure records (empty on a fully clean run).
    """
    os.makedirs(out_dir, exist_ok=True)
    records = run_suite(pool, cfg, jobs)
    failures = [r for r in records if "error" in r]
    rows = summarize(records, cfg.methods, cfg.preset)
    write_outcomes(os.path.join(out_dir, "outcomes.jsonl"), records)
    write_summary_csv(os.path.join(out_dir, "summary.csv"), rows)
    config_echo = {
        "preset": cfg.preset,
        "episodes": cfg.episodes,
        "methods": list(cfg.methods),
        "master_seed": cfg.master_seed,
        "episode_spec": asdict(replace(cfg.base_spec, seed=0)),
        "weights": asdict(cfg.weights),
        "optim": asdict(cfg.optim),
        "knn_k": cfg.knn_k,
        "eol_orientation": cfg.weights.orientation,
    }
    write_summary_json(os.path.join(out_dir, "summary.json"), rows, config_echo, failures)
    return failures
