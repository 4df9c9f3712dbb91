"""Command-line front end.

Subcommands: ``bench``, ``sweep-b``, ``ablate``, ``gen-synthetic``,
``check-grad``. A flat ``key = value`` config file can seed any flags
(``--config run.cfg``); explicit flags override the file.

Exit codes: 0 on success, 1 for configuration errors, 2 when some episodes
failed or a gradient check did not pass (partial failure; whatever completed
is still written).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import kernels
from .baselines import DEFAULT_KNN_K
from .bench import (
    PRESET_B,
    SuiteConfig,
    ablate,
    bench_run,
    sweep_b,
    write_wide_csv,
)
from .data import (
    FeatureSet,
    SyntheticSpec,
    load_feature_table,
    synth_gaussian_features,
    write_feature_table,
)
from .episodes import EpisodeSpec, imbalance_presets, preset_spec
from .errors import ConfigError, OsfslError
from .losses import LossWeights
from .model import DEFAULT_ETA0, ORIENT_FLIPPED, ORIENT_VERBATIM
from .optim import OptimConfig, run_gradient_check

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2

PRESET_NAMES = tuple(p.name for p in imbalance_presets())


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as ConfigError (exit code 1)."""

    def error(self, message):
        raise ConfigError(message)


def _add_shared(p: _Parser) -> None:
    p.add_argument("--pool", help="feature table path (default: synthetic pool)")
    p.add_argument("--preset", choices=PRESET_NAMES,
                   help="query-mix preset; also sets the default b")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--methods", default="eol,ostim,simpleshot,knn",
                   help="comma-separated subset of eol,ostim,simpleshot,knn")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--config", help="flat key=value config file")
    # episode shape (preset overrides the query mix)
    p.add_argument("--n-in", type=int, default=5)
    p.add_argument("--n-out-classes", type=int, default=5)
    p.add_argument("--k-shot", type=int, default=5)
    p.add_argument("--k-in-query", type=int, default=15)
    p.add_argument("--k-out-query", type=int, default=15)
    # synthetic pool fallback
    p.add_argument("--synth-classes", type=int, default=20)
    p.add_argument("--synth-per-class", type=int, default=60)
    p.add_argument("--synth-dim", type=int, default=16)
    p.add_argument("--synth-center-scale", type=float, default=2.5)
    p.add_argument("--synth-sigma", type=float, default=1.0)
    p.add_argument("--pool-seed", type=int, default=1)
    # method knobs
    p.add_argument("--b", type=float, help="balancing prior (default: per preset)")
    p.add_argument("--lambda-ce", type=float, default=1.0)
    p.add_argument("--lambda-ma", type=float, default=1.0)
    p.add_argument("--lambda-co", type=float, default=1.0)
    p.add_argument("--no-eta", action="store_true", help="freeze the logit scales")
    p.add_argument("--no-delta", action="store_true", help="freeze the logit shifts")
    p.add_argument("--step-size", type=float, default=0.05)
    p.add_argument("--iters", type=int, default=150)
    p.add_argument("--grad-clip", type=float, default=10.0)
    p.add_argument("--eta0", type=float, default=DEFAULT_ETA0)
    p.add_argument("--knn-k", type=int, default=DEFAULT_KNN_K)
    p.add_argument("--eol-orientation", choices=(ORIENT_FLIPPED, ORIENT_VERBATIM),
                   default=ORIENT_FLIPPED,
                   help="sign of the logit term in the inlier score")


def build_parser() -> _Parser:
    parser = _Parser(prog="osfsl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", parents=[], help="run methods over shared episodes")
    _add_shared(p)

    p = sub.add_parser("sweep-b", help="balancing-prior sweep over imbalance presets")
    _add_shared(p)
    p.add_argument("--b-grid", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
                   help="comma-separated b values in (0,1)")

    p = sub.add_parser("ablate", help="eta/delta calibration ablation grid")
    _add_shared(p)

    p = sub.add_parser("gen-synthetic", help="write a synthetic feature table")
    p.add_argument("path", help="output file")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--per-class", type=int, default=60)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--center-scale", type=float, default=2.5)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--format", choices=("text", "binary"), default="text")

    p = sub.add_parser("check-grad", help="analytic gradients vs central differences")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=208)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--out", help="optional directory for check_grad.json")
    return parser


def load_config_file(path: str) -> dict[str, str]:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    entries: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            entries[key.strip().replace("_", "-")] = value.strip()
    return entries


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _config_tokens(entries: dict[str, str]) -> list[str]:
    tokens: list[str] = []
    for key, value in entries.items():
        low = value.lower()
        if low in _TRUE:
            tokens.append(f"--{key}")
        elif low in _FALSE:
            continue
        else:
            tokens.extend([f"--{key}", value])
    return tokens


def _merge_config(argv: list[str]) -> list[str]:
    """Insert config-file tokens after the subcommand so CLI flags win."""
    path = None
    for i, tok in enumerate(argv):
        if tok == "--config":
            if i + 1 >= len(argv):
                raise ConfigError("--config requires a path")
            path = argv[i + 1]
        elif tok.startswith("--config="):
            path = tok.split("=", 1)[1]
    if path is None:
        return argv
    tokens = _config_tokens(load_config_file(path))
    return argv[:1] + tokens + argv[1:]


def _resolve_pool(args) -> FeatureSet:
    if args.pool:
        return load_feature_table(args.pool)
    return synth_gaussian_features(SyntheticSpec(
        num_classes=args.synth_classes,
        samples_per_class=args.synth_per_class,
        dim=args.synth_dim,
        center_scale=args.synth_center_scale,
        within_class_sigma=args.synth_sigma,
        seed=args.pool_seed,
    ))


def _resolve_spec(args) -> tuple[EpisodeSpec, str]:
    if args.preset:
        return preset_spec(args.preset, k_shot=args.k_shot), args.preset
    spec = EpisodeSpec(
        n_in=args.n_in,
        n_out_classes=args.n_out_classes,
        k_shot=args.k_shot,
        k_in_query=args.k_in_query,
        k_out_query=args.k_out_query,
    )
    return spec, "custom"


def _resolve_weights(args, preset: str) -> LossWeights:
    b = args.b if args.b is not None else PRESET_B.get(preset, 0.5)
    return LossWeights(
        lambda_ce=args.lambda_ce,
        lambda_ma=args.lambda_ma,
        lambda_co=args.lambda_co,
        b=b,
        method="eol",
        orientation=args.eol_orientation,
    )


def _resolve_optim(args) -> OptimConfig:
    return OptimConfig(
        step_size=args.step_size,
        iterations=args.iters,
        optimize_eta=not args.no_eta,
        optimize_delta=not args.no_delta,
        grad_clip=args.grad_clip,
        eta0=args.eta0,
    )


def _methods(args) -> tuple[str, ...]:
    return tuple(m.strip() for m in args.methods.split(",") if m.strip())


def cmd_bench(args) -> int:
    pool = _resolve_pool(args)
    spec, preset = _resolve_spec(args)
    cfg = SuiteConfig(
        base_spec=spec,
        episodes=args.episodes,
        methods=_methods(args),
        weights=_resolve_weights(args, preset),
        optim=_resolve_optim(args),
        master_seed=args.seed,
        preset=preset,
        knn_k=args.knn_k,
    )
    failures = bench_run(pool, cfg, args.jobs, args.out)
    if failures:
        print(f"bench: {len(failures)} episode(s) failed; see summary.json",
              file=sys.stderr)
        return EXIT_PARTIAL
    print(f"bench: wrote {args.out}/outcomes.jsonl, summary.csv, summary.json")
    return EXIT_OK


def cmd_sweep_b(args) -> int:
    grid = tuple(float(tok) for tok in args.b_grid.split(","))
    if any(not 0.0 < b < 1.0 for b in grid):
        raise ConfigError("b grid values must lie strictly in (0, 1)")
    pool = _resolve_pool(args)
    result = sweep_b(
        pool,
        episodes=args.episodes,
        b_grid=grid,
        master_seed=args.seed,
        optim=_resolve_optim(args),
        weights=_resolve_weights(args, "ood50"),
        jobs=args.jobs,
        k_shot=args.k_shot,
    )
    os.makedirs(args.out, exist_ok=True)
    write_wide_csv(os.path.join(args.out, "sweep.csv"), result["rows"], ("preset", "b"))
    with open(os.path.join(args.out, "sweep.json"), "w", encoding="utf-8") as fh:
        json.dump({
            "backend": kernels.active_backend(),
            "b_grid": list(grid),
            "argmax_auroc": result["argmax_auroc"],
            "rows": result["rows"],
            "failures": result["failures"],
            "eol_orientation": args.eol_orientation,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if result["failures"]:
        print(f"sweep-b: {len(result['failures'])} episode(s) failed", file=sys.stderr)
        return EXIT_PARTIAL
    print(f"sweep-b: wrote {args.out}/sweep.csv, sweep.json "
          f"(argmax b per preset: {result['argmax_auroc']})")
    return EXIT_OK


def cmd_ablate(args) -> int:
    if "eol" not in _methods(args):
        raise ConfigError("ablate requires the eol method")
    pool = _resolve_pool(args)
    result = ablate(
        pool,
        episodes=args.episodes,
        master_seed=args.seed,
        optim=_resolve_optim(args),
        weights=_resolve_weights(args, "ood50"),
        jobs=args.jobs,
        k_shot=args.k_shot,
    )
    os.makedirs(args.out, exist_ok=True)
    write_wide_csv(os.path.join(args.out, "ablation.csv"), result["rows"],
                   ("preset", "calibration"))
    with open(os.path.join(args.out, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump({
            "backend": kernels.active_backend(),
            "rows": result["rows"],
            "failures": result["failures"],
            "eol_orientation": args.eol_orientation,
        }, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if result["failures"]:
        print(f"ablate: {len(result['failures'])} episode(s) failed", file=sys.stderr)
        return EXIT_PARTIAL
    print(f"ablate: wrote {args.out}/ablation.csv, ablation.json")
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(
        num_classes=args.classes,
        samples_per_class=args.per_class,
        dim=args.dim,
        center_scale=args.center_scale,
        within_class_sigma=args.sigma,
        seed=args.seed,
    )
    fs = synth_gaussian_features(spec)
    write_feature_table(fs, args.path, args.format)
    print(f"gen-synthetic: wrote {len(fs)} records (dim {fs.dim}) to {args.path}")
    return EXIT_OK


def cmd_check_grad(args) -> int:
    if args.trials < 1:
        raise ConfigError("trials must be >= 1")
    report = run_gradient_check(seed=args.seed, trials=args.trials,
                                tolerance=args.tolerance)
    worst = report["worst_relative_error"]
    print(f"check-grad: {report['trials']} trials, tolerance {report['tolerance']:g}")
    for block, err in worst.items():
        print(f"  worst relative error [{block}]: {err:.3e}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "check_grad.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if not report["passed"]:
        blocks = sorted({f['block'] for f in report['failures']})
        print(f"check-grad: FAIL ({len(report['failures'])} trial(s), "
              f"blocks: {', '.join(blocks)})", file=sys.stderr)
        return EXIT_PARTIAL
    print("check-grad: PASS")
    return EXIT_OK


_COMMANDS = {
    "bench": cmd_bench,
    "sweep-b": cmd_sweep_b,
    "ablate": cmd_ablate,
    "gen-synthetic": cmd_gen_synthetic,
    "check-grad": cmd_check_grad,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and argv[0] in _COMMANDS:
            argv = _merge_config(argv)
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OsfslError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
