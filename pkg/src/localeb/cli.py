"""Command-line pipeline with a reproducibility manifest per run.

Subcommands: ingest, adapt-asos, features, simulate, evaluate, sweep,
theory-check, reproduce, synth.  Progress goes to stderr; machine-readable
output goes to files only.  Exit codes: 0 ok, 2 usage, 3 data validation,
4 runtime failure.
"""

from __future__ import annotations

import argparse
import ast
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    ExperimentSeries,
    adapt_asos_file,
    parse_snapshot_file,
    write_snapshot_csv,
)
from .errors import (
    DegenerateSeriesError,
    InsufficientDataError,
    LocalEbError,
    ParseError,
    ValidationError,
)
from .evaluation import (
    emit_report,
    mixture_dominance_check,
    score_methods,
    sensitivity_sweep,
    write_dominance_report,
)
from .semisynth import CLASSICAL, RAW, MethodKey, ResultStore, fit_nhpp, run_bootstrap
from .shrinkage import MixturePriorSpec
from .similarity import (
    SimilarityConfig,
    normalized_shape,
    pairwise_distance_matrix,
    write_distance_csv,
    write_shapes_csv,
)
from .synthetic import TwoClusterConfig, make_two_cluster_corpus

OUT_ENV_VAR = "LOCALEB_OUT"
DEFAULT_METHODS = "raw,classical-eb,outcome-only,process-only,cfshn"
DEFAULT_Q_GRID = "6,8,10,12,14,16,18,20"

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out_dir: Path, subcommand: str, config: dict, inputs: list[Path]) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "subcommand": subcommand,
        "version": __version__,
        "config": config,
        "inputs": {str(p): sha256_file(p) for p in inputs},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _config_dict(args: argparse.Namespace) -> dict:
    skip = {"func", "config"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def parse_config_file(path: Path) -> dict:
    """Flat `key = value` file; '#' starts a comment; flags always win."""
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value' in config file", line=lineno)
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        try:
            values[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            values[key] = value
    return values


def _int_grid(text: str) -> list[int]:
    return [int(x) for x in str(text).split(",") if str(x).strip()]


def _float_grid(text: str) -> list[float]:
    return [float(x) for x in str(text).split(",") if str(x).strip()]


def _load_series(data: str, metric: str | None) -> list[ExperimentSeries]:
    path = Path(data)
    if not path.exists():
        raise FileNotFoundError(f"no such data file: {path}")
    series = parse_snapshot_file(path)
    if metric is not None:
        series = [s for s in series if s.metric_id == metric]
        if not series:
            raise ValidationError(f"no series with metric_id={metric!r}")
    metrics = sorted({s.metric_id for s in series})
    if len(metrics) > 1:
        raise ValidationError(
            f"multiple metric ids present ({', '.join(metrics)}); pass --metric"
        )
    if not series:
        raise ValidationError("dataset is empty")
    return sorted(series, key=lambda s: s.experiment_id)


def _similarity_config(args) -> SimilarityConfig:
    return SimilarityConfig(
        rho=args.rho,
        grid_size=args.grid_size,
        bandwidth=args.bandwidth,
        band_fraction=args.alpha,
    )


def _build_features(series_list, config: SimilarityConfig):
    return [normalized_shape(s, config) for s in series_list]


def _distance_matrices(features, config: SimilarityConfig, rhos) -> dict[float, np.ndarray]:
    out = {}
    for rho in sorted(set(rhos)):
        cfg = SimilarityConfig(
            rho=rho,
            grid_size=config.grid_size,
            bandwidth=config.bandwidth,
            band_fraction=config.band_fraction,
        )
        matrix, _ = pairwise_distance_matrix(features, cfg)
        out[rho] = matrix
    return out


def _method_keys(methods: list[str], q_grid: list[int], rho: float, m0: int) -> list[MethodKey]:
    keys: list[MethodKey] = []
    for name in methods:
        if name == "raw":
            keys.append(RAW)
        elif name == "classical-eb":
            keys.append(CLASSICAL)
        elif name == "outcome-only":
            keys.extend(MethodKey(name, q=q) for q in q_grid)
        elif name == "process-only":
            keys.extend(MethodKey(name, q=q, rho=rho) for q in q_grid)
        elif name == "cfshn":
            keys.extend(MethodKey(name, q=q, rho=rho, m0=m0) for q in q_grid)
        else:
            raise ValueError(f"unknown method {name!r}")
    return keys


def _simulate_store(args, series_list) -> ResultStore:
    sim_config = _similarity_config(args)
    models = [fit_nhpp(s, noise_scale=args.noise_scale) for s in series_list]
    methods = _method_keys(
        [m.strip() for m in args.methods.split(",") if m.strip()],
        _int_grid(args.q_grid),
        args.rho,
        args.m0,
    )
    rhos = {k.rho for k in methods if k.rho is not None}
    matrices = {}
    if rhos:
        features = _build_features(series_list, sim_config)
        matrices = _distance_matrices(features, sim_config, rhos)
    _say(
        f"simulating {args.replicates} replicates x {len(models)} experiments "
        f"x {len(methods)} method configs"
    )
    return run_bootstrap(
        models,
        methods,
        args.replicates,
        args.seed,
        distance_matrices=matrices,
        n_folds=args.folds,
        mode=args.mode,
        include_target=args.include_target,
        workers=args.workers,
        dataset_hash=sha256_file(Path(args.data)),
    )


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_ingest(args) -> int:
    out_dir = Path(args.out_dir)
    series = _load_series(args.data, args.metric)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_snapshot_csv(series, out_dir / "canonical.csv")
    write_manifest(out_dir, "ingest", _config_dict(args), [Path(args.data)])
    _say(f"ingested {len(series)} series -> {out_dir / 'canonical.csv'}")
    return EXIT_OK


def cmd_adapt_asos(args) -> int:
    series = adapt_asos_file(Path(args.data), time_unit=args.time_unit)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_snapshot_csv(series, out)
    write_manifest(out.parent, "adapt-asos", _config_dict(args), [Path(args.data)])
    _say(f"adapted {len(series)} series -> {out}")
    return EXIT_OK


def cmd_features(args) -> int:
    out_dir = Path(args.out_dir)
    series = _load_series(args.data, args.metric)
    config = _similarity_config(args)
    feats = _build_features(series, config)
    ids = [s.experiment_id for s in series]
    matrix, norms = pairwise_distance_matrix(feats, config)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_shapes_csv(feats, ids, out_dir / "shapes.csv")
    write_distance_csv(matrix, ids, out_dir / "distances.csv")
    (out_dir / "normalizers.json").write_text(
        json.dumps(
            {"med_dtw": norms.med_dtw, "mad_log_n": norms.mad_log_n}, indent=2, sort_keys=True
        )
        + "\n",
        encoding="utf-8",
    )
    write_manifest(out_dir, "features", _config_dict(args), [Path(args.data)])
    _say(f"features for {len(ids)} experiments -> {out_dir}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    out_dir = Path(args.out_dir)
    series = _load_series(args.data, args.metric)
    store = _simulate_store(args, series)
    store.to_dir(out_dir / "store")
    write_manifest(out_dir, "simulate", _config_dict(args), [Path(args.data)])
    _say(f"result store -> {out_dir / 'store'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    out_dir = Path(args.out_dir)
    store = ResultStore.from_dir(Path(args.store))
    scores = score_methods(store)
    emit_report(scores, out_dir)
    write_manifest(
        out_dir, "evaluate", _config_dict(args), [Path(args.store) / "manifest.json"]
    )
    _say(f"scored {len(scores)} method configs -> {out_dir / 'scores.csv'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    out_dir = Path(args.out_dir)
    series = _load_series(args.data, args.metric)
    sim_config = _similarity_config(args)
    models = [fit_nhpp(s, noise_scale=args.noise_scale) for s in series]
    features = _build_features(series, sim_config)
    rho_grid = _float_grid(args.rho_grid)
    matrices = _distance_matrices(features, sim_config, set(rho_grid) | {args.rho})
    _say(f"sweep over q={args.q_grid} rho={args.rho_grid} m0={args.m0_grid}")
    store, scores = sensitivity_sweep(
        models,
        matrices,
        args.replicates,
        args.seed,
        q_grid=_int_grid(args.q_grid),
        rho_grid=rho_grid,
        m0_grid=_int_grid(args.m0_grid),
        rho_default=args.rho,
        m0_default=args.m0,
        n_folds=args.folds,
        mode=args.mode,
        workers=args.workers,
    )
    store.to_dir(out_dir / "store")
    emit_report(scores, out_dir)
    write_manifest(out_dir, "sweep", _config_dict(args), [Path(args.data)])
    _say(f"sweep scores -> {out_dir / 'scores.csv'}")
    return EXIT_OK


def _default_spec() -> MixturePriorSpec:
    return MixturePriorSpec(
        weights=(0.5, 0.5), means=(-1.0, 1.0), tau2s=(0.0, 0.0), feature_informativeness=1.0
    )


def cmd_theory_check(args) -> int:
    out_dir = Path(args.out_dir)
    if args.spec_json:
        payload = json.loads(Path(args.spec_json).read_text(encoding="utf-8"))
        spec = MixturePriorSpec(
            weights=tuple(payload["weights"]),
            means=tuple(payload["means"]),
            tau2s=tuple(payload["tau2s"]),
            feature_informativeness=payload.get("feature_informativeness", 1.0),
        )
    else:
        spec = _default_spec()
    report = mixture_dominance_check(
        spec, args.v, mc_draws=args.draws, seed=args.seed, include_plugin=args.plugin
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    write_dominance_report(report, out_dir / "dominance_report.json")
    write_manifest(
        out_dir,
        "theory-check",
        _config_dict(args),
        [Path(args.spec_json)] if args.spec_json else [],
    )
    _say(
        f"gap={report.gap:.6f} (mcse {report.mcse_gap:.2e}) "
        f"bound={report.theoretical_gap_lower_bound:.6f} pass={report.passed}"
    )
    return EXIT_OK


def cmd_reproduce(args) -> int:
    out_dir = Path(args.out_dir)
    series = _load_series(args.data, args.metric)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_snapshot_csv(series, out_dir / "canonical.csv")

    config = _similarity_config(args)
    feats = _build_features(series, config)
    ids = [s.experiment_id for s in series]
    matrix, _ = pairwise_distance_matrix(feats, config)
    write_shapes_csv(feats, ids, out_dir / "shapes.csv")
    write_distance_csv(matrix, ids, out_dir / "distances.csv")

    store = _simulate_store(args, series)
    store.to_dir(out_dir / "store")
    scores = score_methods(store)
    emit_report(scores, out_dir)
    write_manifest(out_dir, "reproduce", _config_dict(args), [Path(args.data)])
    _say(f"full pipeline -> {out_dir}")
    return EXIT_OK


def cmd_synth(args) -> int:
    config = TwoClusterConfig(
        n_experiments=args.n_experiments,
        cluster_effect_gap=args.effect_gap,
        sublevel_gap=args.sublevel_gap,
        within_sublevel_sd=args.within_sd,
        source_noise=not args.exact_source,
    )
    series, truths = make_two_cluster_corpus(args.seed, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_snapshot_csv(series, out)
    truth_path = out.with_suffix(".truth.json")
    truth_path.write_text(
        json.dumps([asdict(t) for t in truths], indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    write_manifest(out.parent, "synth", _config_dict(args), [])
    _say(f"synthetic corpus ({args.n_experiments} experiments) -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(sub, data=True, out_dir=True):
    sub.add_argument("--config", default=None, help="key = value config file; flags win")
    if data:
        sub.add_argument("--data", required=True, help="snapshot CSV in the canonical schema")
        sub.add_argument("--metric", default=None, help="metric id to analyze")
    if out_dir:
        sub.add_argument(
            "--out-dir",
            default=os.environ.get(OUT_ENV_VAR, "out"),
            help=f"output directory (env {OUT_ENV_VAR})",
        )


def _add_similarity(sub):
    sub.add_argument("--rho", type=float, default=0.75, help="shape-scale weight")
    sub.add_argument("--grid-size", type=int, default=500, help="shape grid bins L")
    sub.add_argument("--bandwidth", type=float, default=0.04, help="shape smoothing bandwidth")
    sub.add_argument("--alpha", type=float, default=0.1, help="DTW band fraction")


def _add_bootstrap(sub):
    sub.add_argument("--replicates", type=int, default=1000, help="bootstrap replicates B")
    sub.add_argument("--folds", type=int, default=5, help="cross-fitting folds K")
    sub.add_argument("--seed", type=int, default=0, help="master seed")
    sub.add_argument("--m0", type=int, default=30, help="candidate set size")
    sub.add_argument("--q-grid", default=DEFAULT_Q_GRID, help="neighborhood sizes")
    sub.add_argument(
        "--mode", choices=["rotate", "pilot-split"], default="rotate", help="cross-fitting protocol"
    )
    sub.add_argument("--include-target", action="store_true",
                     help="ablation: include the target in the local fit")
    sub.add_argument("--noise-scale", type=float, default=1.0, help="outcome variance multiplier")
    sub.add_argument(
        "--workers", type=int, default=os.cpu_count() or 1, help="worker pool size"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="localeb",
        description="Local empirical Bayes shrinkage for A/B-test effect estimation.",
    )
    parser.add_argument("--version", action="version", version=f"localeb {__version__}")
    subs = parser.add_subparsers(dest="subcommand", required=True, metavar="SUBCOMMAND")
    fmt = argparse.ArgumentDefaultsHelpFormatter

    sub = subs.add_parser("ingest", help="validate and canonicalize a snapshot file",
                          formatter_class=fmt)
    _add_common(sub)
    sub.set_defaults(func=cmd_ingest)

    sub = subs.add_parser("adapt-asos", help="convert an ASOS-format file to the canonical schema",
                          formatter_class=fmt)
    sub.add_argument("--config", default=None, help="key = value config file; flags win")
    sub.add_argument("--data", required=True, help="ASOS-format CSV")
    sub.add_argument("--out", required=True, help="canonical CSV to write")
    sub.add_argument("--time-unit", choices=["days", "hours"], default="days",
                     help="unit of the time-since-start column")
    sub.set_defaults(func=cmd_adapt_asos)

    sub = subs.add_parser("features", help="shape curves and the pairwise distance matrix",
                          formatter_class=fmt)
    _add_common(sub)
    _add_similarity(sub)
    sub.set_defaults(func=cmd_features)

    sub = subs.add_parser("simulate", help="fit NHPP models and run the bootstrap",
                          formatter_class=fmt)
    _add_common(sub)
    _add_similarity(sub)
    _add_bootstrap(sub)
    sub.add_argument("--methods", default=DEFAULT_METHODS, help="comma-separated method names")
    sub.set_defaults(func=cmd_simulate)

    sub = subs.add_parser("evaluate", help="score a result store and emit reports",
                          formatter_class=fmt)
    sub.add_argument("--config", default=None, help="key = value config file; flags win")
    sub.add_argument("--store", required=True, help="result store directory")
    sub.add_argument(
        "--out-dir", default=os.environ.get(OUT_ENV_VAR, "out"),
        help=f"output directory (env {OUT_ENV_VAR})",
    )
    sub.set_defaults(func=cmd_evaluate)

    sub = subs.add_parser("sweep", help="hyperparameter sensitivity sweeps",
                          formatter_class=fmt)
    _add_common(sub)
    _add_similarity(sub)
    _add_bootstrap(sub)
    sub.add_argument("--rho-grid", default="0.5,0.6,0.75,0.9", help="shape-scale weights")
    sub.add_argument("--m0-grid", default="20,30,40", help="candidate set sizes")
    sub.set_defaults(func=cmd_sweep)

    sub = subs.add_parser("theory-check", help="Monte Carlo dominance check",
                          formatter_class=fmt)
    sub.add_argument("--config", default=None, help="key = value config file; flags win")
    sub.add_argument("--spec-json", default=None, help="mixture prior spec as JSON")
    sub.add_argument("--v", type=float, default=1.0, help="sampling variance")
    sub.add_argument("--draws", type=int, default=1_000_000, help="Monte Carlo draws")
    sub.add_argument("--seed", type=int, default=0, help="Monte Carlo seed")
    sub.add_argument("--plugin", action="store_true", help="also run plug-in variants")
    sub.add_argument(
        "--out-dir", default=os.environ.get(OUT_ENV_VAR, "out"),
        help=f"output directory (env {OUT_ENV_VAR})",
    )
    sub.set_defaults(func=cmd_theory_check)

    sub = subs.add_parser("reproduce", help="full pipeline with reference defaults",
                          formatter_class=fmt)
    _add_common(sub)
    _add_similarity(sub)
    _add_bootstrap(sub)
    sub.add_argument("--methods", default=DEFAULT_METHODS, help="comma-separated method names")
    sub.set_defaults(func=cmd_reproduce)

    sub = subs.add_parser("synth", help="generate a two-cluster synthetic corpus",
                          formatter_class=fmt)
    sub.add_argument("--config", default=None, help="key = value config file; flags win")
    sub.add_argument("--out", required=True, help="canonical CSV to write")
    sub.add_argument("--n-experiments", type=int, default=40, help="corpus size")
    sub.add_argument("--seed", type=int, default=0, help="generator seed")
    sub.add_argument("--effect-gap", type=float, default=0.5, help="between-cluster effect gap")
    sub.add_argument("--sublevel-gap", type=float, default=0.2,
                     help="within-cluster effect sub-level gap")
    sub.add_argument("--within-sd", type=float, default=0.01, help="within-sub-level effect sd")
    sub.add_argument("--exact-source", action="store_true",
                     help="noise-free source moments (reference equals the true effect)")
    sub.set_defaults(func=cmd_synth)

    return parser, subs


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()

    # apply config-file values as subparser defaults so explicit flags win
    if "--config" in argv:
        idx = argv.index("--config")
        if idx + 1 < len(argv) and argv and argv[0] in subs.choices:
            try:
                values = parse_config_file(Path(argv[idx + 1]))
            except FileNotFoundError as exc:
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_DATA
            except ParseError as exc:
                print(f"error: bad config file: {exc}", file=sys.stderr)
                return EXIT_USAGE
            sub = subs.choices[argv[0]]
            known = {a.dest for a in sub._actions}
            sub.set_defaults(**{k: v for k, v in values.items() if k in known})

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ParseError,
        ValidationError,
        InsufficientDataError,
        DegenerateSeriesError,
        FileNotFoundError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (LocalEbError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
