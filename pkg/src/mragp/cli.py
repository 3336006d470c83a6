"""Batch front door: fit, simulate, oracle-predict, metrics.

Configuration is a flat key = value file (see README for every key).
Numeric outputs are deterministic for a fixed seed and thread budget;
anything wall-clock dependent goes to stderr, never into output files.

Exit codes: 0 success, 2 bad configuration, 3 bad data, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._core import BACKEND
from .data import TableSchema, ingest_csv, parse_covariate_specs
from .dense import dense_predict
from .errors import (
    AllEvaluationsFailedError,
    CapExceededError,
    ConfigError,
    DataError,
    MragpError,
)
from .inference import (
    Posterior,
    build_proposal,
    find_mode,
    importance_sample,
    marginal_summaries,
    predict,
    summarize_atoms,
)
from .kernels import HyperParams, PriorSpec
from .partition import PartitionConfig, build_tree, place_knots
from .report import (
    compute_metrics,
    write_csv,
    write_metrics_csv,
    write_params_csv,
    write_predictions_csv,
)
from .synthetic import (
    TRUE_PHI,
    TRUE_RHO,
    TRUE_SIGMA,
    TRUE_ZETA,
    simulate_dataset,
)

# key -> (default, converter); every config key must appear here
CONFIG_KEYS = {
    "partition.lon_splits": ("2", int),
    "partition.lat_splits": ("1", int),
    "partition.time_splits": ("0", int),
    "partition.m0": ("20", int),
    "partition.growth": ("2", int),
    "partition.knots_per_region": ("", str),
    "partition.thinning_rate": ("0.5", float),
    "partition.knot_scheme": ("pred", str),
    "prior.beta_var": ("100.0", float),
    "prior.hyper_mean": ("0,0,0,0", str),
    "prior.hyper_sd": ("2,2,2,2", str),
    "prior.fixed_zeta": ("0.5", str),
    "fit.max_iter": ("25", int),
    "fit.n_is": ("100", int),
    "fit.keep_all_draws": ("true", str),
    "data.lon": ("lon", str),
    "data.lat": ("lat", str),
    "data.time": ("day", str),
    "data.response": ("y", str),
    "data.covariates": ("", str),
    "simulate.n": ("1500", int),
    "simulate.n_days": ("3", int),
    "simulate.sigma": (repr(TRUE_SIGMA), float),
    "simulate.rho": (repr(TRUE_RHO), float),
    "simulate.phi": (repr(TRUE_PHI), float),
    "simulate.zeta": (repr(TRUE_ZETA), float),
    "oracle.sigma": (repr(TRUE_SIGMA), float),
    "oracle.rho": (repr(TRUE_RHO), float),
    "oracle.phi": (repr(TRUE_PHI), float),
    "oracle.zeta": (repr(TRUE_ZETA), float),
    "threads": ("1", int),
    "seed": ("", str),
}


class RunConfig:
    def __init__(self, raw: dict):
        self.raw = dict(raw)
        self.values = {}
        for key, (default, conv) in CONFIG_KEYS.items():
            text = raw.get(key, default)
            try:
                self.values[key] = conv(text) if text != "" else None
            except ValueError:
                raise ConfigError(f"config key {key}: cannot parse {text!r}") from None

    def __getitem__(self, key):
        return self.values[key]

    def echo_lines(self):
        for key in sorted(CONFIG_KEYS):
            v = self.values[key]
            yield f"config.{key} = {'' if v is None else v}"


def load_config(path) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from None
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, val = body.split("=", 1)
            key = key.strip()
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            if key in raw:
                raise ConfigError(f"{path}:{lineno}: duplicate config key {key!r}")
            raw[key] = val.strip()
    return RunConfig(raw)


def _parse_four(text, what):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 4:
        raise ConfigError(f"{what} needs 4 comma-separated values, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{what}: cannot parse {text!r}") from None


def build_priors(cfg: RunConfig) -> PriorSpec:
    mean = _parse_four(cfg["prior.hyper_mean"], "prior.hyper_mean")
    sd = _parse_four(cfg["prior.hyper_sd"], "prior.hyper_sd")
    fixed_zeta = cfg["prior.fixed_zeta"]
    kwargs = {}
    if fixed_zeta is not None and fixed_zeta.lower() != "free":
        try:
            z = float(fixed_zeta)
        except ValueError:
            raise ConfigError(
                f"prior.fixed_zeta must be a number or 'free', got {fixed_zeta!r}"
            ) from None
        if not z > 0:
            raise ConfigError("prior.fixed_zeta must be positive")
        kwargs["fixed_log_zeta"] = float(np.log(z))
    else:
        kwargs["fixed_log_zeta"] = None
    try:
        return PriorSpec(
            beta_prior_var=cfg["prior.beta_var"],
            hyper_prior_mean=mean,
            hyper_prior_sd=sd,
            **kwargs,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def build_partition_config(cfg: RunConfig) -> PartitionConfig:
    kpr = cfg["partition.knots_per_region"]
    try:
        return PartitionConfig(
            n_lon_splits=cfg["partition.lon_splits"],
            n_lat_splits=cfg["partition.lat_splits"],
            n_time_splits=cfg["partition.time_splits"],
            m0=cfg["partition.m0"],
            growth=cfg["partition.growth"],
            knots_per_region=int(kpr) if kpr else None,
            thinning_rate=cfg["partition.thinning_rate"],
            knot_scheme=cfg["partition.knot_scheme"],
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None


def build_schema(cfg: RunConfig) -> TableSchema:
    covs = parse_covariate_specs(cfg["data.covariates"] or "")
    return TableSchema(
        lon=cfg["data.lon"],
        lat=cfg["data.lat"],
        time=cfg["data.time"],
        response=cfg["data.response"],
        covariates=tuple(covs),
    )


def _resolve_seed(args, cfg) -> int:
    if args.seed is not None:
        return args.seed
    if cfg["seed"] is not None:
        try:
            return int(cfg["seed"])
        except ValueError:
            raise ConfigError(f"config seed {cfg['seed']!r} is not an integer") from None
    raise ConfigError("a seed is required: pass --seed or set seed in the config")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


class _Stage:
    """Context manager labeling errors and timing stages on stderr."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        self.t0 = time.monotonic()
        return self

    def __exit__(self, etype, exc, tb):
        dt = time.monotonic() - self.t0
        if etype is None:
            print(f"stage {self.name}: {dt:.2f}s", file=sys.stderr)
        elif isinstance(exc, MragpError) and not getattr(exc, "stage", None):
            exc.stage = self.name
        return False


def cmd_fit(args):
    cfg = load_config(args.config)
    seed = _resolve_seed(args, cfg)
    threads = args.threads if args.threads is not None else cfg["threads"]
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    out = _out_dir(args)
    schema = build_schema(cfg)
    priors = build_priors(cfg)
    pcfg = build_partition_config(cfg)

    with _Stage("ingest"):
        train, transform = ingest_csv(args.train, schema)
        pred = None
        if args.predict_at:
            pred, _ = ingest_csv(
                args.predict_at, schema, transform=transform, require_response=False
            )
    with _Stage("partition"):
        tree = build_tree(train.points, pcfg)
        pred_pts = pred.points if (pred is not None and pcfg.knot_scheme == "pred") else None
        place_knots(tree, pred_points=pred_pts, seed=seed)
    if args.dump_tree:
        write_csv(
            out / "tree.csv",
            ["level", "index", "path", "lon_lo", "lon_hi", "lat_lo", "lat_hi",
             "t_lo", "t_hi", "n_obs", "n_knots"],
            tree.summary_rows(),
        )
    with _Stage("mode search"):
        posterior = Posterior(tree, train.points, train.X, train.y, priors)
        mode = find_mode(posterior, max_iter=cfg["fit.max_iter"])
    with _Stage("proposal"):
        prop = build_proposal(posterior, mode)
    with _Stage("importance sampling"):
        result = importance_sample(posterior, prop, cfg["fit.n_is"], seed=seed + 1)
    with _Stage("summaries"):
        free_names = [
            name
            for name, fixed in zip(
                ("log_sigma", "log_rho", "log_phi", "log_zeta"),
                priors.fixed_values,
            )
            if fixed is None
        ]
        hyper, mean_params = marginal_summaries(
            result, mean_param_indices=range(train.p)
        )
        natural = [
            summarize_atoms(np.exp(result.draws[:, j]), result.weights)
            for j in range(result.draws.shape[1])
        ]
        write_params_csv(
            out / "hyperparams.csv",
            [n.replace("log_", "") for n in free_names],
            natural,
        )
        write_params_csv(out / "hyperparams_log.csv", free_names, hyper)
        write_params_csv(
            out / "fixed_effects.csv",
            list(train.column_names),
            [mean_params[j] for j in range(train.p)],
        )
    q_nnz = result.samples[0].fc.q_nnz_full if result.samples[0].fc else 0
    metrics = None
    if pred is not None:
        with _Stage("prediction"):
            pres = predict(result, pred.points, pred.X, threads=threads)
            write_predictions_csv(out / "predictions.csv", pred.points, pres)
        truth = None
        if args.truth:
            tset, _ = ingest_csv(
                args.truth, schema, transform=transform, require_response=True
            )
            if tset.n != pred.n:
                raise DataError(
                    f"truth file has {tset.n} rows, prediction file has {pred.n}"
                )
            truth = tset.y
        elif pred.y is not None:
            truth = pred.y
        if truth is not None:
            metrics = compute_metrics(pres.mean, truth, pres.ci_low, pres.ci_high)
            write_metrics_csv(out / "metrics.csv", metrics)
    if args.dump_q_pattern and result.samples[0].fc is not None:
        result.samples[0].fc.q_lower.write_pattern(out / "q_pattern.txt")

    lines = list(cfg.echo_lines())
    lines += [
        f"backend = {BACKEND}",
        f"data.n_train = {train.n}",
        f"data.n_predict = {0 if pred is None else pred.n}",
        f"data.p = {train.p}",
        f"fit.ess = {result.ess!r}",
        f"fit.log_c_i = {result.log_c_i!r}",
        f"fit.mode_converged = {mode.converged}",
        f"fit.mode_iterations = {mode.n_iterations}",
        f"fit.mode_value = {mode.value!r}",
        f"fit.n_failed_draws = {result.n_failed}",
        f"fit.proposal_floored = {prop.floored}",
        f"fit.q_nnz = {q_nnz}",
        f"partition.n_coefficients = {posterior.layout.n_cols}",
        f"seed = {seed}",
        f"threads = {threads}",
        f"version = {__version__}",
    ]
    if metrics is not None:
        lines.append(f"metrics.mspe = {metrics.mspe!r}")
        lines.append(f"metrics.medspe = {metrics.medspe!r}")
        lines.append(f"metrics.coverage = {metrics.coverage!r}")
    (out / "manifest.txt").write_text("\n".join(sorted(lines)) + "\n")
    return 0


def cmd_simulate(args):
    cfg = load_config(args.config)
    seed = _resolve_seed(args, cfg)
    out = _out_dir(args)
    with _Stage("simulate"):
        data = simulate_dataset(
            cfg["simulate.n"],
            seed=seed,
            n_days=cfg["simulate.n_days"],
            sigma=cfg["simulate.sigma"],
            rho=cfg["simulate.rho"],
            phi=cfg["simulate.phi"],
            zeta=cfg["simulate.zeta"],
        )
    header = ["lon", "lat", "day", "surface", "y"]

    def rows(points, X, y):
        return [
            (points.lon[i], points.lat[i], points.time[i], X[i, 1], y[i])
            for i in range(len(points))
        ]

    write_csv(out / "train.csv", header, rows(data.train_points, data.train_X, data.train_y))
    write_csv(out / "test.csv", header, rows(data.test_points, data.test_X, data.test_y))
    lines = list(cfg.echo_lines()) + [
        f"seed = {seed}",
        f"simulate.n_test = {data.n_test}",
        f"simulate.n_train = {data.n_train}",
        f"version = {__version__}",
    ]
    (out / "manifest.txt").write_text("\n".join(sorted(lines)) + "\n")
    return 0


def cmd_oracle_predict(args):
    cfg = load_config(args.config)
    _resolve_seed(args, cfg)  # uniform contract: all commands demand a seed
    out = _out_dir(args)
    schema = build_schema(cfg)
    priors = build_priors(cfg)
    psi = HyperParams(
        log_sigma=float(np.log(cfg["oracle.sigma"])),
        log_rho=float(np.log(cfg["oracle.rho"])),
        log_phi=float(np.log(cfg["oracle.phi"])),
        log_zeta=float(np.log(cfg["oracle.zeta"])),
    )
    with _Stage("ingest"):
        train, transform = ingest_csv(args.train, schema)
        pred, _ = ingest_csv(
            args.predict_at, schema, transform=transform, require_response=False
        )
    with _Stage("oracle prediction"):
        mean, var = dense_predict(
            train.y, train.X, train.points, pred.X, pred.points, psi, priors
        )
    sd = np.sqrt(var)
    lo = mean - 1.959963984540054 * sd
    hi = mean + 1.959963984540054 * sd
    write_csv(
        out / "oracle_predictions.csv",
        ["lon", "lat", "day", "mean", "sd", "ci_low", "ci_high"],
        [
            (pred.points.lon[i], pred.points.lat[i], pred.points.time[i],
             mean[i], sd[i], lo[i], hi[i])
            for i in range(pred.n)
        ],
    )
    if pred.y is not None:
        write_metrics_csv(
            out / "oracle_metrics.csv", compute_metrics(mean, pred.y, lo, hi)
        )
    return 0


def cmd_metrics(args):
    cfg = load_config(args.config)
    out = _out_dir(args)
    import csv as _csv

    def read_table(path):
        with open(path, newline="") as fh:
            reader = _csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        return header, rows

    header, rows = read_table(args.predictions)
    for col in ("mean", "ci_low", "ci_high"):
        if col not in header:
            raise DataError(f"{args.predictions}: missing column {col!r}")
    mean = np.array([float(r[header.index("mean")]) for r in rows])
    lo = np.array([float(r[header.index("ci_low")]) for r in rows])
    hi = np.array([float(r[header.index("ci_high")]) for r in rows])
    theader, trows = read_table(args.truth)
    ycol = cfg["data.response"]
    if ycol not in theader:
        raise DataError(f"{args.truth}: missing column {ycol!r}")
    truth = np.array([float(r[theader.index(ycol)]) for r in trows])
    if len(truth) != len(mean):
        raise DataError(
            f"truth file has {len(truth)} rows, predictions have {len(mean)}"
        )
    write_metrics_csv(out / "metrics.csv", compute_metrics(mean, truth, lo, hi))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mragp",
        description="Scalable Bayesian spatiotemporal Gaussian-process inference",
    )
    parser.add_argument("--version", action="version", version=f"mragp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, train=False, predict=False):
        p.add_argument("--config", default=None, help="flat key = value config file")
        p.add_argument("--out-dir", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        if train:
            p.add_argument("--train", required=True, help="training CSV")
        if predict:
            p.add_argument("--predict-at", default=None, help="prediction-location CSV")

    p_fit = sub.add_parser("fit", help="fit the model and optionally predict")
    common(p_fit, train=True, predict=True)
    p_fit.add_argument("--truth", default=None, help="holdout truth CSV for metrics")
    p_fit.add_argument("--dump-tree", action="store_true")
    p_fit.add_argument("--dump-q-pattern", action="store_true")
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="write a synthetic train/test pair")
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_orc = sub.add_parser("oracle-predict", help="exact dense prediction at fixed psi")
    common(p_orc, train=True, predict=True)
    p_orc.set_defaults(func=cmd_oracle_predict)

    p_met = sub.add_parser("metrics", help="score a prediction file against truth")
    common(p_met)
    p_met.add_argument("--predictions", required=True)
    p_met.add_argument("--truth", required=True)
    p_met.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (DataError, CapExceededError) as e:
        stage = getattr(e, "stage", None)
        label = f" during {stage}" if stage else ""
        print(f"data error{label}: {e}", file=sys.stderr)
        return 3
    except MragpError as e:
        stage = getattr(e, "stage", None)
        label = f" during {stage}" if stage else ""
        print(f"numeric failure{label}: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
