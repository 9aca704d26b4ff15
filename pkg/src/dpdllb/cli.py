"""Command-line entry point: ``dpdllb fit | simulate | benchmark``.

Exit codes: 0 on success, 2 for configuration or input errors, 3 when a
sampler or estimator fails at run time.
"""

import argparse
import csv
import json
import math
import subprocess
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DpdError, EmptyInputError, ParseError
from .glm import FAMILIES, GlmDataset
from .models import MODELS, Dataset

SAMPLERS = ("llb-sgd", "llb-exact", "mh-dpd", "mh-bayes", "gdni")
SIM_SCENARIOS = ("contaminated-normal", "contaminated-poisson", "contaminated-invgauss",
                 "contaminated-gompertz", "contaminated-mvn", "poisson-regression",
                 "poisson-regression-shifted", "linear-regression")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# full-scale repetition counts, used with --full-scale
FULL_SCALE = {"table1": {"reps": 100}, "table2": {"reps": 100}, "table3": {"reps": 100},
               "supp-alpha": {"reps": 1000}, "supp-m": {"reps": 100}}


@dataclass
class RunConfig:
    command: str
    model: str = None
    family: str = None
    dim: int = None
    alpha: float = 0.5
    m: int = 10
    S: int = 1000
    T: int = 500
    schedule: str = "inverse-time"
    eta_init: float = 0.1
    decay: float = None
    seed: int = 0
    input: str = None
    scenario: str = None
    table: str = None
    n: int = None
    p: int = None
    epsilon: float = None
    output: str = None
    sampler: str = "llb-sgd"
    workers: int = 1
    reps: int = None
    full_scale: bool = False
    extra: dict = field(default_factory=dict)

    def validate(self):
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(f"--{name}: {msg}")

        need(self.workers >= 1, "workers", "must be at least 1")
        if self.command == "fit":
            need(self.input is not None, "input", "is required for fit")
            need(Path(self.input).is_file(), "input", f"file {self.input!r} does not exist")
            need((self.model is None) != (self.family is None), "model",
                 "give exactly one of --model or --family")
            need(math.isfinite(self.alpha) and self.alpha >= 0, "alpha", "must be finite and >= 0")
            need(self.m >= 1, "m", "must be a positive integer")
            need(self.S >= 1, "S", "must be a positive integer")
            need(self.T >= 1, "T", "must be a positive integer")
            need(self.eta_init > 0, "eta-init", "must be positive")
            need(self.model != "mvn" or (self.dim or 0) >= 1, "dim", "is required for the mvn model")
            need(self.family is None or self.sampler == "llb-sgd", "sampler",
                 "GLM families support only llb-sgd")
            need(self.sampler != "mh-bayes" or self.model == "normal", "sampler",
                 "mh-bayes needs the normal model")
        if self.command == "simulate":
            need(self.n is None or self.n >= 1, "n", "must be a positive integer")
            need(self.epsilon is None or 0 <= self.epsilon < 0.5, "epsilon", "must lie in [0, 0.5)")
        if self.reps is not None:
            need(self.reps >= 1, "reps", "must be a positive integer")
        return self


def version_string():
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True,
                             timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def ingest_csv(path, glm=False):
    """Read a headered CSV into a :class:`Dataset` or, with ``glm``, a :class:`GlmDataset`.

    Scalar files hold one numeric column (several columns are read as a
    multivariate sample). GLM files hold the response first and covariates
    after; an intercept is added. Row numbers in errors count the header as
    row 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise EmptyInputError(f"{path}: no data rows")
    header = rows[0]
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise ParseError(i + 2, len(row) + 1 if len(row) < len(header) else len(header) + 1,
                             "<missing>" if len(row) < len(header) else row[len(header)])
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(i + 2, j + 1, cell) from None
            if not math.isfinite(v):
                raise ParseError(i + 2, j + 1, cell)
            values[i, j] = v
    if glm:
        if values.shape[1] < 2:
            raise ConfigError(f"{path}: a GLM file needs a response and at least one covariate")
        return GlmDataset.from_covariates(values[:, 0], values[:, 1:], meta={"columns": header})
    pts = values[:, 0] if values.shape[1] == 1 else values
    return Dataset(pts, meta={"columns": header})


def export_csv(data, path):
    """Write a dataset in the format read by :func:`ingest_csv`."""
    if isinstance(data, GlmDataset):
        header = ["y"] + [f"x{k}" for k in range(1, data.X.shape[1])]
        table = np.column_stack([data.y, data.X[:, 1:]])
    else:
        pts = np.asarray(data.points)
        header = ["x"] if pts.ndim == 1 else [f"x{k}" for k in range(pts.shape[1])]
        table = pts.reshape(len(pts), -1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in table:
            w.writerow([repr(float(v)) for v in row])


def _simulate(cfg):
    from .datasim import (SCALAR_SCENARIOS, gen_contaminated_mvn, gen_contaminated_scalar,
                          gen_linear_regression, gen_poisson_regression)

    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    if cfg.scenario in SCALAR_SCENARIOS:
        spec = SCALAR_SCENARIOS[cfg.scenario]
        if cfg.n is not None:
            spec = spec.with_n(cfg.n)
        if cfg.epsilon is not None:
            spec = spec.with_epsilon(cfg.epsilon)
        return gen_contaminated_scalar(spec, rng)
    eps = 0.05 if cfg.epsilon is None else cfg.epsilon
    if cfg.scenario == "contaminated-mvn":
        return gen_contaminated_mvn(cfg.n or 100, cfg.p or 2, eps, rng)
    if cfg.scenario.startswith("poisson-regression"):
        mode = "mean-shift" if cfg.scenario.endswith("shifted") else "clean"
        return gen_poisson_regression(cfg.n or 300, cfg.p or 2, rng, contamination_mode=mode, epsilon=eps)
    return gen_linear_regression(cfg.n or 200, rng, epsilon=eps)


def _fit(cfg):
    from .baselines import GridSpec, MhConfig, llb_gdni_sample, mh_sample_dpd, mh_sample_standard_bayes
    from .bootstrap import llb_exact_sample, llb_sgd_sample
    from .calibration import calibrate_dpd
    from .dpd import DpdConfig
    from .glm import get_family, llb_sgd_glm_sample
    from .models import get_model
    from .sgd import make_schedule

    schedule = make_schedule(cfg.schedule, cfg.eta_init, cfg.decay, cfg.T)
    dcfg = DpdConfig(cfg.alpha, cfg.m)
    if cfg.family is not None:
        data = ingest_csv(cfg.input, glm=True)
        return llb_sgd_glm_sample(get_family(cfg.family), data, dcfg, schedule, cfg.S, cfg.T, cfg.seed,
                                  workers=cfg.workers)
    data = ingest_csv(cfg.input)
    model = get_model(cfg.model, cfg.dim)
    if cfg.sampler == "llb-sgd":
        return llb_sgd_sample(model, data, dcfg, schedule, cfg.S, cfg.T, cfg.seed, workers=cfg.workers)
    if cfg.sampler == "llb-exact":
        return llb_exact_sample(model, data, cfg.alpha, cfg.S, cfg.seed, workers=cfg.workers)
    if cfg.sampler == "gdni":
        grid = GridSpec(cfg.extra.get("grid_points", 10), cfg.extra.get("grid_half_width", 2.0), data.d)
        return llb_gdni_sample(model, data, cfg.alpha, grid, cfg.S, cfg.T, schedule.mean_rate(cfg.T),
                               cfg.seed, workers=cfg.workers)
    steps = cfg.extra.get("mh_burn_in", 1500) + cfg.S * cfg.extra.get("mh_thin", 50)
    base = dict(steps=steps, burn_in=cfg.extra.get("mh_burn_in", 1500), thin=cfg.extra.get("mh_thin", 50),
                proposal_sd=cfg.extra.get("proposal_sd", 0.05))
    if cfg.sampler == "mh-bayes":
        return mh_sample_standard_bayes(model, data, MhConfig(**base), cfg.seed)
    w, _ = calibrate_dpd(model, data, cfg.alpha)
    return mh_sample_dpd(model, data, cfg.alpha, MhConfig(**base, loss_scale=w), cfg.seed)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable(asdict(obj))
    return obj


def _write_json(payload, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run(cfg):
    """Execute a validated :class:`RunConfig`; returns the exit status."""
    cfg.validate()
    if cfg.command == "simulate":
        data = _simulate(cfg)
        out = cfg.output or f"{cfg.scenario}.csv"
        export_csv(data, out)
        print(f"wrote {out} ({len(data.y) if isinstance(data, GlmDataset) else data.n} rows)")
        return EXIT_OK
    if cfg.command == "fit":
        from .diagnostics import credible_interval, summarize

        draws = _fit(cfg)
        outdir = Path(cfg.output or ".")
        outdir.mkdir(parents=True, exist_ok=True)
        draws.to_csv(outdir / "draws.csv")
        ci = credible_interval(draws, 0.95) if draws.S >= 20 else None
        summary = {"summary": summarize(draws) if draws.S >= 2 else {},
                   "interval_95": {nm: list(ci[k]) for k, nm in enumerate(draws.names)} if ci is not None else None,
                   "S": draws.S, "retried": int(np.sum(draws.attempts > 0)), "sampler_config": draws.config,
                   "run_config": asdict(cfg), "version": version_string()}
        _write_json(summary, outdir / "summary.json")
        print(f"wrote {outdir / 'draws.csv'} ({draws.S} rows) and {outdir / 'summary.json'}")
        return EXIT_OK
    from .benchmarks import run_table

    kw = {"seed": cfg.seed, "workers": cfg.workers}
    if cfg.full_scale:
        kw.update(FULL_SCALE.get(cfg.table, {}))
    if cfg.reps is not None:
        kw["reps"] = cfg.reps
    result = run_table(cfg.table, **kw)
    result["run_config"] = asdict(cfg)
    result["version"] = version_string()
    out = cfg.output or f"{cfg.table}.json"
    _write_json(result, out)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="dpdllb", description="Robust generalized Bayes by DPD loss-likelihood bootstrap.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="draw posterior samples for a dataset")
    grp = fit.add_mutually_exclusive_group(required=True)
    grp.add_argument("--model", choices=sorted(MODELS))
    grp.add_argument("--family", choices=sorted(FAMILIES), help="GLM family (response first in the CSV)")
    fit.add_argument("--dim", type=int, help="dimension for the mvn model")
    fit.add_argument("--input", required=True)
    fit.add_argument("--alpha", type=float, default=0.5)
    fit.add_argument("--m", type=int, default=10, help="pseudo-samples per gradient")
    fit.add_argument("--S", type=int, default=1000, help="number of posterior draws")
    fit.add_argument("--T", type=int, default=500, help="SGD iterations per draw")
    fit.add_argument("--schedule", choices=("inverse-time", "step-decay"), default="inverse-time")
    fit.add_argument("--eta-init", type=float, default=0.1)
    fit.add_argument("--decay", type=float, help="tau for inverse-time decay")
    fit.add_argument("--sampler", choices=SAMPLERS, default="llb-sgd")
    fit.add_argument("--output", help="output directory (default: current)")

    sim = sub.add_parser("simulate", help="write a simulated dataset as CSV")
    sim.add_argument("--scenario", choices=SIM_SCENARIOS, required=True)
    sim.add_argument("--n", type=int)
    sim.add_argument("--p", type=int, help="dimension or number of covariates")
    sim.add_argument("--epsilon", type=float)
    sim.add_argument("--output")

    from .benchmarks import TABLES

    bench = sub.add_parser("benchmark", help="reproduce a simulation table at desk scale")
    bench.add_argument("--table", choices=TABLES, required=True)
    bench.add_argument("--reps", type=int, help="override the repetition count")
    bench.add_argument("--full-scale", action="store_true", help="use the full repetition counts")
    bench.add_argument("--output")

    for p in (fit, sim, bench):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
    return ap


def main(argv=None):
    args = vars(build_parser().parse_args(argv))
    if args.get("decay") is not None and args.get("schedule") == "step-decay":
        print("error: --decay sets tau and applies to inverse-time only", file=sys.stderr)
        return EXIT_CONFIG
    cfg = RunConfig(**{k: v for k, v in args.items() if k in RunConfig.__dataclass_fields__})
    try:
        return run(cfg)
    except (ConfigError, ParseError, EmptyInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DpdError, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
