"""Command-line entry point: ``qtube <subcommand> [config.json] [overrides]``.

Subcommands
-----------
fit         one dataset -> FitResult JSON
rates       ExperimentConfig -> RateReport (JSON, CSV, plot CSV)
sparsity    support ratio / objective / error over an epsilon grid
verify      invariant suites, one PASS/FAIL line per check
calc-rate   RateParams -> RateExponent JSON

Exit status: 0 on success, 1 if a verification fails, 2 on a usage or
configuration error. Every output file is written via temp-and-rename,
together with a ``manifest.json`` describing the run.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import tempfile
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import RateParams, rate_exponent
from .experiments import ExperimentConfig, run_rate_experiment, sparsity_sweep, parse_real
from .kernel import KernelSpec
from .loss import LossSpec
from .models import ConditionalModel, Dataset, Design, sample_dataset
from .solver import SolverOptions, fit

__all__ = ["main", "RunManifest", "ConfigError", "atomic_write"]


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration; maps to exit status 2."""


# -- persistence ------------------------------------------------------------------

def atomic_write(path: Path, text: str) -> None:
    """Write UTF-8 text with LF endings to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Fraction):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    """Provenance record written next to a run's outputs."""

    def __init__(self, command: str, config: dict, seed):
        self.command = command
        self.config = config
        self.seed = seed
        self.started = _now()
        self.outputs: dict = {}

    @property
    def config_hash(self) -> str:
        blob = json.dumps({"command": self.command, "config": self.config}, sort_keys=True,
                          default=_json_default)
        return hashlib.sha256(blob.encode()).hexdigest()

    def write_output(self, out_dir: Path, name: str, text: str) -> Path:
        path = Path(out_dir) / name
        atomic_write(path, text)
        self.outputs[name] = hashlib.sha256(text.encode("utf-8")).hexdigest()
        return path

    def to_dict(self) -> dict:
        return {"command": self.command, "config": self.config, "config_hash": self.config_hash,
                "version": __version__, "seed": self.seed, "started": self.started,
                "finished": _now(),
                "outputs": [{"path": k, "sha256": v} for k, v in sorted(self.outputs.items())]}

    def finish(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        atomic_write(path, _dumps(self.to_dict()))
        return path


# -- config handling --------------------------------------------------------------

def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _real(s: str):
    """argparse type: float, ``inf`` or an exact fraction like ``2/3``."""
    try:
        if "/" in s:
            return Fraction(s)
        return parse_real(s)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a real number: {s!r}") from exc


def _int_list(s: str):
    try:
        return [int(v) for v in s.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated integer list: {s!r}") from exc


def _real_list(s: str):
    try:
        return [parse_real(v) for v in s.replace(" ", "").split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of reals: {s!r}") from exc


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("QTUBE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"QTUBE_THREADS must be an integer, got {env!r}") from exc
        if n < 1:
            raise ConfigError("QTUBE_THREADS must be >= 1")
        return n
    return 1


def _dataset_from(cfg: dict, seed) -> Dataset:
    """``data`` is a CSV path, or ``generate`` describes ``{model, T, seed}``."""
    if "data" in cfg:
        try:
            text = Path(cfg["data"]).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read dataset {cfg['data']}: {exc}") from exc
        return Dataset.from_csv(text)
    gen = cfg.get("generate")
    if not isinstance(gen, dict):
        raise ConfigError("config needs either 'data' (CSV path) or 'generate' {model, T, seed}")
    model = ConditionalModel.from_dict(gen.get("model", {"kind": "power", "phi": 1.0}))
    s = seed if seed is not None else int(gen.get("seed", 0))
    return sample_dataset(model, Design(model.dim), int(gen.get("T", 100)), s)


def _kernel_from(cfg: dict) -> KernelSpec:
    return KernelSpec.from_dict(cfg.get("kernel", {"kind": "gaussian", "bandwidth": 0.2}))


def _solver_from(cfg: dict) -> SolverOptions:
    opts = dict(cfg.get("solver", {}))
    return SolverOptions(**opts)


# -- subcommands ------------------------------------------------------------------

def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    for key in ("q", "eps", "lam", "data"):
        if getattr(args, key) is not None:
            cfg[{"lam": "lambda"}.get(key, key)] = getattr(args, key)
    if args.seed is not None:
        cfg.setdefault("generate", {})
        if isinstance(cfg["generate"], dict):
            cfg["generate"]["seed"] = args.seed
    try:
        data = _dataset_from(cfg, args.seed)
        spec = LossSpec(float(cfg.get("q", 2.0)), float(parse_real(cfg.get("eps", 0.0))))
        lam = float(cfg.get("lambda", 0.01))
        kernel = _kernel_from(cfg)
        opts = _solver_from(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    res = fit(data, kernel, spec, lam, opts)
    out = Path(args.out)
    man = RunManifest("fit", cfg, args.seed)
    man.write_output(out, "fit.json", res.to_json())
    man.write_output(out, "dataset.csv", data.to_csv())
    man.finish(out)
    print(f"fit: T={len(data)} objective={res.objective:.10g} converged={res.converged} "
          f"sparsity={res.sparsity:.4f} -> {out / 'fit.json'}")
    return 0


def cmd_rates(args) -> int:
    cfg = _load_config(args.config)
    overrides = {"q": args.q, "alpha": args.alpha, "eta": args.eta, "T_grid": args.T_grid,
                 "seed": args.seed, "repeats": args.repeats}
    for k, v in overrides.items():
        if v is not None:
            cfg[k] = float(v) if isinstance(v, Fraction) else v
    try:
        config = ExperimentConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    report = run_rate_experiment(config, threads=_threads(args))
    out = Path(args.out)
    man = RunManifest("rates", config.to_dict(), config.seed)
    man.write_output(out, "rates.json", report.to_json())
    man.write_output(out, "rates.csv", report.to_csv())
    man.write_output(out, "rates_plot.csv", report.plot_csv())
    man.finish(out)
    print(report.to_csv(), end="")
    print(f"fitted slope {report.fitted_slope:.4f} +- {report.slope_stderr:.4f}; "
          f"theoretical exponent {report.theoretical_lambda:.4f}; "
          f"{len(report.failures)} flagged cells")
    return 0


def cmd_sparsity(args) -> int:
    cfg = _load_config(args.config)
    for key in ("q", "lam", "data"):
        if getattr(args, key) is not None:
            cfg[{"lam": "lambda"}.get(key, key)] = getattr(args, key)
    if args.eps_grid is not None:
        cfg["eps_grid"] = args.eps_grid
    try:
        data = _dataset_from(cfg, args.seed)
        q = float(cfg.get("q", 2.0))
        lam = float(cfg.get("lambda", 0.01))
        grid = [parse_real(e) for e in cfg.get("eps_grid", [0.0, 0.01, 0.05, 0.1, 0.2, 0.5])]
        model = None
        if "model" in cfg:
            model = ConditionalModel.from_dict(cfg["model"])
        elif isinstance(cfg.get("generate"), dict) and "model" in cfg["generate"]:
            model = ConditionalModel.from_dict(cfg["generate"]["model"])
        r_norm = parse_real(cfg.get("r_norm", 2.0))
        kernel = _kernel_from(cfg)
        opts = _solver_from(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    rows = sparsity_sweep(data, kernel, q, lam, grid, model, r_norm,
                          int(cfg.get("n_mc", 8192)), int(args.seed or 0), opts)
    lines = ["eps,ratio,objective,error"]
    lines += [f"{r.eps!r},{r.ratio!r},{r.objective!r},{r.error!r}" for r in rows]
    csv_text = "\n".join(lines) + "\n"
    out = Path(args.out)
    man = RunManifest("sparsity", cfg, args.seed)
    man.write_output(out, "sparsity.csv", csv_text)
    man.write_output(out, "sparsity.json", _dumps(
        {"rows": [{"eps": r.eps, "ratio": r.ratio, "objective": r.objective, "error": r.error,
                   "converged": r.converged} for r in rows], "q": q, "lambda": lam}))
    man.finish(out)
    print(csv_text, end="")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suites

    try:
        results = run_suites(args.suite, quick=args.quick, seed=args.seed or 0)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if args.out:
        out = Path(args.out)
        man = RunManifest("verify", {"suites": args.suite, "quick": args.quick}, args.seed)
        man.write_output(out, "verify.json", _dumps(
            [{"suite": r.suite, "name": r.name, "ok": r.ok, "detail": r.detail} for r in results]))
        man.finish(out)
    return 1 if failed else 0


def cmd_calc_rate(args) -> int:
    cfg = _load_config(args.config)
    for key in ("q", "w", "phi", "p", "alpha", "eta", "beta", "k", "xi"):
        v = getattr(args, key)
        if v is not None:
            cfg[key] = v
    try:
        vals = {k: (v if isinstance(v, Fraction) else parse_real(v)) for k, v in cfg.items()}
        if "phi" in vals:
            if "w" in vals:
                raise ConfigError("give either w or phi (w = phi + 1), not both")
            vals["w"] = vals.pop("phi") + 1
        params = RateParams(**vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    res = rate_exponent(params)
    text = _dumps(res.to_dict())
    print(text, end="")
    if args.out:
        out = Path(args.out)
        man = RunManifest("calc-rate", {k: str(v) for k, v in vals.items()}, None)
        man.write_output(out, "rate_exponent.json", text)
        man.finish(out)
    return 0


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qtube", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"qtube {__version__}")
    sub = p.add_subparsers(dest="command", metavar="{fit,rates,sparsity,verify,calc-rate}")
    sub.required = True

    def common(sp, out_default):
        sp.add_argument("config", nargs="?", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--threads", type=int, help="worker threads (env QTUBE_THREADS)")

    f = sub.add_parser("fit", help="fit one dataset")
    common(f, "qtube_out/fit")
    f.add_argument("--data", help="dataset CSV (header x_0,...,x_{n-1},y)")
    f.add_argument("--q", type=_real)
    f.add_argument("--eps", type=_real)
    f.add_argument("--lam", "--lambda", dest="lam", type=_real)
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("rates", help="learning-rate sweep")
    common(r, "qtube_out/rates")
    r.add_argument("--q", type=_real)
    r.add_argument("--alpha", type=_real)
    r.add_argument("--eta", type=_real)
    r.add_argument("--T-grid", dest="T_grid", type=_int_list)
    r.add_argument("--repeats", type=int)
    r.set_defaults(func=cmd_rates)

    s = sub.add_parser("sparsity", help="sparsity versus epsilon sweep")
    common(s, "qtube_out/sparsity")
    s.add_argument("--data")
    s.add_argument("--q", type=_real)
    s.add_argument("--lam", "--lambda", dest="lam", type=_real)
    s.add_argument("--eps-grid", dest="eps_grid", type=_real_list)
    s.set_defaults(func=cmd_sparsity)

    v = sub.add_parser("verify", help="run the invariant suites")
    v.add_argument("--suite", action="append", help="restrict to a suite (repeatable)")
    v.add_argument("--quick", action="store_true", help="smaller samples, same tolerances")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", help="also write verify.json here")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("calc-rate", help="learning-rate exponent calculator")
    c.add_argument("config", nargs="?", help="JSON file with RateParams fields")
    for key in ("q", "w", "phi", "p", "alpha", "eta", "beta", "k", "xi"):
        c.add_argument(f"--{key}", type=_real)
    c.add_argument("--out")
    c.set_defaults(func=cmd_calc_rate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 2 on usage errors, 0 for --help
        return int(exc.code or 0)
    try:
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return args.func(args)
    except ConfigError as exc:
        print(f"qtube {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
