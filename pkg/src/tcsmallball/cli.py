"""Command-line runner: ``tcsmallball <command> [flags]``.

Commands: estimate, constants, verify-laplace, verify-tauberian, prop-e,
sweep. Flags override values from ``--config file.json``; output is CSV
(header lines start with ``#``) or JSON with the same content.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
import traceback
from dataclasses import asdict, dataclass, field, fields
from importlib import metadata

import numpy as np

from . import smallball, theory
from .outer import OuterFamily, OuterSpec, parse_outer
from .parallel import resolve_threads
from .subordinators import levy_tail
from .time_change import TimeChangeSpec, parse_time_change

COMMANDS = ("estimate", "constants", "verify-laplace", "verify-tauberian", "prop-e", "sweep")
ESTIMATE_COLUMNS = ["estimator", "subordinator", "outer", "T", "eps", "p_hat", "stderr", "n_paths", "step_h", "grid_points", "seed"]

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    command: str = "estimate"
    outer_spec: str = "bm"
    timechange_spec: str = "stable:beta=0.5"
    T: float = 1.0
    eps_list: list | None = None
    a_list: list = field(default_factory=lambda: [1.0, 10.0, 100.0])
    s_list: list = field(default_factory=lambda: [1.0])
    n_paths: int = 100_000
    step_h: float | None = None
    n_grid: int = 1024
    seed: int = 0
    out_path: str | None = None
    format: str = "csv"
    estimator: str = "auto"
    t_max: float | None = None
    threads: int | None = None

    def validate(self) -> "ExperimentConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"command: unknown command {self.command!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError("format: must be csv or json")
        if self.estimator not in ("auto", "conditional", "direct"):
            raise ConfigError("estimator: must be auto, conditional or direct")
        for name in ("T",):
            if not _positive(getattr(self, name)):
                raise ConfigError(f"{name}: must be a positive number")
        for name in ("step_h", "t_max"):
            v = getattr(self, name)
            if v is not None and not _positive(v):
                raise ConfigError(f"{name}: must be a positive number")
        if self.eps_list is None:
            self.eps_list = default_eps_grid() if self.command == "sweep" else [0.05, 0.1, 0.2]
        for name in ("eps_list", "a_list", "s_list"):
            v = getattr(self, name)
            if not isinstance(v, list) or not v or not all(_positive(x) for x in v):
                raise ConfigError(f"{name}: must be a nonempty list of positive numbers")
            setattr(self, name, [float(x) for x in v])
        for name in ("n_paths", "n_grid"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name}: must be a positive integer")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed: must be an unsigned 64-bit integer")
        if self.threads is not None and (not isinstance(self.threads, int) or self.threads < 1):
            raise ConfigError("threads: must be a positive integer")
        try:
            self.outer = parse_outer(self.outer_spec)
        except ValueError as exc:
            raise ConfigError(f"outer_spec: {exc}") from None
        try:
            self.tc = parse_time_change(self.timechange_spec)
        except ValueError as exc:
            raise ConfigError(f"timechange_spec: {exc}") from None
        return self

    def resolved(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _positive(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) and v > 0


_FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tcsmallball", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON file with ExperimentConfig keys")
    p.add_argument("--outer", dest="outer_spec", help="bm | fbm:H=.. | iterfbm:H=..,.. | stable:alpha=..,kappa=.. | iterstable:a1=..,a2=..")
    p.add_argument("--tc", dest="timechange_spec", help="stable:beta=.. | tempered:beta=..,lambda=.. | gamma:c=..,b=.. | mix:[spec*w;...]")
    p.add_argument("--T", type=float)
    p.add_argument("--eps", dest="eps_list", type=_float_list)
    p.add_argument("--a", dest="a_list", type=_float_list)
    p.add_argument("--s", dest="s_list", type=_float_list)
    p.add_argument("--paths", dest="n_paths", type=int)
    p.add_argument("--step-h", dest="step_h", type=float)
    p.add_argument("--n-grid", dest="n_grid", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="out_path")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--estimator", choices=("auto", "conditional", "direct"))
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--threads", type=int, help="worker threads (default: SMALLBALL_THREADS or CPU count)")
    return p


def parse_config(argv=None) -> ExperimentConfig:
    """Defaults, then the JSON file, then explicit flags."""
    ns = build_parser().parse_args(argv)
    values: dict = {}
    if ns.config:
        try:
            with open(ns.config) as fh:
                loaded = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {ns.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - _FIELD_NAMES)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        values.update(loaded)
    for k, v in vars(ns).items():
        if k != "config" and v is not None:
            values[k] = v
    values["command"] = ns.command
    return ExperimentConfig(**values).validate()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _num(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _prediction(cfg) -> theory.AsymptoticPrediction:
    tc, outer = cfg.tc, cfg.outer
    if outer.family is OuterFamily.BM and tc.is_single:
        return theory.theorem_constant(tc, cfg.T)
    return theory.AsymptoticPrediction(
        theory.predicted_exponent(outer, tc.sigma), None, theory.Regime.WEAK_ORDER, "weak-order exponent sigma/H"
    )


def _estimate_rows(cfg, eps, step_h) -> tuple[list[dict], list]:
    kind = cfg.estimator
    if kind == "auto":
        kind = "conditional" if cfg.outer.family is OuterFamily.BM else "direct"
    if kind == "conditional":
        if cfg.outer.family is not OuterFamily.BM:
            raise ConfigError("estimator: conditional requires --outer bm")
        res = smallball.estimate_conditional_bm(cfg.tc, cfg.T, eps, cfg.n_paths, step_h, cfg.seed, cfg.threads)
    else:
        res = smallball.estimate_direct(cfg.outer, cfg.tc, cfg.T, eps, cfg.n_paths, cfg.n_grid, step_h, cfg.seed, cfg.threads)
    rows = [
        dict(estimator=r.estimator.value, subordinator=cfg.tc.label(), outer=cfg.outer.label(), T=cfg.T, eps=r.eps,
             p_hat=r.p_hat, stderr=r.stderr, n_paths=r.n_paths, step_h=r.step_h, grid_points=r.grid_points, seed=cfg.seed)
        for r in res
    ]
    pred = _prediction(cfg)
    for e in eps:
        value = pred.constant * e**pred.exponent if pred.constant is not None else ""
        rows.append(
            dict(estimator=f"Theory{pred.regime.value}", subordinator=cfg.tc.label(), outer=cfg.outer.label(), T=cfg.T,
                 eps=float(e), p_hat=value, stderr="", n_paths="", step_h="", grid_points="", seed="")
        )
    return rows, res


def _default_step(cfg, eps) -> float:
    return cfg.step_h if cfg.step_h is not None else min(eps) ** 2 / 100.0


def cmd_estimate(cfg):
    eps = sorted(cfg.eps_list)
    rows, _ = _estimate_rows(cfg, eps, _default_step(cfg, eps))
    return ESTIMATE_COLUMNS, rows, []


def cmd_sweep(cfg):
    eps = sorted(cfg.eps_list)
    limit = min(eps) ** 2 / 100.0
    step = cfg.step_h if cfg.step_h is not None else limit
    if step > limit * (1.0 + 1e-12):
        raise ConfigError(f"step_h: {step} exceeds eps_min^2/100 = {limit}; refusing a biased sweep")
    rows, res = _estimate_rows(cfg, eps, step)
    notes = []
    try:
        slope, icpt, se = smallball.fit_power_law(res)
        notes.append(f"fit slope={slope!r} intercept={icpt!r} slope_stderr={se!r} exp_intercept={math.exp(icpt)!r}")
    except smallball.DegenerateFitError as exc:
        notes.append(f"fit unavailable: {exc}")
    return ESTIMATE_COLUMNS, rows, notes


def default_eps_grid(lo: float = 0.02, hi: float = 0.4, per_decade: int = 8) -> list[float]:
    n = int(round(math.log10(hi / lo) * per_decade)) + 1
    return [float(x) for x in np.geomspace(lo, hi, n)]


def cmd_constants(cfg):
    rows = []
    tc, outer, T = cfg.tc, cfg.outer, cfg.T
    pred = _prediction(cfg)
    rows.append(dict(quantity="small_ball_exponent", value=pred.exponent, regime=pred.regime.value))
    if pred.constant is not None:
        rows.append(dict(quantity="small_ball_constant", value=pred.constant, regime=pred.regime.value))
    mix = theory.mixture_constant(tc, T)
    rows.append(dict(quantity="E_small_ball_exponent", value=mix.exponent, regime=mix.regime.value))
    rows.append(dict(quantity="E_small_ball_constant", value=mix.constant, regime=mix.regime.value))
    for j, (spec, c) in enumerate(tc.components):
        rows.append(dict(quantity=f"levy_tail[{j}]", value=float(levy_tail(spec, T)), regime=""))
    rows.append(dict(quantity="outer_H", value=outer.H, regime=""))
    rows.append(dict(quantity="outer_tau", value=outer.tau, regime=""))
    rows.append(dict(quantity="predicted_exponent", value=theory.predicted_exponent(outer, tc.sigma), regime="WeakOrder"))
    return ["quantity", "value", "regime"], rows, []


def _single(cfg):
    if not cfg.tc.is_single:
        raise ConfigError("timechange_spec: this command needs a single subordinator")
    spec, c = cfg.tc.components[0]
    if c != 1.0:
        raise ConfigError("timechange_spec: this command needs weight 1")
    return spec


def cmd_verify_laplace(cfg):
    spec = _single(cfg)
    t_max = cfg.t_max if cfg.t_max is not None else 20.0 / min(cfg.s_list)
    step = cfg.step_h if cfg.step_h is not None else 1e-4
    cols = ["s", "a", "mc_integral", "stderr", "rhs", "rel_deviation", "tail_bound", "t_max", "n_paths"]
    rows = []
    for a in cfg.a_list:
        for r in theory.verify_laplace_identity(spec, a, cfg.s_list, cfg.n_paths, step, t_max, cfg.seed):
            rows.append(asdict(r))
    return cols, rows, []


def cmd_verify_tauberian(cfg):
    step = cfg.step_h if cfg.step_h is not None else 0.001 / max(cfg.a_list)
    res = smallball.tauberian_diagnostic(cfg.tc, cfg.T, cfg.a_list, cfg.n_paths, step, cfg.seed, cfg.threads)
    rows = []
    for a, phi, se in res:
        if cfg.tc.is_single and cfg.tc.components[0][1] == 1.0:
            spec = cfg.tc.components[0][0]
            ref = a * theory.invert_laplace_E(spec, a, cfg.T)
            lim = float(levy_tail(spec, cfg.T))
        else:
            ref, lim = "", ""
        rows.append(dict(a=a, phi_hat=phi, stderr=se, reference=ref, limit=lim, step_h=step))
    return ["a", "phi_hat", "stderr", "reference", "limit", "step_h"], rows, []


def cmd_prop_e(cfg):
    spec = _single(cfg)
    lim = float(levy_tail(spec, cfg.T))
    rows = [
        dict(eps=e, ratio=r, stderr=s, levy_tail=lim)
        for e, r, s in smallball.prop_e_check(spec, cfg.T, cfg.eps_list, cfg.n_paths, cfg.seed, cfg.threads)
    ]
    return ["eps", "ratio", "stderr", "levy_tail"], rows, []


_DISPATCH = {
    "estimate": cmd_estimate,
    "constants": cmd_constants,
    "verify-laplace": cmd_verify_laplace,
    "verify-tauberian": cmd_verify_tauberian,
    "prop-e": cmd_prop_e,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # pragma: no cover
        return "unknown"


def render(cfg, columns, rows, notes, wall: float) -> str:
    header = {
        "config": cfg.resolved(),
        "version": _version(),
        "wall_time_s": round(wall, 3),
        "threads": resolve_threads(cfg.threads),
    }
    if cfg.format == "json":
        return json.dumps({"header": header, "columns": columns, "rows": rows, "notes": notes}, indent=1) + "\n"
    buf = io.StringIO()
    buf.write(f"# tcsmallball {header['version']}\n")
    buf.write(f"# config: {json.dumps(header['config'], sort_keys=True)}\n")
    buf.write(f"# wall_time_s: {header['wall_time_s']}\n")
    buf.write(f"# threads: {header['threads']}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_num(r[c]) for c in columns])
    for n in notes:
        buf.write(f"# {n}\n")
    return buf.getvalue()


def read_output(text: str) -> tuple[list[str], list[dict]]:
    """(columns, rows) from emitted CSV or JSON text; numbers parsed back."""
    s = text.lstrip()
    if s.startswith("{"):
        doc = json.loads(s)
        return doc["columns"], doc["rows"]
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.reader(lines)
    cols = next(reader)
    rows = []
    for rec in reader:
        row = {}
        for c, v in zip(cols, rec):
            try:
                row[c] = int(v)
            except ValueError:
                try:
                    row[c] = float(v)
                except ValueError:
                    row[c] = v
        rows.append(row)
    return cols, rows


def data_section(text: str) -> str:
    """Everything except header/comment lines (``#``) or the JSON header."""
    s = text.lstrip()
    if s.startswith("{"):
        doc = json.loads(s)
        doc.pop("header", None)
        return json.dumps(doc, sort_keys=True)
    return "".join(ln + "\n" for ln in text.splitlines() if not ln.startswith("#"))


def _provenance(exc: BaseException) -> str:
    tb = exc.__traceback__
    mod = "tcsmallball"
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("tcsmallball."):
            mod = name
        tb = tb.tb_next
    return mod


def run_experiment(cfg: ExperimentConfig) -> int:
    t0 = time.perf_counter()
    try:
        columns, rows, notes = _DISPATCH[cfg.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        print(f"numeric error in {_provenance(exc)}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    text = render(cfg, columns, rows, notes, time.perf_counter() - t0)
    try:
        if cfg.out_path:
            with open(cfg.out_path, "w", newline="") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TypeError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error reading config: {exc}", file=sys.stderr)
        return EXIT_IO
    except SystemExit as exc:  # argparse
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return run_experiment(cfg)
    except Exception:  # pragma: no cover - last resort
        traceback.print_exc()
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
