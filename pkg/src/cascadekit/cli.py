"""Command-line front end.

Every command reads one JSON config (optionally overridden by flags), checks
it against a schema that rejects unknown keys, runs, and emits a single
deterministic record: ``{"command", "inputs", "results", "version",
"tolerances"}``.  ``--format csv`` switches to a plain table for the commands
that produce one; the numbers then carry 17 significant digits.
"""

from __future__ import annotations

import argparse
import json
import sys as _sys

import jsonschema
import numpy as np

from . import __version__
from .cascade import CascadeSystem, check_assumptions, extract_char_fn, kernel_basis, p_label, parse_p
from .errors import (
    AccuracyError,
    AssumptionError,
    CascadeError,
    ConfigError,
    NoCharacteristicFunction,
)
from .io import atomic_write, cnum, csv_text, cvec, dumps, jsonable, parse_cmat, parse_cnum, parse_cvec
from .models import (
    PsiRegion,
    RobotChain,
    m_function,
    m_of_r,
    mlog_inverse,
    platoon_system,
    robot_AT_bound_constant,
    robot_kernel_closed_form,
    robot_system,
    stirling_bound_scaled,
    varcoef_apply_generator,
    varcoef_resolvent_apply,
)
from .semigroup import SeqState, cesaro_classify, fit_decay_rate, simulate
from .spectral import check_contractivity, check_uniform_boundedness, resolvent_estimate, sigma0_records, trace_level_set

COMMANDS = ("analyze", "trace-spectrum", "simulate", "classify", "rate-fit", "bounds", "robot-kernel")
PRESETS = ("robot", "platoon", "robot-chain")
QUANTITIES = ("state_norm", "derivative_norm", "distance")
SIM_ACCURACY = 1e-6  # tail bound allowed per unit of |x0|

_num = {"type": "number"}
_cnum = {"oneOf": [_num, {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}]}
_cvec = {"type": "array", "items": _cnum, "minItems": 1}
_cmat = {"type": "array", "items": _cvec, "minItems": 1}
_p = {"oneOf": [{"type": "number", "minimum": 1}, {"enum": ["inf", "1", "2"]}]}
_tail = {
    "type": "object",
    "properties": {
        "rule": {"enum": ["zero", "constant", "periodic"]},
        "value": _cvec,
        "pattern": {"type": "array", "items": _cvec, "minItems": 1},
        "ratio": _cnum,
    },
    "required": ["rule"],
    "additionalProperties": False,
}
_sequence = {
    "type": "object",
    "properties": {
        "offset": {"type": "integer"},
        "core": {"type": "array", "items": _cvec},
        "left_tail": _tail,
        "right_tail": _tail,
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "system": {
            "oneOf": [
                {
                    "type": "object",
                    "properties": {
                        "m": {"type": "integer", "minimum": 1},
                        "A0": _cmat,
                        "A1": _cmat,
                        "p": _p,
                        "name": {"type": "string"},
                    },
                    "required": ["m", "A0", "A1"],
                    "additionalProperties": False,
                },
                {
                    "type": "object",
                    "properties": {
                        "preset": {"enum": list(PRESETS)},
                        "zeta": {"type": "number", "exclusiveMinimum": 0},
                        "p": _p,
                        "alphas": _cvec,
                    },
                    "required": ["preset"],
                    "additionalProperties": False,
                },
            ]
        },
        "box": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
        "resolution": {"type": "number", "exclusiveMinimum": 0},
        "times": {"type": "array", "items": _num, "minItems": 1},
        "tmin": _num,
        "tmax": _num,
        "tpoints": {"type": "integer", "minimum": 1},
        "spacing": {"enum": ["log", "linear"]},
        "state": {
            "oneOf": [
                {"enum": ["delta", "dipole", "constant", "kernel"]},
                {
                    "type": "object",
                    "properties": {
                        "kind": {"enum": ["delta", "dipole", "constant", "kernel", "sequence"]},
                        "vector": _cvec,
                        "sequence": _sequence,
                    },
                    "required": ["kind"],
                    "additionalProperties": False,
                },
            ]
        },
        "limit": {"oneOf": [{"enum": ["none", "auto"]}, _sequence]},
        "n_max": {"type": "integer", "minimum": 1},
        "epsilon": {"type": "number"},
        "quantity": {"enum": list(QUANTITIES)},
        "window": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "lambdas": {"type": "array", "items": _cnum},
        "radii": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}, "minItems": 1},
        "psi": {
            "type": "object",
            "properties": {"psi": {"enum": ["power"]}, "alpha": {"type": "number", "minimum": 1}},
            "required": ["psi", "alpha"],
            "additionalProperties": False,
        },
        "c": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "out": {"type": "string"},
        "format": {"enum": ["json", "csv"]},
    },
    "additionalProperties": False,
}

OUTPUT_SCHEMA = {
    "type": "object",
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "inputs": {"type": "object"},
        "results": {"type": "object"},
        "version": {"type": "string"},
        "tolerances": {"type": "object", "additionalProperties": {"type": ["number", "string", "null"]}},
    },
    "required": ["command", "inputs", "results", "version", "tolerances"],
    "additionalProperties": False,
}

# default time grids per command: (tmin, tmax, tpoints)
TIME_DEFAULTS = {
    "simulate": (0.0, 100.0, 50),
    "rate-fit": (10.0, 1000.0, 60),
    "robot-kernel": (2.0, 1000.0, 60),
    "bounds": (1e2, 1e8, 7),
}


class _Parser(argparse.ArgumentParser):
    # argparse's own exit status 2 would collide with "assumption failure"
    def error(self, message):
        raise ConfigError(message)


def build_parser():
    ap = _Parser(prog="cascadekit", description="Spectral analysis and simulation of infinite cascade systems.")
    ap.add_argument("--version", action="version", version=f"cascadekit {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run config")
        sp.add_argument("--preset", choices=PRESETS)
        sp.add_argument("--zeta", type=float, help="platoon pole position")
        sp.add_argument("--p", help="1, 2, inf or any real >= 1")
        sp.add_argument("--out", help="output file (stdout if omitted)")
        sp.add_argument("--format", choices=("json", "csv"))
        sp.add_argument("--tmin", type=float)
        sp.add_argument("--tmax", type=float)
        sp.add_argument("--tpoints", type=int)
        sp.add_argument("--nmax", type=int)
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--state", choices=("delta", "dipole", "constant", "kernel"))
        sp.add_argument("--quantity", choices=QUANTITIES)
    return ap


def load_config(args):
    cfg = {}
    if args.config:
        try:
            with open(args.config) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    if args.preset:
        cfg["system"] = {"preset": args.preset}
    if args.zeta is not None:
        cfg.setdefault("system", {"preset": "platoon"})["zeta"] = args.zeta
    if args.p is not None:
        try:
            p = float(args.p)
        except ValueError:
            p = args.p
        cfg.setdefault("system", {"preset": "robot"})["p"] = "inf" if p == float("inf") else p
    flags = {
        "out": args.out, "format": args.format, "tmin": args.tmin, "tmax": args.tmax,
        "tpoints": args.tpoints, "n_max": args.nmax, "epsilon": args.epsilon,
        "state": args.state, "quantity": args.quantity,
    }
    cfg.update({k: v for k, v in flags.items() if v is not None})
    cfg.setdefault("system", {"preset": "robot"})
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None


# ------------------------------------------------------------- builders


def build_system(sysconf):
    p = parse_p(sysconf.get("p", 1))
    if "preset" not in sysconf:
        m = sysconf["m"]
        try:
            A0, A1 = parse_cmat(sysconf["A0"]), parse_cmat(sysconf["A1"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad matrix entry: {exc}") from exc
        if A0.shape != (m, m) or A1.shape != (m, m):
            raise ConfigError(f"A0 and A1 must be {m}x{m}")
        if not (np.any(A0.imag) or np.any(A1.imag)):
            A0, A1 = A0.real, A1.real
        return CascadeSystem(A0, A1, p, sysconf.get("name", ""))
    name = sysconf["preset"]
    if name == "robot":
        return robot_system(p)
    if name == "platoon":
        return platoon_system(float(sysconf.get("zeta", 1.0)), p)
    raise ConfigError("the robot-chain preset has variable coefficients; only 'bounds' accepts it")


def build_chain(sysconf):
    alphas = tuple(parse_cnum(a) for a in sysconf.get("alphas", [-1.0]))
    alphas = tuple(a.real if a.imag == 0 else a for a in alphas)
    try:
        return RobotChain(alphas)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build_state(cfg, sys, cf=None):
    st = cfg.get("state", "delta")
    if isinstance(st, str):
        st = {"kind": st}
    kind = st["kind"]
    m, p = sys.m, sys.p
    if kind == "sequence":
        if "sequence" not in st:
            raise ConfigError("state kind 'sequence' needs a 'sequence' entry")
        try:
            return SeqState.from_json(st["sequence"], m, p)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad sequence state: {exc}") from exc
    if kind == "kernel":
        if not np.isinf(p):
            raise ConfigError("the stationary kernel state lies in l^inf only; use --p inf")
        cf = cf or extract_char_fn(sys)
        return kernel_basis(sys, cf, 0.0)[0].as_state()
    try:
        vec = parse_cvec(st["vector"], m) if "vector" in st else None
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if kind == "constant":
        if not np.isinf(p):
            raise ConfigError("constant sequences lie in l^inf only; use --p inf")
        return SeqState.constant(vec if vec is not None else np.ones(m), p)
    if vec is None:
        vec = np.eye(m)[0]
    if kind == "delta":
        return SeqState.delta(m, 0, vec, p)
    return SeqState.finite(np.array([vec, -vec]), 0, p)  # dipole


def time_grid(cfg, command):
    if "times" in cfg:
        return np.array(cfg["times"], dtype=float)
    tmin0, tmax0, n0 = TIME_DEFAULTS.get(command, (0.0, 100.0, 50))
    tmin, tmax, n = cfg.get("tmin", tmin0), cfg.get("tmax", tmax0), cfg.get("tpoints", n0)
    if tmax < tmin:
        raise ConfigError(f"tmax = {tmax} < tmin = {tmin}")
    if n == 1:
        return np.array([float(tmax)])
    if cfg.get("spacing", "log") == "linear":
        return np.linspace(tmin, tmax, n)
    if tmin < 0:
        return np.array([float(tmin)])  # rejected downstream as a negative time
    if tmin == 0:
        # log grids that start at 0: keep 0, then four decades below tmax
        return np.concatenate([[0.0], np.geomspace(tmax * 1e-4, tmax, n - 1)])
    return np.geomspace(tmin, tmax, n)


def _epsilon(cfg, default=1e-12):
    eps = float(cfg.get("epsilon", default))
    if not eps > 0:
        from .errors import EpsilonNonpositive

        raise EpsilonNonpositive(f"epsilon must be positive, got {eps}")
    return eps


def _limit_state(cfg, sys, cf, x0):
    lim = cfg.get("limit", "none")
    if lim == "none":
        return None
    if lim == "auto":
        rep = cesaro_classify(sys, cf, x0, cfg.get("n_max", 10000))
        if not rep.convergent:
            raise AssumptionError(f"no limit state: Cesaro verdict is {rep.verdict}")
        return rep.limit_state
    return SeqState.from_json(lim, sys.m, sys.p)


def _ratfun_dict(f):
    return {"num": cvec(f.num.coeffs), "den": cvec(f.den.coeffs)}


# ------------------------------------------------------------- commands


def cmd_analyze(cfg):
    sys = build_system(cfg["system"])
    rep = check_assumptions(sys)
    res = {"assumptions": rep.to_dict(), "sigma0": cvec(sigma0_records(sys))}
    cf = rep.char_fn
    if cf is not None:
        res.update(
            phi=_ratfun_dict(cf.phi),
            n_phi=cf.n_phi,
            phi0=cnum(cf.phi0),
            dphi0=cnum(cf.dphi0),
            validation_residual=cf.validation_residual,
        )
    if rep.boundedness is not None:
        res["boundedness"] = rep.boundedness.to_dict()
    failed = [k for k in ("a1_holds", "a2_holds", "a3_holds", "a4_holds") if not getattr(rep, k)]
    status = None
    if failed:
        first = failed[0][:2].upper()
        own = [d for d in rep.diagnostics if d.startswith(f"({first})")]
        msg = "; ".join(own) or f"({first}) violated: " + "; ".join(rep.diagnostics)
        exc = NoCharacteristicFunction if first in ("A1", "A2") else AssumptionError
        status = exc(msg)
    tol = {"a2_validation": 1e-10, "a4": 1e-9, "contractivity": 1e-9}
    return res, tol, status


def cmd_trace_spectrum(cfg):
    sys = build_system(cfg["system"])
    cf = extract_char_fn(sys)
    box = tuple(cfg["box"]) if "box" in cfg else None
    ls = trace_level_set(cf, box, cfg.get("resolution", 1e-2))
    res = {"level_set": ls.to_dict(), "sigma0": cvec(sigma0_records(sys))}
    return res, {"level_set_bisection": 1e-6, "resolution": ls.grid_resolution}, None


def _run_simulation(cfg, command):
    sys = build_system(cfg["system"])
    cf = extract_char_fn(sys)
    x0 = build_state(cfg, sys, cf)
    eps = _epsilon(cfg)
    limit = _limit_state(cfg, sys, cf, x0)
    times = time_grid(cfg, command)
    n_phi = cf.n_phi if cf.n_phi else None
    traj = simulate(sys, x0, times, eps, limit=limit, keep_states=False, n_phi=n_phi)
    return sys, x0, traj, eps


def _trajectory_dict(traj):
    out = {
        "t": traj.times,
        "state_norm": traj.state_norms,
        "derivative_norm": traj.derivative_norms,
        "tail_bound": traj.tail_bounds,
    }
    if traj.distance_norms is not None:
        out["distance"] = traj.distance_norms
    return out


def _accuracy_status(traj):
    worst = float(np.max(traj.tail_bounds)) if traj.tail_bounds.size else 0.0
    if worst > SIM_ACCURACY:
        return AccuracyError(
            f"kernel tail bound {worst:.3e} exceeds {SIM_ACCURACY:g} relative to |x0|; lower --epsilon or shorten the time grid"
        )
    return None


def cmd_simulate(cfg):
    sys, x0, traj, eps = _run_simulation(cfg, "simulate")
    res = {"x0_norm": traj.x0_norm, "p": p_label(sys.p), "trajectory": _trajectory_dict(traj)}
    return res, {"epsilon": eps, "accuracy": SIM_ACCURACY}, _accuracy_status(traj)


def cmd_classify(cfg):
    sys = build_system(cfg["system"])
    cf = extract_char_fn(sys)
    x0 = build_state(cfg, sys, cf)
    rep = cesaro_classify(sys, cf, x0, cfg.get("n_max", 10000))
    res = {"cesaro": rep.to_dict(), "decay_prediction": None}
    if rep.convergent and rep.rate_one_over_n and cf.n_phi:
        res["decay_prediction"] = -1.0 / cf.n_phi
    return res, {"monotone_slack": 1e-13}, None


def cmd_rate_fit(cfg):
    sys, x0, traj, eps = _run_simulation(cfg, "rate-fit")
    window = tuple(cfg["window"]) if "window" in cfg else None
    fit = fit_decay_rate(traj, cfg.get("quantity", "derivative_norm"), window)
    res = {"fit": fit.to_dict(), "quantity": cfg.get("quantity", "derivative_norm"), "trajectory": _trajectory_dict(traj)}
    return res, {"epsilon": eps, "min_r_squared": 0.9}, _accuracy_status(traj)


def _slope(x, y):
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _chain_bounds(cfg):
    chain = build_chain(cfg["system"])
    source = PsiRegion.power(cfg["psi"]["alpha"]) if "psi" in cfg else chain
    radii = np.array(cfg.get("radii", np.geomspace(1e-4, 1e-2, 9)), float)
    mvals = [m_of_r(source, r) for r in radii]
    c = float(cfg.get("c", 0.5))
    mfun = m_function(source)
    inversions = []
    for t in time_grid(cfg, "bounds"):
        try:
            r = mlog_inverse(mfun, c, t)
        except CascadeError as exc:
            inversions.append({"t": t, "r_star": None, "note": str(exc)})
            continue
        inversions.append({"t": t, "r_star": float(r), "round_trip": abs(np.log1p(mfun(r) / r) * mfun(r) / (c * t) - 1)})
    checks = []
    for lam in cfg.get("lambdas", [1.0]):
        lam = parse_cnum(lam)
        x = SeqState.delta(1, 0, [1.0])
        y, bound = varcoef_resolvent_apply(chain, x, lam)
        back = y.scaled(lam) - varcoef_apply_generator(chain, y)
        checks.append({"lambda": cnum(lam), "identity_residual": (back - x).norm(1.0), "norm_bound": bound})
    vals = np.array([mv.value for mv in mvals])
    return {
        "source": source.name if isinstance(source, PsiRegion) else [cnum(a) for a in chain.omega()],
        "m_of_r": [mv.to_dict() for mv in mvals],
        "m_slope": _slope(radii, vals) if radii.size > 1 else None,
        "mlog_inverse": inversions,
        "c": c,
        "resolvent_checks": checks,
    }


def cmd_bounds(cfg):
    sysconf = cfg["system"]
    if sysconf.get("preset") == "robot-chain":
        return _chain_bounds(cfg), {"resolvent": 1e-12, "mlog_rtol": 1e-10}, None
    sys = build_system(sysconf)
    cf = extract_char_fn(sys)
    ub = check_uniform_boundedness(sys, cf)
    con = check_contractivity(sys, cf)
    radii = np.array(cfg.get("radii", np.geomspace(1e-4, 1e-2, 9)), float)
    axis = [resolvent_estimate(sys, cf, 1j * s, witness=False) for s in radii]
    centers = np.array([e.center for e in axis])
    extra = [resolvent_estimate(sys, cf, parse_cnum(z)) for z in cfg.get("lambdas", [])]
    res = {
        "boundedness": ub.to_dict(),
        "contractivity": {"passes": con.passes, "achieved_sup": con.achieved_sup},
        "axis": [{"s": s, **e.to_dict()} for s, e in zip(radii, axis)],
        "blowup_slope": _slope(radii, centers) if radii.size > 1 else None,
        "n_phi": cf.n_phi,
        "resolvent_estimates": [e.to_dict() for e in extra],
    }
    return res, {"contractivity": 1e-9, "witness": 1e-3}, None


def cmd_robot_kernel(cfg):
    rows = []
    for t in time_grid(cfg, "robot-kernel"):
        if t < 0:
            from .errors import TimeNegative

            raise TimeNegative(f"negative time {t}")
        k = robot_kernel_closed_form(t)
        st = float(np.sqrt(t))
        rows.append({
            "t": t,
            "bound": k.bound_value,
            "bound_sqrt_t": k.bound_value * st,
            "constant": robot_AT_bound_constant(t) if t > 1 else None,
            "stirling_scaled": stirling_bound_scaled(t) if t > 0 else None,
        })
    return {"rows": rows}, {"poisson_mass": 1e-15}, None


HANDLERS = {
    "analyze": cmd_analyze,
    "trace-spectrum": cmd_trace_spectrum,
    "simulate": cmd_simulate,
    "classify": cmd_classify,
    "rate-fit": cmd_rate_fit,
    "bounds": cmd_bounds,
    "robot-kernel": cmd_robot_kernel,
}


# ------------------------------------------------------------- emission


def make_record(command, cfg, results, tolerances):
    inputs = {k: v for k, v in cfg.items() if k not in ("out", "format")}
    rec = jsonable({"command": command, "inputs": inputs, "results": results,
                    "version": __version__, "tolerances": tolerances})
    jsonschema.validate(rec, OUTPUT_SCHEMA)
    return rec


def _flat(prefix, obj, out):
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flat(f"{prefix}.{k}" if prefix else k, obj[k], out)
    elif isinstance(obj, list) and not (len(obj) == 2 and all(isinstance(v, float) for v in obj)):
        for i, v in enumerate(obj):
            _flat(f"{prefix}[{i}]", v, out)
    else:
        out.append((prefix, json.dumps(obj) if isinstance(obj, list) else obj))


def _num_or_blank(v):
    return "" if v is None else float(v)


def to_csv(command, rec):
    res = rec["results"]
    if command == "trace-spectrum":
        rows = [("level_set", x, y, i) for i, line in enumerate(res["level_set"]["polylines"]) for x, y in line]
        rows += [("sigma0", z[0], z[1], -1) for z in res["sigma0"]]
        return csv_text(["record", "re", "im", "polyline_id"], rows)
    if command == "simulate":
        tr = res["trajectory"]
        cols = [c for c in ("t", "state_norm", "derivative_norm", "distance", "tail_bound") if c in tr]
        return csv_text(cols, [[float(tr[c][i]) for c in cols] for i in range(len(tr["t"]))])
    if command == "classify":
        return csv_text(["n", "residual"], [(n, float(r)) for n, r in res["cesaro"]["residual_curve"]])
    if command == "robot-kernel":
        cols = ["t", "bound", "bound_sqrt_t", "constant", "stirling_scaled"]
        return csv_text(cols, [[_num_or_blank(r[c]) for c in cols] for r in res["rows"]])
    out = []
    _flat("", res, out)
    return csv_text(["key", "value"], [(k, float(v) if isinstance(v, (int, float)) and not isinstance(v, bool) else v)
                                       for k, v in out])


def run(argv=None):
    """Parse, execute and emit; returns ``(exit_code, text)``."""
    args = build_parser().parse_args(argv)
    cfg = load_config(args)
    results, tolerances, status = HANDLERS[args.command](cfg)
    rec = make_record(args.command, cfg, results, tolerances)
    text = to_csv(args.command, rec) if cfg.get("format", "json") == "csv" else dumps(rec)
    if "out" in cfg:
        atomic_write(cfg["out"], text)
    else:
        _sys.stdout.write(text)
    if status is not None:
        raise status
    return 0


def main(argv=None):
    try:
        return run(argv)
    except CascadeError as exc:
        print(f"cascadekit: error: {exc}", file=_sys.stderr)
        if exc.exit_code == 4:
            print("cascadekit: hint: widen the fit window or add time points", file=_sys.stderr)
        return exc.exit_code
    except (ValueError, TypeError) as exc:
        # remaining input validation from the numerical layers
        print(f"cascadekit: error: {exc}", file=_sys.stderr)
        return 1


if __name__ == "__main__":
    _sys.exit(main())
