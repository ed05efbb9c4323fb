"""Command-line front end.

Subcommands: ``gen``, ``eval``, ``verify``, ``converge``, ``boundary``.

Configuration comes from built-in defaults, then an optional ``--config`` file
of flat ``key = value`` lines (``#`` starts a comment), then command-line
flags. Recognized keys::

    gamma = 1.8          epsilon = 2.0        s = 3.0         theta = 1e-8
    h = 0.1              h_list = 0.2, 0.1, 0.05, 0.025        dim = 2
    seed = 0             jitter = 0.2 (0 for gen)                field = sinusoid
    lower = 0, 0         upper = 1, 1         halfspaces = nx, ny, b; ...
    face = 0             rho_list = 0.05, 0.01, ...           probe_factor = 3
    rate_value_window = 1.7, 2.3             rate_grad_window = 0.7, 1.3

Exit codes: 0 pass, 1 check failure, 2 domain or hull error, 3 IO or parse error.
Reports are JSON with sorted keys and no timestamps, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
from scipy.spatial import cKDTree

from . import __version__, diagnostics, kernels
from .fields import REGISTRY, get_field
from .fileio import format_csv, read_points, write_points
from .geometry import Domain, generate_grid_points, random_probes, verify_h_covering
from .interpolation import error_study
from .lme import LmeError, LmeParams, NotConvergedError, OutsideHullError, evaluate, _checked

EXIT_OK, EXIT_FAIL, EXIT_DOMAIN, EXIT_IO = 0, 1, 2, 3

# perturbed lattices: exact lattices are non-generic (tensor-product weights,
# superconvergent gradients), see the README
STUDY_JITTER = 0.2

DEFAULTS = {
    "gamma": 1.8,
    "epsilon": 2.0,
    "s": 3.0,
    "theta": 1e-8,
    "h": None,
    "h_list": [0.2, 0.1, 0.05, 0.025],
    "dim": 2,
    "seed": 0,
    "jitter": None,
    "field": "sinusoid",
    "lower": None,
    "upper": None,
    "halfspaces": None,
    "face": 0,
    "rho_list": None,
    "probe_factor": 3.0,
    "rate_value_window": [1.7, 2.3],
    "rate_grad_window": [0.7, 1.3],
}

_FLOAT_LISTS = {"h_list", "lower", "upper", "rho_list", "rate_value_window", "rate_grad_window"}
_INTS = {"dim", "seed", "face"}
_STRINGS = {"field", "halfspaces"}


class UsageError(Exception):
    """Bad arguments or configuration (exit code 3)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_IO, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in str(text).replace(";", ",").split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _coerce(key: str, value):
    if value is None:
        return None
    try:
        if key in _FLOAT_LISTS:
            return value if isinstance(value, list) else _float_list(value)
        if key in _INTS:
            return int(value)
        if key in _STRINGS:
            return str(value).strip()
        return float(value)
    except (TypeError, ValueError):
        raise UsageError(f"bad value for {key}: {value!r}") from None


def read_config(path: str) -> dict:
    """Parse a flat ``key = value`` file."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for k, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{k}: expected 'key = value'")
            key, value = (t.strip() for t in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"{path}:{k}: unknown key {key!r}")
            out[key] = _coerce(key, value)
    return out


def resolve_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(read_config(args.config))
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = _coerce(key, v)
    if cfg["gamma"] <= 0 or cfg["epsilon"] <= 0:
        raise UsageError("gamma and epsilon must be positive")
    return cfg


def build_domain(cfg: dict) -> Domain:
    if cfg["halfspaces"]:
        rows = [_float_list(r) for r in cfg["halfspaces"].split(";") if r.strip()]
        if len({len(r) for r in rows}) != 1:
            raise UsageError("every half-space needs d normal components and an offset")
        A = np.array(rows)
        scale = np.linalg.norm(A[:, :-1], axis=1)
        if np.any(scale == 0):
            raise UsageError("half-space normal must be nonzero")
        return Domain.polytope(A[:, :-1] / scale[:, None], A[:, -1] / scale)
    d = cfg["dim"]
    lo = cfg["lower"] if cfg["lower"] is not None else [0.0] * d
    hi = cfg["upper"] if cfg["upper"] is not None else [1.0] * d
    return Domain.box(lo, hi)


def _echo(cfg: dict, command: str) -> dict:
    out = {k: v for k, v in cfg.items() if v is not None}
    out["command"] = command
    out["backend"] = kernels.get_backend()
    return out


def _dump(obj) -> str:
    return json.dumps(diagnostics._jsonable(obj), sort_keys=True, indent=2) + "\n"


def _emit(args, obj) -> None:
    text = _dump(obj)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr)


def _jitter(cfg, default: float) -> float:
    return default if cfg["jitter"] is None else float(cfg["jitter"])


def _load_points(path):
    try:
        return read_points(path)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _require_h(cfg, default=None) -> float:
    h = cfg["h"] if cfg["h"] is not None else default
    if h is None or not h > 0:
        raise UsageError("a positive --h is required")
    return float(h)


# ------------------------------------------------------------------ commands

def cmd_gen(args, cfg) -> int:
    domain = build_domain(cfg)
    h = _require_h(cfg)
    P = generate_grid_points(domain, h, jitter=_jitter(cfg, 0.0), seed=cfg["seed"])
    if args.out:
        write_points(P, args.out)
    else:
        sys.stdout.write(format_csv(P.points))
    if args.report:
        rep = verify_h_covering(P, domain, h)
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(_dump({"config": _echo(cfg, "gen"), "regularity": rep.to_dict()}))
    _say(args, f"generated {len(P)} nodes")
    return EXIT_OK


def _spacing(P) -> float:
    if len(P) < 2:
        return 1.0
    dist, _ = cKDTree(P.points).query(P.points, k=2)
    return float(dist[:, 1].max())


def cmd_eval(args, cfg) -> int:
    P = _load_points(args.points)
    x = _float_list(args.x)
    if len(x) != P.dim:
        raise UsageError(f"x has {len(x)} coordinates; the point set has d={P.dim}")
    h = _require_h(cfg, _spacing(P))
    params = LmeParams(h=h, gamma=cfg["gamma"])
    ev = evaluate(np.array([x]), P, params, gradients=True)
    s = ev.point(0)
    out = {
        "config": _echo(cfg, "eval") | {"h": h, "dim": P.dim},
        "x": x,
        "node_ids": s.node_ids,
        "weights": s.weights,
        "gradients": s.gradients if ev.j_star_ok[0] else None,
        "j_star": s.j_star,
        "lambda_star": s.dual.lambda_star,
        "log_Z": s.dual.log_Z,
        "iters": s.dual.iters,
        "status": s.dual.status,
    }
    _checked(ev, want_grad=False)
    _emit(args, out)
    if not ev.j_star_ok[0]:
        _say(args, "warning: degenerate J*; gradients omitted")
    return EXIT_OK


def verify_report(cfg: dict, fault: str | None = None) -> dict:
    domain = build_domain(cfg)
    d = domain.dim
    gamma, eps, seed = cfg["gamma"], cfg["epsilon"], cfg["seed"]
    h_list = sorted(cfg["h_list"], reverse=True)
    pf = cfg["probe_factor"]
    checks = []

    h_mid = h_list[len(h_list) // 2]
    jitter = _jitter(cfg, STUDY_JITTER)
    for jit in (0.0, jitter):
        P = generate_grid_points(domain, h_mid, jitter=jit, seed=seed)
        X = random_probes(domain, 200, eps * h_mid, seed)
        res = diagnostics.check_consistency_suite(P, LmeParams(h=h_mid, gamma=gamma), X, fault=fault)
        res.params["jitter"] = jit
        checks.append(res)
    checks.append(diagnostics.decay_sweep(domain, h_list, cfg["s"], gamma, eps, pf).to_result())
    checks.append(diagnostics.concentration_sweep(domain, h_list, cfg["theta"], gamma, eps, pf))
    checks.append(diagnostics.dual_bounds_sweep(domain, h_list, eps, gamma, pf, jitter, seed))
    checks.append(diagnostics.closed_form_check(0.0, h_mid, gamma))
    entries = [c.to_dict() for c in checks]
    return {"config": _echo(cfg, "verify"), "checks": entries, "pass": all(e["pass"] for e in entries)}


def cmd_verify(args, cfg) -> int:
    report = verify_report(cfg, fault=args.inject_fault)
    _emit(args, report)
    for e in report["checks"]:
        _say(args, f"{'PASS' if e['pass'] else 'FAIL'}  {e['check']}")
    return EXIT_OK if report["pass"] else EXIT_FAIL


def _in_window(rate, window) -> bool:
    return rate is not None and window[0] <= rate <= window[1]


def converge_report(cfg: dict):
    domain = build_domain(cfg)
    if cfg["field"] not in REGISTRY:
        raise UsageError(f"unknown field {cfg['field']!r}; choose from {sorted(REGISTRY)}")
    field = get_field(cfg["field"], domain.dim)
    rep = error_study(field, domain, cfg["h_list"], epsilon=cfg["epsilon"], gamma=cfg["gamma"],
                      probe_factor=cfg["probe_factor"], jitter=_jitter(cfg, STUDY_JITTER), seed=cfg["seed"])
    body = rep.to_dict()
    rates = body["rates"]
    checks = {}
    for key, win in (("value", cfg["rate_value_window"]), ("grad", cfg["rate_grad_window"])):
        # undefined rates (errors at round-off level) are flagged, not failed
        checks[key] = {"window": win, "defined": rates[key] is not None,
                       "pass": rates[key] is None or _in_window(rates[key], win)}
    body["config"] = _echo(cfg, "converge")
    body["checks"] = checks
    body["pass"] = all(c["pass"] for c in checks.values())
    return body, rep


def cmd_converge(args, cfg) -> int:
    body, rep = converge_report(cfg)
    _emit(args, body)
    csv_path = args.csv or (os.path.splitext(args.out)[0] + ".csv" if args.out else None)
    if csv_path:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(rep.to_csv())
    r = body["rates"]
    _say(args, f"rate value {r['value']}  rate grad {r['grad']}  -> {'PASS' if body['pass'] else 'FAIL'}")
    return EXIT_OK if body["pass"] else EXIT_FAIL


def boundary_report(cfg: dict) -> dict:
    domain = build_domain(cfg)
    h = _require_h(cfg, 0.1)
    face = cfg["face"]
    if not 0 <= face < len(domain.offsets):
        raise UsageError(f"face index {face} out of range")
    params = LmeParams(h=h, gamma=cfg["gamma"])
    jitter = _jitter(cfg, STUDY_JITTER)
    P = generate_grid_points(domain, h, jitter=jitter, seed=cfg["seed"])
    rho = None if cfg["rho_list"] is None else np.asarray(cfg["rho_list"])
    probe = diagnostics.boundary_scaling_probe(domain, face, P, params, rho).to_result().to_dict()

    far = []
    for hh in (h, h / 2):
        Pk = generate_grid_points(domain, hh, jitter=jitter, seed=cfg["seed"])
        far.append(diagnostics.far_node_sweep(domain, Pk, LmeParams(h=hh, gamma=cfg["gamma"])).to_dict())
    R0 = [f["measured"]["R0"] for f in far]
    stable = None not in R0 and abs(R0[0] - R0[1]) <= 1.0
    far_entry = {"check": "far_node_stability", "params": {"h_pair": [h, h / 2]},
                 "measured": {"R0": R0, "sweeps": far}, "pass": bool(stable and all(f["pass"] for f in far))}
    checks = [probe, far_entry]
    return {"config": _echo(cfg, "boundary"), "rotation": probe["params"]["rotation"],
            "checks": checks, "pass": all(c["pass"] for c in checks)}


def cmd_boundary(args, cfg) -> int:
    report = boundary_report(cfg)
    _emit(args, report)
    for c in report["checks"]:
        _say(args, f"{'PASS' if c['pass'] else 'FAIL'}  {c['check']}")
    small = report["checks"][0]["measured"]["smallest_converged_rho"]
    _say(args, f"smallest converged rho: {small}")
    return EXIT_OK if report["pass"] else EXIT_FAIL


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' file; flags override it")
    common.add_argument("--gamma", help="locality parameter, beta = gamma / h^2 (default 1.8)")
    common.add_argument("--h", help="node spacing measure h")
    common.add_argument("--h-list", dest="h_list", help="comma-separated h values for sweeps")
    common.add_argument("--dim", help="dimension of the default unit box (default 2)")
    common.add_argument("--seed", help="seed for node jitter (default 0)")
    common.add_argument("--jitter", help="interior node jitter as a fraction of the lattice spacing")
    common.add_argument("--epsilon", help="interior margin in units of h (default 2)")
    common.add_argument("--out", help="write the JSON report (or point set) here instead of stdout")
    common.add_argument("--quiet", action="store_true", help="suppress the summary on stderr")

    p = _Parser(prog="lmekit", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"lmekit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate a lattice point set")
    g.add_argument("--report", help="also write a regularity report (JSON) to this path")

    e = sub.add_parser("eval", parents=[common], help="shape functions at one point")
    e.add_argument("points", help="point-set file (.csv or .json)")
    e.add_argument("x", help="evaluation point, comma-separated")

    v = sub.add_parser("verify", parents=[common], help="run the consistency and bound checks")
    v.add_argument("--inject-fault", dest="inject_fault", choices=["weights"], help=argparse.SUPPRESS)

    c = sub.add_parser("converge", parents=[common], help="h-refinement error study")
    c.add_argument("--field", help=f"one of {sorted(REGISTRY)}")
    c.add_argument("--csv", help="CSV path (default: --out with a .csv suffix)")

    b = sub.add_parser("boundary", parents=[common], help="boundary-layer scaling probe")
    b.add_argument("--face", help="face index of the domain (default 0)")
    b.add_argument("--rho-list", dest="rho_list", help="strictly decreasing distances to the face")
    return p


COMMANDS = {"gen": cmd_gen, "eval": cmd_eval, "verify": cmd_verify, "converge": cmd_converge,
            "boundary": cmd_boundary}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OutsideHullError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except NotConvergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except LmeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except ValueError as exc:
        # geometry and point-set validation
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
