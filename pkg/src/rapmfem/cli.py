"""Command-line front end: pricing runs, surface dumps, mesh-refinement
studies and the element-vs-difference comparison, all emitted as CSV
(plus a gnuplot script for the price figure).

Flag values override config-file entries, which override the built-in
defaults.  CSV output is deterministic byte-for-byte for a fixed
configuration: floats are written in shortest round-trip form and the
metadata header records every effective (post-rounding) parameter.
"""

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateSwitch,
    ExistenceViolation,
    InvalidSize,
    InvalidSpacing,
    LinearSolveFailure,
    NonFiniteState,
    NonpositiveSpot,
    OutOfRange,
    SingularMass,
    SpotOutOfDomain,
)
from .mesh import P1, P2, uniform_mesh
from .model import RapmParams, bs_call_price, derive_constants
from .reference_fdm import FdmConfig, fdm_solve
from .solver import SolverConfig, solve_nonlinear_phase

DEFAULTS = {
    "rate": 0.1,
    "sigma": 0.2,
    "strike": 75.0,
    "expiry": 1.0,
    "risk_premium": 0.01,
    "txn_cost": 2.0,
    "radius": 3.0,
    "dx": 0.01,
    "dtau": 0.0005,
    "theta": 0.5,
    "rannacher": 4,
    "order": "p1",
    "nonlinearity": "group",
    "mass": "lumped",
    "power": "signed",
    "spots": None,
    "out": "rapm",
    "dx_ladder": "0.04,0.02,0.01,0.001",
    "fdm_dx": None,
    "fdm_dtau": None,
}

_FLOAT_KEYS = {"rate", "sigma", "strike", "expiry", "risk_premium", "txn_cost",
               "radius", "dx", "dtau", "theta", "fdm_dx", "fdm_dtau"}
_INT_KEYS = {"rannacher"}

_CONFIG_ERRORS = (ExistenceViolation, InvalidSpacing, InvalidSize, OutOfRange,
                  SpotOutOfDomain, NonpositiveSpot, DegenerateSwitch, ValueError)
_NUMERICAL_ERRORS = (LinearSolveFailure, NonFiniteState, SingularMass)

_FLAG_HINTS = {
    ExistenceViolation: "--risk-premium/--txn-cost",
    InvalidSpacing: "--dx/--radius",
    SpotOutOfDomain: "--spots/--radius",
}

_VARIANTS = [(P1, "group"), (P1, "quadrature"), (P2, "group"), (P2, "quadrature")]


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _build_parser():
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("model")
    g.add_argument("--rate", type=float, help="risk-free rate")
    g.add_argument("--sigma", type=float, help="volatility")
    g.add_argument("--strike", type=float, help="strike price")
    g.add_argument("--expiry", type=float, help="time to expiry in years")
    g.add_argument("--risk-premium", dest="risk_premium", type=float,
                   help="risk premium measure C")
    g.add_argument("--txn-cost", dest="txn_cost", type=float,
                   help="transaction cost measure M")
    d = common.add_argument_group("discretization")
    d.add_argument("--radius", type=float, help="half-width of the log-moneyness domain")
    d.add_argument("--dx", type=float, help="target element size")
    d.add_argument("--dtau", type=float, help="scaled time step")
    d.add_argument("--theta", type=float, help="theta-scheme parameter in [0, 1]")
    d.add_argument("--rannacher", type=int, help="implicit-Euler startup substeps")
    d.add_argument("--order", choices=["p1", "p2"], help="element order")
    d.add_argument("--nonlinearity", choices=["group", "quadrature"],
                   help="treatment of the 4/3-power term")
    d.add_argument("--mass", choices=["lumped", "consistent"],
                   help="inner inverse-mass treatment")
    d.add_argument("--power", choices=["signed", "clamped"],
                   help="4/3-power branch for negative arguments")
    o = common.add_argument_group("output")
    o.add_argument("--spots", help="evaluation spots: comma list or lo:hi:count")
    o.add_argument("--out", help="output path prefix")
    o.add_argument("--config", help="key = value configuration file")

    parser = argparse.ArgumentParser(
        prog="rapmfem",
        description="European call pricing under a transaction-cost "
                    "nonlinear volatility model (finite elements).",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("price", parents=[common],
                   help="price table vs the linear closed form")
    sub.add_parser("surface", parents=[common],
                   help="dump the full scaled-variable solution surface")
    pc = sub.add_parser("converge", parents=[common],
                        help="value at the strike under mesh refinement")
    pc.add_argument("--dx-ladder", dest="dx_ladder",
                    help="comma list of element sizes (coarse to fine)")
    pm = sub.add_parser("compare", parents=[common],
                        help="element solution vs the finite-difference oracle")
    pm.add_argument("--fdm-dx", dest="fdm_dx", type=float,
                    help="oracle grid spacing (defaults to --dx)")
    pm.add_argument("--fdm-dtau", dest="fdm_dtau", type=float,
                    help="oracle time step (defaults to --dtau)")
    return parser


def _read_config_file(path):
    values = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip().replace("-", "_")
        val = val.strip()
        if key not in DEFAULTS:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        if key in _FLOAT_KEYS:
            values[key] = float(val)
        elif key in _INT_KEYS:
            values[key] = int(val)
        else:
            values[key] = val
    return values


def resolve_settings(args):
    """defaults < config file < explicit command-line flags."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(_read_config_file(args.config))
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def parse_spots(text, strike):
    if text is None:
        return np.linspace(0.5 * strike, 2.0 * strike, 46)
    text = text.strip()
    if ":" in text:
        lo, hi, count = text.split(":")
        return np.linspace(float(lo), float(hi), int(count))
    return np.array([float(t) for t in text.split(",")], dtype=float)


def _build_params(s):
    return RapmParams(
        r=s["rate"], sigma=s["sigma"], strike=s["strike"], expiry=s["expiry"],
        risk_premium=s["risk_premium"], txn_cost=s["txn_cost"],
    )


def _build_cfg(s, order=None, nonlinearity=None):
    return SolverConfig(
        dtau=s["dtau"],
        theta=s["theta"],
        rannacher_substeps=s["rannacher"],
        mass_mode=s["mass"],
        nonlinearity=nonlinearity if nonlinearity is not None else s["nonlinearity"],
        power_mode=s["power"],
    )


def _meta(command, s, params, surface=None, extra=None):
    meta = {"command": command}
    for key in ("rate", "sigma", "strike", "expiry", "risk_premium", "txn_cost",
                "radius", "dx", "dtau", "theta", "rannacher", "order",
                "nonlinearity", "mass", "power"):
        meta[key] = s[key]
    dc = derive_constants(params)
    meta.update(
        t_star=dc.t_star, tau_star=dc.tau_star, tau_max=dc.tau_max,
        d_coeff=dc.d_coeff, c_r=dc.c_r,
    )
    if surface is not None:
        for key, val in surface.diagnostics.items():
            meta[key] = val
    if extra:
        meta.update(extra)
    return meta


def _write_csv(path, meta, header, rows):
    lines = [f"# {key}={_fmt(val)}" for key, val in meta.items()]
    lines.append(header)
    for row in rows:
        lines.append(",".join(_fmt(val) for val in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_price_plot(path, csv_name, strike):
    script = "\n".join([
        "# gnuplot script: option value vs spot",
        "set datafile separator ','",
        "set xlabel 'S'",
        "set ylabel 'V(S, 0)'",
        "set key left top",
        f"set arrow from {_fmt(float(strike))}, graph 0 to {_fmt(float(strike))}, graph 1 nohead dashtype 2",
        f"plot '{csv_name}' using 1:2 with lines title 'with transaction costs', \\",
        "     '' using 1:3 with lines title 'linear Black-Scholes'",
        "",
    ])
    Path(path).write_text(script, encoding="utf-8")


def run_price(s):
    params = _build_params(s)
    msh = uniform_mesh(s["radius"], s["dx"], s["order"])
    cfg = _build_cfg(s)
    spots = parse_spots(s["spots"], params.strike)
    surface = solve_nonlinear_phase(params, msh, cfg)
    v_rapm = surface.prices(spots)
    v_bs = np.asarray(bs_call_price(spots, 0.0, params), dtype=float)
    meta = _meta("price", s, params, surface, extra={"n_spots": spots.size})
    csv_path = f"{s['out']}_price.csv"
    _write_csv(csv_path, meta, "S,V_rapm,V_bs,diff",
               zip(spots.tolist(), v_rapm.tolist(), v_bs.tolist(),
                   (v_rapm - v_bs).tolist()))
    _write_price_plot(f"{s['out']}_price.gp", Path(csv_path).name, params.strike)
    print(f"wrote {csv_path} and {s['out']}_price.gp")
    return 0


def run_surface(s):
    params = _build_params(s)
    msh = uniform_mesh(s["radius"], s["dx"], s["order"])
    cfg = _build_cfg(s)
    surface = solve_nonlinear_phase(params, msh, cfg)
    meta = _meta("surface", s, params, surface)
    rows = []
    for it, tau in enumerate(surface.tau_grid):
        for ix, x in enumerate(surface.x):
            u = surface.u_history[it, ix]
            rows.append((float(tau), float(x), float(u),
                         float(surface.v_history[it, ix]),
                         float(params.strike * math.exp(x) * u)))
    csv_path = f"{s['out']}_surface.csv"
    _write_csv(csv_path, meta, "tau,x,u,v,V", rows)
    print(f"wrote {csv_path}")
    return 0


def run_converge(s):
    params = _build_params(s)
    ladder = [float(t) for t in s["dx_ladder"].split(",")]
    rows = []
    for order, nonlinearity in _VARIANTS:
        prev = None
        for dx in ladder:
            msh = uniform_mesh(s["radius"], dx, order)
            cfg = _build_cfg(s, order=order, nonlinearity=nonlinearity)
            surface = solve_nonlinear_phase(params, msh, cfg)
            v_strike = float(surface.prices(np.array([params.strike]))[0])
            change = 0.0 if prev is None else v_strike - prev
            rows.append((order, nonlinearity, msh.dx_effective, v_strike, change))
            prev = v_strike
    meta = _meta("converge", s, params, extra={"dx_ladder": s["dx_ladder"]})
    csv_path = f"{s['out']}_converge.csv"
    _write_csv(csv_path, meta, "order,nonlinearity,dx_effective,v_strike,change", rows)
    print(f"wrote {csv_path}")
    return 0


def run_compare(s):
    params = _build_params(s)
    msh = uniform_mesh(s["radius"], s["dx"], s["order"])
    cfg = _build_cfg(s)
    fdm_cfg = FdmConfig(
        dx=s["fdm_dx"] if s["fdm_dx"] is not None else s["dx"],
        dtau=s["fdm_dtau"] if s["fdm_dtau"] is not None else s["dtau"],
        radius=s["radius"],
        theta=s["theta"],
        power_mode=s["power"],
        rannacher_substeps=s["rannacher"],
    )
    fem = solve_nonlinear_phase(params, msh, cfg)
    fdm = fdm_solve(params, fdm_cfg)
    # evaluate on the coarser of the two node sets, restricted to [K/2, 2K]
    fem_spacing = float(np.min(np.diff(fem.x)))
    fdm_spacing = float(np.min(np.diff(fdm.x)))
    base = fem if fem_spacing >= fdm_spacing else fdm
    strike = params.strike
    spots = strike * np.exp(base.x)
    keep = (spots >= 0.5 * strike) & (spots <= 2.0 * strike)
    spots = spots[keep]
    v_fem = fem.prices(spots)
    v_fdm = fdm.prices(spots)
    diff = np.abs(v_fem - v_fdm)
    meta = _meta("compare", s, params, fem, extra={
        "fdm_dx": fdm_cfg.dx,
        "fdm_dtau": fdm_cfg.dtau,
        "fdm_dx_effective": fdm.diagnostics["dx_effective"],
        "fdm_dtau_effective": fdm.diagnostics["dtau_effective"],
        "n_spots": spots.size,
        "summary_max_abs_diff": float(np.max(diff)),
        "summary_mean_abs_diff": float(np.mean(diff)),
    })
    csv_path = f"{s['out']}_compare.csv"
    _write_csv(csv_path, meta, "S,V_fem,V_fdm,abs_diff",
               zip(spots.tolist(), v_fem.tolist(), v_fdm.tolist(), diff.tolist()))
    print(f"wrote {csv_path}")
    print(f"max |V_fem - V_fdm| = {np.max(diff):.6g}, "
          f"mean = {np.mean(diff):.6g} over S in [{0.5 * strike:g}, {2 * strike:g}]")
    return 0


_RUNNERS = {
    "price": run_price,
    "surface": run_surface,
    "converge": run_converge,
    "compare": run_compare,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        settings = resolve_settings(args)
        return _RUNNERS[args.command](settings)
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        ratio = getattr(exc, "ratio", None)
        if ratio is not None:
            print(f"diagnostics: dtau/dx^2 = {ratio:.6g}", file=sys.stderr)
        last_u = getattr(exc, "last_u", None)
        if last_u is not None:
            print(f"diagnostics: last finite state at tau = {exc.last_tau:.8g}, "
                  f"max |u| = {np.max(np.abs(last_u)):.6g}", file=sys.stderr)
        return 3
    except _CONFIG_ERRORS as exc:
        hint = ""
        for etype, flags in _FLAG_HINTS.items():
            if isinstance(exc, etype):
                hint = f" ({flags})"
                break
        print(f"config error{hint}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
