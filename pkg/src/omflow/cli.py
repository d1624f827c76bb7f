"""Command-line front end.

Subcommands:

    om-eval          evaluate the Lagrangian along a curve, write CSV + JSON
    mpp              solve the most-probable-path BVP, write curve CSV + JSON
    smallball        tube-probability sweep over an epsilon list (or --ratio)
    lambda1          print the first Dirichlet eigenvalue for dimension n
    cartan-check     normal-coordinate quadratic-term check
    transport-check  parallel-transport orthonormality report

Configs are flat dotted-key text files (``family.name = sphere_ricci``),
overridable from the command line with ``--set key=value``.  All numeric
file output is fixed at 12 significant digits so reruns are byte-identical.

Exit codes: 0 ok, 2 config error, 3 domain error, 4 no convergence,
5 degenerate statistics.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import geometry, lagrangian, mpp, sde, transport
from .errors import (ConfigError, DegenerateRatio, NoConvergence,
                     NotOrthonormal, OmflowError, OutOfDomain, StepFailure)

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DOMAIN = 3
EXIT_NOCONV = 4
EXIT_DEGENERATE = 5


def fmt(x) -> str:
    """12-significant-digit decimal rendering used in every output file."""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.12g}"


def _json_ready(obj):
    if isinstance(obj, dict):
        return {k: _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(fmt(obj))
    return obj


def write_json(path: str, payload: dict) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **_json_ready(payload)}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def parse_config(path: str | None, overrides) -> dict:
    """Flat dotted-key config: one ``key = value`` pair per line, ``#``
    comments.  Overrides are ``key=value`` strings from --set."""
    cfg: dict[str, str] = {}
    if path is not None:
        try:
            with open(path) as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for lineno, raw in enumerate(lines, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, "
                                  f"got {raw.strip()!r}")
            key, val = line.split("=", 1)
            cfg[key.strip()] = val.strip()
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, val = item.split("=", 1)
        cfg[key.strip()] = val.strip()
    return cfg


def _get(cfg: dict, key: str, default=None, required=False):
    if key in cfg:
        return cfg[key]
    if required:
        raise ConfigError(f"missing config key {key!r}")
    return default


def _get_float(cfg, key, default=None, required=False):
    raw = _get(cfg, key, default=default, required=required)
    if raw is None or isinstance(raw, float):
        return raw
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {raw!r} is not a number") from exc


def _get_int(cfg, key, default=None, required=False):
    raw = _get(cfg, key, default=default, required=required)
    if raw is None or isinstance(raw, int):
        return raw
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {raw!r} is not an integer") from exc


def _get_vector(cfg, key, required=False):
    raw = _get(cfg, key, required=required)
    if raw is None:
        return None
    try:
        return np.array([float(v) for v in str(raw).split(",")])
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {raw!r} is not a "
                          f"comma-separated vector") from exc


def build_family(cfg: dict) -> geometry.MetricFamily:
    params = {k.split(".", 1)[1]: v for k, v in cfg.items()
              if k.startswith("family.")}
    if "name" not in params:
        raise ConfigError("missing config key 'family.name'")
    return geometry.family_from_config(params)


def build_curve(cfg: dict, dim: int, prefix: str = "curve") -> transport.Curve:
    kind = _get(cfg, f"{prefix}.kind", default="constant")
    T = _get_float(cfg, f"{prefix}.T", required=True)
    if kind == "constant":
        x0 = _get_vector(cfg, f"{prefix}.x0", required=True)
        return transport.constant_curve(T, x0)
    if kind == "line":
        x0 = _get_vector(cfg, f"{prefix}.x0", required=True)
        x1 = _get_vector(cfg, f"{prefix}.x1", required=True)
        return transport.line_curve(T, x0, x1)
    if kind == "csv":
        path = _get(cfg, f"{prefix}.path", required=True)
        return transport.curve_from_csv(path)
    raise ConfigError(f"unknown {prefix}.kind {kind!r}")


def build_drift(cfg: dict, dim: int) -> geometry.VectorField:
    kind = _get(cfg, "drift.kind", default="zero")
    if kind == "zero":
        return geometry.zero_field(dim)
    if kind == "constant":
        mu = _get_vector(cfg, "drift.mu", required=True)
        if len(mu) != dim:
            raise ConfigError(f"drift.mu has length {len(mu)}, family "
                              f"dimension is {dim}")
        return geometry.constant_field(mu)
    raise ConfigError(f"unknown drift.kind {kind!r}")


def build_weight(cfg: dict) -> lagrangian.WeightFunction:
    kind = _get(cfg, "weight.kind", default="one")
    if kind == "one":
        return lagrangian.unit_weight()
    if kind == "exp":
        return lagrangian.exp_weight(_get_float(cfg, "weight.rate",
                                                required=True))
    raise ConfigError(f"unknown weight.kind {kind!r}")


# ---------------------------------------------------------------- commands

def cmd_om_eval(args) -> int:
    cfg = parse_config(args.config, args.set)
    family = build_family(cfg)
    curve = build_curve(cfg, family.dim)
    Z = build_drift(cfg, family.dim)
    steps = _get_int(cfg, "quadrature.steps", default=1000)
    n_samples = _get_int(cfg, "samples", default=101)
    total = lagrangian.action(family, Z, curve, quadrature_steps=steps)

    csv_path = _get(cfg, "output.csv", default=args.out + ".csv")
    json_path = _get(cfg, "output.json", default=args.out + ".json")
    with open(csv_path, "w") as fh:
        fh.write("t,kinetic,div_term,scalar_term,trace_term,total\n")
        for t in np.linspace(0.0, curve.T, n_samples):
            s = lagrangian.om_lagrangian(family, Z, t, curve.phi(t),
                                         curve.phi_dot(t))
            fh.write(",".join(fmt(v) for v in (t, s.kinetic, s.div_term,
                                               s.scalar_term, s.trace_term,
                                               s.total)) + "\n")
    write_json(json_path, {"action": total, "family": family.name,
                           "T": curve.T, "quadrature_steps": steps})
    print(f"action {fmt(total)}")
    return EXIT_OK


def cmd_mpp(args) -> int:
    cfg = parse_config(args.config, args.set)
    family = build_family(cfg)
    Z = build_drift(cfg, family.dim)
    T = _get_float(cfg, "mpp.T", required=True)
    x0 = _get_vector(cfg, "mpp.x0", required=True)
    x1 = _get_vector(cfg, "mpp.x1", required=True)
    steps = _get_int(cfg, "mpp.steps", default=400)
    sol = mpp.solve_mpp_bvp(family, Z, T, x0, x1, steps=steps)
    transport.curve_to_csv(sol.curve, args.out + ".csv", m=steps + 1)
    report = {"action": sol.action,
              "terminal_error": sol.endpoint_error,
              "iterations": sol.newton_iterations,
              "converged": sol.converged,
              "initial_velocity": list(sol.initial_velocity)}
    if args.oracle:
        knots = _get_int(cfg, "mpp.knots", default=200)
        direct = mpp.minimize_action_direct(family, Z, T, x0, x1,
                                            n_knots=knots)
        ts = np.linspace(0.0, T, 401)
        gap = np.array([np.linalg.norm(sol.curve.phi(t) - direct.curve.phi(t))
                        for t in ts])
        report["oracle_action"] = direct.action
        report["oracle_l2_gap"] = float(np.sqrt(np.trapezoid(gap ** 2, ts)))
    write_json(args.out + ".json", report)
    print(f"action {fmt(sol.action)} terminal_error {fmt(sol.endpoint_error)}")
    return EXIT_OK


def cmd_smallball(args) -> int:
    cfg = parse_config(args.config, args.set)
    family = build_family(cfg)
    Z = build_drift(cfg, family.dim)
    weight = build_weight(cfg)
    curve = build_curve(cfg, family.dim)
    n_paths = _get_int(cfg, "sb.n_paths", default=100_000)
    seed = _get_int(cfg, "sb.seed", default=0)
    dt = _get_float(cfg, "sb.dt")
    spec = sde.DiffusionSpec(family, Z, T=curve.T, dt=dt)

    if args.ratio:
        curve_b = build_curve(cfg, family.dim, prefix="curve2")
        eps = _get_float(cfg, "sb.eps", required=True)
        res = sde.ratio_experiment(spec, curve, spec, curve_b, eps,
                                   n_paths=n_paths, seed=seed, weight=weight)
        act_a = lagrangian.weighted_action(family, Z, weight, curve)
        act_b = lagrangian.weighted_action(family, Z, weight, curve_b)
        predicted = math.exp(act_b - act_a)
        write_json(args.out + ".json", {
            "ratio": res.ratio, "ci_low": res.ci_low, "ci_high": res.ci_high,
            "predicted_action_ratio": predicted,
            "p_a": res.est_a.p_hat, "p_b": res.est_b.p_hat,
            "hits_a": res.est_a.n_hit, "hits_b": res.est_b.n_hit,
            "n_paths": n_paths, "seed": seed})
        print(f"ratio {fmt(res.ratio)} ci [{fmt(res.ci_low)}, "
              f"{fmt(res.ci_high)}] predicted {fmt(predicted)}")
        return EXIT_OK

    eps_raw = _get(cfg, "sb.eps", required=True)
    eps_list = [float(v) for v in str(eps_raw).split(",")]
    rows = []
    for eps in eps_list:
        est = sde.tube_probability(spec, curve, eps, n_paths=n_paths,
                                   seed=seed, weight=weight)
        pred = sde.asymptotic_prediction(family, Z, curve, eps, weight=weight)
        logp = math.log(est.p_hat) if est.p_hat > 0 else float("-inf")
        rows.append((eps, est.p_hat, est.ci_low, est.ci_high, est.n_hit,
                     eps * eps * logp, pred.log_p))
    with open(args.out + ".csv", "w") as fh:
        fh.write("eps,p_hat,ci_low,ci_high,n_hit,eps2_log_p,predicted_log_p\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    write_json(args.out + ".json", {
        "eps": eps_list, "p_hat": [r[1] for r in rows],
        "eps2_log_p": [r[5] for r in rows],
        "n_paths": n_paths, "seed": seed, "dt": spec.step_size()})
    for row in rows:
        print(f"eps {fmt(row[0])} p_hat {fmt(row[1])} "
              f"eps2_log_p {fmt(row[5])}")
    return EXIT_OK


def cmd_lambda1(args) -> int:
    val = sde.lambda1_dirichlet(args.n)
    print(fmt(val))
    return EXIT_OK


def cmd_cartan_check(args) -> int:
    cfg = parse_config(args.config, args.set)
    family = build_family(cfg)
    t = _get_float(cfg, "cartan.t", default=family.time_span[0])
    center = _get_vector(cfg, "cartan.center")
    if center is None:
        center = np.zeros(family.dim)
    report = transport.cartan_expansion_check(family, t, center)
    write_json(args.out + ".json", {
        "radii": list(report.radii),
        "max_deviation": report.max_deviation,
        "remainders": list(report.remainders),
        "remainder_order": report.remainder_order})
    print(f"max_deviation {fmt(report.max_deviation)} "
          f"remainder_order {fmt(report.remainder_order)}")
    return EXIT_OK


def cmd_transport_check(args) -> int:
    cfg = parse_config(args.config, args.set)
    family = build_family(cfg)
    seed = _get_int(cfg, "transport.seed", default=0)
    steps = _get_int(cfg, "transport.steps", default=2000)
    T = family.time_span[1] - family.time_span[0]
    rng = np.random.default_rng(seed)
    mid = 0.5 * (family.chart_lo + family.chart_hi)
    mid = np.where(np.isfinite(mid), mid, 0.0)
    amp = 0.3 * rng.standard_normal((family.dim, 3))
    freq = rng.integers(1, 4, size=(family.dim, 3))

    def phi(t):
        s = 2.0 * math.pi * t / T
        return mid + np.sum(amp * np.sin(freq * s), axis=1)

    def phi_dot(t):
        s = 2.0 * math.pi * t / T
        return np.sum(amp * freq * np.cos(freq * s), axis=1) * 2 * math.pi / T

    curve = transport.Curve(T=T, phi=phi, phi_dot=phi_dot)
    frame0 = geometry.orthonormal_frame(family, family.time_span[0], phi(0.0))
    path = transport.parallel_transport(family, curve, frame0, steps=steps)
    defect = transport.orthonormality_defect(family, curve, path)
    write_json(args.out + ".json", {
        "family": family.name, "steps": steps, "seed": seed,
        "max_defect": defect})
    print(f"max_defect {fmt(defect)}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="omflow",
        description="Onsager-Machlup tools for time-dependent metrics")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None,
                       help="flat dotted-key config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")
        p.add_argument("--out", default="omflow_out",
                       help="output file stem")
        p.add_argument("--threads", type=int, default=None,
                       help="solver thread bound (results do not depend on it)")

    p = sub.add_parser("om-eval", help="Lagrangian along a curve")
    common(p)
    p.set_defaults(func=cmd_om_eval)

    p = sub.add_parser("mpp", help="most probable path (shooting BVP)")
    common(p)
    p.add_argument("--oracle", action="store_true",
                   help="cross-check with the direct minimizer")
    p.set_defaults(func=cmd_mpp)

    p = sub.add_parser("smallball", help="tube probability sweep")
    common(p)
    p.add_argument("--ratio", action="store_true",
                   help="two-curve ratio experiment (uses curve2.* keys)")
    p.set_defaults(func=cmd_smallball)

    p = sub.add_parser("lambda1", help="first Dirichlet eigenvalue")
    p.add_argument("n", type=int)
    p.set_defaults(func=cmd_lambda1)

    p = sub.add_parser("cartan-check", help="normal-coordinate expansion check")
    common(p)
    p.set_defaults(func=cmd_cartan_check)

    p = sub.add_parser("transport-check", help="orthonormality report")
    common(p)
    p.set_defaults(func=cmd_transport_check)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutOfDomain as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (NoConvergence, StepFailure, NotOrthonormal) as exc:
        print(f"no convergence: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    except DegenerateRatio as exc:
        print(f"degenerate statistics: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except OmflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
