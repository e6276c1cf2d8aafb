"""Command-line driver.

Every subcommand accepts ``--config FILE``: an INI-style file with flat
``key = value`` lines in a ``[common]`` section and/or a section named after
the subcommand. Keys are the long option names (``-`` or ``_``). Unknown
keys are an error. Command-line flags override the file; the environment
variable ``DILUTE_VISCOSITY_OUTPUT_DIR`` overrides the file's output
directory but not ``--output-dir``.
"""

import argparse
import configparser
import os
import sys
import time

import numpy as np

from . import effective_viscosity as ev
from . import point_process as pp
from . import single_sphere as ss
from . import tensor_core as tc
from .two_sphere import PairTable

OUTPUT_ENV = "DILUTE_VISCOSITY_OUTPUT_DIR"
DEFAULT_STRAIN = "1,-0.5,-0.5,0,0,0"


class ConfigError(ValueError):
    pass


def _floats(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


def _strain(text):
    """``xx,yy,zz,xy,xz,yz`` -> symmetric trace-free 3x3."""
    v = _floats(text)
    if len(v) != 6:
        raise argparse.ArgumentTypeError("strain needs 6 numbers: xx,yy,zz,xy,xz,yz")
    S = np.array([[v[0], v[3], v[4]], [v[3], v[1], v[5]], [v[4], v[5], v[2]]])
    if not tc.is_strain(S, tol=1e-12):
        raise argparse.ArgumentTypeError("strain must be trace-free")
    return S


def _positive(kind):
    def conv(text):
        val = kind(float(text))
        if not val > 0:
            raise argparse.ArgumentTypeError(f"expected a positive value, got {text}")
        return val
    return conv


def _fmt(v):
    if isinstance(v, np.ndarray):
        return " ".join(repr(float(x)) for x in v.ravel())
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _common(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--output-dir", default=None, help="directory for output files")
    p.add_argument("--prefix", default=None, help="output file stem (default: command name)")
    p.add_argument("--strict", action="store_true", help="nonzero exit on any flagged solver failure")
    p.add_argument("--threads", type=_positive(int), default=1, help="worker thread cap")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strain", type=_strain, default=_strain(DEFAULT_STRAIN),
                   help="xx,yy,zz,xy,xz,yz")


def build_parser():
    parser = argparse.ArgumentParser(prog="dilute-viscosity", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="exact single-sphere identities")
    _common(p)
    p.add_argument("--builtin", action="store_true", help="run the built-in identity suite")
    p.add_argument("--quad-order", type=int, default=20)

    p = sub.add_parser("mu2", help="phi^2 coefficient")
    _common(p)
    p.add_argument("--g2", default="hardcore-uniform",
                   help="hardcore-uniform | hardcore-exp | matern1 | path to a g2 CSV")
    p.add_argument("--r0", type=float, default=2.5)
    p.add_argument("--n", type=_positive(float), default=1e6, help="N (domain B(0, N^1/3))")
    p.add_argument("--lambda", dest="lambda_", type=_positive(float), default=0.01,
                   help="parent intensity for --g2 matern1")
    p.add_argument("--amplitude", type=float, default=0.5)
    p.add_argument("--length", type=_positive(float), default=0.5)
    p.add_argument("--functional", choices=["mu2", "nu2", "both"], default="both")
    p.add_argument("--tol", type=_positive(float), default=1e-3)
    p.add_argument("--radial-order", type=int, default=8)
    p.add_argument("--angular-order", type=int, default=6)

    p = sub.add_parser("finite-n", help="finite-N viscosity functional on Matern-I ensembles")
    _common(p)
    p.add_argument("--phi", type=_floats, default=[0.005, 0.01, 0.02])
    p.add_argument("--L", type=_positive(float), default=20.0, help="container radius")
    p.add_argument("--r0", type=float, default=2.5)
    p.add_argument("--configs", type=_positive(int), default=20)
    p.add_argument("--method", choices=["quadrature", "dipole"], default="quadrature")
    p.add_argument("--quad-order", type=int, default=12)

    p = sub.add_parser("pair-table", help="tabulate M_l on a log grid and write the cache")
    _common(p)
    p.add_argument("--r-min", type=float, default=2.05)
    p.add_argument("--r-max", type=float, default=400.0)
    p.add_argument("--n-grid", type=_positive(int), default=241)

    p = sub.add_parser("pointprocess", help="sample a process, check H1, estimate g2")
    _common(p)
    kind = p.add_mutually_exclusive_group()
    kind.add_argument("--matern1", dest="process", action="store_const", const="matern1")
    kind.add_argument("--poisson", dest="process", action="store_const", const="poisson")
    p.set_defaults(process="matern1")
    p.add_argument("--lambda", dest="lambda_", type=_positive(float), default=0.01)
    p.add_argument("--r0", type=float, default=2.5)
    p.add_argument("--trials", type=_positive(int), default=100)
    p.add_argument("--box", type=_positive(float), default=15.0, help="half-width of the cube")
    p.add_argument("--bins", type=_floats, default=[0.5 * k for k in range(21)],
                   help="bin edges")

    p = sub.add_parser("residual-scaling", help="cluster-expansion residual proxies vs phi")
    _common(p)
    p.add_argument("--phi", type=_floats, default=[0.01, 0.02, 0.04])
    p.add_argument("--n-spheres", type=_positive(int), default=200)
    p.add_argument("--configs", type=_positive(int), default=50)
    p.add_argument("--r0", type=float, default=2.05)
    p.add_argument("--ball-order", type=int, default=4)
    return parser


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _apply_config_file(sub, path, command):
    cp = configparser.ConfigParser(interpolation=None)
    if not cp.read(path):
        raise ConfigError(f"cannot read config file {path}")
    dests = {}
    for action in sub._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                dests[opt[2:].replace("-", "_").lower()] = action
    defaults = {}
    for section in cp.sections():
        if section not in ("common", command):
            continue
        for key, raw in cp.items(section):
            name = key.replace("-", "_").lower()
            action = dests.get(name)
            if action is None or name in ("config", "help"):
                raise ConfigError(f"unknown key {key!r} in [{section}] of {path}")
            if isinstance(action, argparse._StoreTrueAction):
                value = cp.getboolean(section, key)
            elif isinstance(action, argparse._StoreConstAction):
                if cp.getboolean(section, key):
                    defaults[action.dest] = action.const
                continue
            elif action.type is not None:
                try:
                    value = action.type(raw)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise ConfigError(f"{key}: {exc}") from exc
            else:
                value = raw
            if action.choices is not None and value not in action.choices:
                raise ConfigError(f"{key}: {value!r} not in {sorted(action.choices)}")
            defaults[action.dest] = value
    unknown = set(cp.sections()) - {"common", *_subcommands()}
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)} in {path}")
    sub.set_defaults(**defaults)
    return defaults


def _subcommands():
    return ("validate", "mu2", "finite-n", "pair-table", "pointprocess", "residual-scaling")


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    file_defaults = {}
    if known.config and known.command in _subcommands():
        file_defaults = _apply_config_file(_subparser(parser, known.command), known.config,
                                           known.command)
    args = parser.parse_args(argv)
    explicit = "--output-dir" in argv or any(a.startswith("--output-dir=") for a in argv)
    if not explicit:
        env = os.environ.get(OUTPUT_ENV)
        if env:
            args.output_dir = env
        elif args.output_dir is None:
            args.output_dir = file_defaults.get("output_dir", ".")
    return args


def _echo(args):
    skip = {"config"}
    out = {}
    for key, val in sorted(vars(args).items()):
        if key in skip:
            continue
        if isinstance(val, np.ndarray):
            val = val.tolist()
        out[key] = val
    if args.config:
        out["config_file"] = os.path.abspath(args.config)
    return out


def _paths(args):
    os.makedirs(args.output_dir, exist_ok=True)
    stem = os.path.join(args.output_dir, args.prefix or args.command)
    for suffix in (".csv", ".json"):
        if os.path.exists(stem + suffix) and not os.access(stem + suffix, os.W_OK):
            raise OSError(f"output path {stem + suffix} is not writable")
    if not os.access(args.output_dir, os.W_OK):
        raise OSError(f"output directory {args.output_dir} is not writable")
    return stem + ".csv", stem + ".json"


def _echo_lines(args):
    return {k: _fmt(v) for k, v in _echo(args).items()}


# ---------------------------------------------------------------------------


def builtin_checks(quad_order=20, seed=0):
    """``[(name, passed, detail)]`` for the exact single-sphere identities."""
    rng = np.random.default_rng(seed)
    checks = []
    n = rng.standard_normal((1000, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    err = 0.0
    for _ in range(20):
        S = tc.sym_trace_free_project(rng.standard_normal((3, 3)))
        err = max(err, float(np.abs(ss.stress_from_fields(n, S) - 3.0 * n @ S.T).max()))
    checks.append(("boundary traction equals 3 S x", err < 1e-10, f"max error {err:.3e}"))
    quad = tc.sphere_quadrature(quad_order)
    S = tc.sym_trace_free_project(rng.standard_normal((3, 3)))
    ratio = ss.single_sphere_functional(S, quad) / np.sum(S * S)
    rel = abs(ratio / ss.EINSTEIN_FUNCTIONAL - 1.0)
    checks.append(("surface functional equals 20 pi / 3 |S|^2", rel < 1e-6, f"relative error {rel:.3e}"))
    coef = ss.einstein_coefficient(S, quad)
    checks.append(("Einstein coefficient equals 5/2", abs(coef - 2.5) < 1e-8, f"value {float(coef)!r}"))
    return checks


def cmd_validate(args):
    if not args.builtin:
        raise ConfigError("validate currently supports only --builtin")
    checks = builtin_checks(args.quad_order, args.seed)
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    csv_path, json_path = _paths(args)
    rows = [(name, "pass" if ok else "fail", detail) for name, ok, detail in checks]
    ev.write_long_csv(csv_path, rows, header=("check", "status", "detail"), echo=_echo_lines(args))
    ev.write_json(json_path, {"checks": [dict(zip(("check", "status", "detail"), r)) for r in rows]},
                  _echo(args))
    return 0 if all(ok for _, ok, _ in checks) else 1


def _g2_from_args(args):
    if args.g2 == "hardcore-uniform":
        return ev.hardcore_uniform_g2(args.r0)
    if args.g2 == "hardcore-exp":
        return ev.hardcore_exponential_g2(args.r0, args.amplitude, args.length)
    if args.g2 == "matern1":
        return ev.matern1_g2(args.lambda_, args.r0)
    if os.path.exists(args.g2):
        return read_g2_csv(args.g2, args.r0)
    raise ConfigError(f"unknown g2 model {args.g2!r}")


def read_g2_csv(path, r0=None):
    """Read a ``bin_center,g2,stderr,count`` CSV.

    Bin edges come from a ``# bin_edges = ...`` header line when present;
    otherwise uniform bins centred on the listed points are assumed.
    """
    rows, edges = [], None
    with open(path) as fh:
        for line in fh:
            if line.startswith("# bin_edges ="):
                edges = np.array(_floats(line.split("=", 1)[1]))
            if line.startswith("#") or line.startswith("bin_center") or not line.strip():
                continue
            rows.append([float(v) for v in line.split(",")])
    data = np.array(rows)
    if edges is None:
        c = data[:, 0]
        h = np.diff(c).mean() / 2.0 if len(c) > 1 else c[0]
        edges = np.concatenate([c - h, [c[-1] + h]])
    if len(edges) != len(data) + 1:
        raise ConfigError(f"{path}: {len(edges)} bin edges for {len(data)} rows")
    return pp.CorrelationEstimate(edges, data[:, 1], data[:, 2], data[:, 3].astype(int),
                                  0, float("nan"), r0)


def cmd_mu2(args):
    if not args.r0 > 2.0:
        raise ConfigError("r0 must exceed 2 (non-overlapping spheres)")
    g2 = _g2_from_args(args)
    kinds = ["mu2", "nu2"] if args.functional == "both" else [args.functional]
    results = {}
    for kind in kinds:
        results[kind] = ev.mu2_evaluate(g2, args.n, r0=args.r0, functional=kind, tol=args.tol,
                                        order=args.radial_order, angular_order=args.angular_order)
    rows = []
    for res in results.values():
        rows.extend(res.csv_rows())
    payload = {k: v.to_dict() for k, v in results.items()}
    if len(results) == 2:
        diff = results["mu2"].value - results["nu2"].value
        payload["mu2_minus_nu2"] = diff.tolist()
        rows.extend(("mu2_minus_nu2", i, j, float(diff[i, j]),
                     results["mu2"].error + results["nu2"].error)
                    for i in range(5) for j in range(5))
    S = args.strain
    for k, res in results.items():
        print(f"{k} S:S = {res.quadratic(S)!r}  (|S|^2 = {float(np.sum(S * S))!r}, "
              f"error {res.error:.2e}, converged {res.converged})")
    csv_path, json_path = _paths(args)
    ev.write_long_csv(csv_path, rows, echo=_echo_lines(args))
    # runtimes live in the JSON summary only, keeping the CSV byte-stable
    ev.write_json(json_path, payload, _echo(args))
    return 0 if all(r.converged for r in results.values()) or not args.strict else 2


def cmd_finite_n(args):
    S = args.strain
    t0 = time.perf_counter()
    results = ev.finite_n_study(args.phi, args.L, S, r0=args.r0, n_configs=args.configs,
                                seed=args.seed, method=args.method, quad_order=args.quad_order,
                                threads=args.threads)
    slope, slope_err = ev.einstein_slope(results, S)
    rows = []
    for r in results:
        for k, (v, ph, n) in enumerate(zip(r.values, r.phis, r.counts)):
            rows.append(("value", r.phi, k, float(v), float(ph), int(n)))
        rows.append(("mean", r.phi, -1, r.mean, r.phi_realized, int(r.counts.sum())))
        rows.append(("stderr", r.phi, -1, r.stderr, r.phi_realized, int(r.counts.sum())))
    rows.append(("einstein_slope", float("nan"), -1, slope, slope_err, 0))
    print(f"Einstein slope {slope:.6g} +- {slope_err:.2g} (expected 2.5)")
    flagged = sum(r.diverged + r.below_background for r in results)
    if flagged:
        print(f"warning: {flagged} configurations flagged (divergence or value below |S|^2)")
    csv_path, json_path = _paths(args)
    ev.write_long_csv(csv_path, rows, header=("quantity", "phi", "member", "value",
                                              "phi_realized", "spheres"),
                      echo=_echo_lines(args))
    ev.write_json(json_path, {
        "einstein_slope": slope, "einstein_slope_stderr": slope_err,
        "ensembles": [{"phi": r.phi, "phi_realized": r.phi_realized, "mean": r.mean,
                       "stderr": r.stderr, "diverged": r.diverged,
                       "below_background": r.below_background} for r in results],
        "runtime_s": time.perf_counter() - t0,
    }, _echo(args))
    return 2 if (flagged and args.strict) else 0


def cmd_pair_table(args):
    table = PairTable(args.r_min, args.r_max, args.n_grid)
    csv_path, json_path = _paths(args)
    cache = os.path.splitext(csv_path)[0] + ".table"
    table.save(cache)
    rows = [("M_l", float(r), i, j, float(table.values[k, i, j]))
            for k, r in enumerate(table.radii) for i in range(5) for j in range(5)]
    ev.write_long_csv(csv_path, rows, header=("quantity", "r", "i", "j", "value"),
                      echo=_echo_lines(args))
    ev.write_json(json_path, {"cache_file": os.path.basename(cache), "n": len(table.radii)},
                  _echo(args))
    print(f"wrote {cache}")
    return 0


def cmd_pointprocess(args):
    dom = pp.Domain.box(args.box)
    ens = pp.sample_ensemble(args.process, args.lambda_, dom, args.seed, args.trials,
                             r0=args.r0, threads=args.threads)
    counts = np.array([len(c) for c in ens], dtype=float)
    violations = 0
    if args.process == "matern1":
        violations = sum(not pp.check_h1(c, args.r0)[0] for c in ens)
        expected = pp.matern1_intensity(args.lambda_, args.r0)
    else:
        expected = args.lambda_
    est = pp.estimate_g2(ens, np.asarray(args.bins), threads=args.threads)
    rate = counts.mean() / dom.volume
    rate_err = counts.std(ddof=1) / np.sqrt(len(counts)) / dom.volume if len(counts) > 1 else float("nan")
    z = (rate - expected) / rate_err if rate_err > 0 else float("nan")
    print(f"intensity {rate:.6g} +- {rate_err:.2g}, expected {expected:.6g} ({z:+.2f} sigma)")
    if args.process == "matern1":
        print(f"hardcore violations: {violations} of {len(ens)} configurations")
    csv_path, json_path = _paths(args)
    echo = _echo_lines(args)
    echo.update({"intensity": repr(float(rate)), "intensity_stderr": repr(float(rate_err)),
                 "intensity_expected": repr(float(expected))})
    est.to_csv(csv_path, echo=echo)
    ev.write_json(json_path, {
        "intensity": rate, "intensity_stderr": rate_err, "intensity_expected": expected,
        "hardcore_violations": violations,
        "g2": [dict(zip(("bin_center", "g2", "stderr", "count"), r)) for r in est.rows()],
    }, _echo(args))
    return 2 if (violations and args.strict) else 0


def cmd_residual_scaling(args):
    t0 = time.perf_counter()
    rep = ev.residual_diagnostics(args.phi, args.strain, n_spheres=args.n_spheres,
                                  n_configs=args.configs, r0=args.r0, seed=args.seed,
                                  ball_order=args.ball_order, threads=args.threads)
    rows = []
    for i, ph in enumerate(rep.phis):
        rows.append(("u_err", float(ph), float(rep.u_err[i]), float(rep.u_err_stderr[i])))
        rows.append(("phi_sum", float(ph), float(rep.phi_sum[i]), float(rep.phi_sum_stderr[i])))
    rows.append(("u_err_slope", float("nan"), rep.u_err_slope, float("nan")))
    rows.append(("phi_sum_slope", float("nan"), rep.phi_sum_slope, float("nan")))
    print(f"u_err slope {rep.u_err_slope:.4g} (expected 3), "
          f"phi-sum slope {rep.phi_sum_slope:.4g} (expected 2)")
    csv_path, json_path = _paths(args)
    ev.write_long_csv(csv_path, rows, header=("quantity", "phi", "value", "error"),
                      echo=_echo_lines(args))
    ev.write_json(json_path, {
        "u_err_slope": rep.u_err_slope, "phi_sum_slope": rep.phi_sum_slope,
        "phis": rep.phis.tolist(), "mean_counts": rep.mean_counts.tolist(),
        "runtime_s": time.perf_counter() - t0,
    }, _echo(args))
    return 0


COMMANDS = {
    "validate": cmd_validate,
    "mu2": cmd_mu2,
    "finite-n": cmd_finite_n,
    "pair-table": cmd_pair_table,
    "pointprocess": cmd_pointprocess,
    "residual-scaling": cmd_residual_scaling,
}


def main(argv=None):
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
