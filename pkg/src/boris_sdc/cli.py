"""Command-line front end: one subcommand per experiment plus a selftest.

Exit status: 0 success, 1 parameter error, 2 numerical divergence,
3 I/O error.  Each run prints a one-line summary with its key metric and
writes CSV tables into the output directory.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .errors import DivergenceError, ParameterError
from .harness import (
    ExperimentConfig,
    cheapest_reaching,
    experiment_cloud,
    experiment_convergence,
    experiment_energy,
    experiment_maps,
    experiment_residual_control,
    experiment_work_precision,
)

_EXPERIMENTS = (
    "converge",
    "residual",
    "work-precision",
    "energy",
    "cloud",
    "map-stability",
    "map-convergence",
    "map-energy",
    "selftest",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # parameter errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _int_tuple(text: str) -> tuple:
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="boris-sdc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in _EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--M", type=int, dest="m_nodes", help="node count")
        p.add_argument("--iterations", type=int, help="fixed sweep count")
        p.add_argument("--tol", type=float, help="residual tolerance per step")
        p.add_argument("--steps", type=_int_tuple,
                       help="step count, or comma-separated ladder")
        p.add_argument("--dt", type=float, help="time step size")
        p.add_argument("--seed", type=int, help="RNG seed")
        p.add_argument("--nodes", choices=["lobatto", "legendre"])
        p.add_argument("--precision", choices=["std", "compensated"])
        p.add_argument("--method",
                       choices=["boris", "verlet", "boris-sdc", "picard",
                                "collocation"])
        p.add_argument("--grid", type=int, help="map grid points per axis")
        p.add_argument("--paper-scale", action="store_true", default=None,
                       help="16.8M-step preset for the energy run")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig()
    over = dict(
        kind=args.command.replace("-", "_"),
        out_dir=args.out,
        m_nodes=args.m_nodes,
        seed=args.seed,
        nodes=args.nodes,
        precision=args.precision,
        method=args.method,
        dt=args.dt,
        paper_scale=args.paper_scale,
    )
    if args.iterations is not None:
        over["iterations"] = args.iterations
        over["tol"] = None
    if args.tol is not None:
        over["tol"] = args.tol
        over["iterations"] = None
    if args.steps is not None:
        if len(args.steps) == 1:
            over["n_steps"] = args.steps[0]
            over["steps_list"] = args.steps
        else:
            over["steps_list"] = args.steps
    if args.grid is not None:
        cfg = cfg.with_overrides(
            grid_a=(cfg.grid_a[0], cfg.grid_a[1], args.grid),
            grid_b=(cfg.grid_b[0], cfg.grid_b[1], args.grid),
        )
    return cfg.with_overrides(**over)


def _run_selftest() -> int:
    """Quick invariant battery over all modules; prints one line per check."""
    from .boris import boris_velocity_update, rotate
    from .fields import ParticleEnsemble, PenningForce, PenningParams, \
        analytic_solution, total_energy
    from .integrators import StepConfig, classical_boris_step, \
        collocation_end_update, residual_norm, run_trajectory, sdc_sweep, \
        sweep_initialize
    from .linear_analysis import assemble_operators
    from .quadrature import NodeFamily, build_rule

    checks = []

    def check(name, ok):
        checks.append(bool(ok))
        print(f"{'ok' if ok else 'FAIL'} - {name}")

    lob = NodeFamily.GAUSS_LOBATTO
    r2 = build_rule(lob, 2, 0.0, 0.5)
    check("two-node matrices closed form",
          np.allclose(r2.S[2], [0, 0.25, 0.25]) and
          np.allclose(r2.Sx[2], [0, 0.125, 0]) and
          np.allclose(r2.SQ[2], [0, 0.0625, 0.0625]))

    r5 = build_rule(lob, 5, 0.0, 1.0)
    exact = all(
        abs(r5.q @ r5.taus**p - 1.0 / (p + 1)) <= 1e-12 for p in range(8)
    )
    check("quadrature exactness (5 nodes)", exact)

    rng = np.random.default_rng(1)
    v = rng.normal(size=(1000, 3))
    t = rng.normal(size=(1000, 3))
    ratio = np.linalg.norm(rotate(v, t), axis=1) / np.linalg.norm(v, axis=1)
    check("rotation preserves speed", np.max(np.abs(ratio - 1)) < 1e-14)

    ok = True
    for _ in range(100):
        v0 = rng.normal(size=3)
        e = rng.normal(size=3)
        b0, b1 = rng.normal(size=3), rng.normal(size=3)
        c = rng.normal(size=3)
        dt, al = 0.3, 1.2
        bmat = lambda bb: np.array(
            [[0, bb[2], -bb[1]], [-bb[2], 0, bb[0]], [bb[1], -bb[0], 0]]
        )
        ref = np.linalg.solve(
            np.eye(3) - 0.5 * dt * al * bmat(b1),
            v0 + dt * (al * e + c + 0.5 * al * bmat(b0) @ v0),
        )
        got = boris_velocity_update(v0[None], dt, al, e[None], b0[None],
                                    b1[None], c[None])[0]
        ok &= np.allclose(got, ref, rtol=1e-13, atol=1e-13)
    check("velocity update matches implicit solve", ok)

    params = PenningParams()
    x0 = np.array([[10.0, 0, 0]])
    v0 = np.array([[100.0, 0, 100.0]])
    ens = ParticleEnsemble.single(x0[0], v0[0])
    check("reference energy value",
          abs(total_energy(params, ens) - 8799.5) < 1e-9)

    dt = 0.015625
    rule = build_rule(lob, 2, 0.0, dt)
    model = PenningForce(params, ens)
    ws = sweep_initialize((x0, v0), rule, model)
    sdc_sweep(ws, rule, model)
    (xc, vc), _ = classical_boris_step((x0, v0), dt, PenningForce(params, ens))
    check("one sweep reduces to the classical step",
          np.max(np.abs(ws.X[2] - xc)) <= 1e-14 * np.max(np.abs(xc)))

    rule3 = build_rule(lob, 3, 0.0, dt)
    ops = assemble_operators(params, rule3, k=2, dim=3)
    model = PenningForce(params, ens)
    ws = sweep_initialize((x0, v0), rule3, model)
    for _ in range(2):
        sdc_sweep(ws, rule3, model)
    u_nodes = np.concatenate(
        [np.concatenate([x[0], vv[0]]) for x, vv in zip(ws.X, ws.V)]
    )
    expected = ops.P_sdc @ ops.T_P @ np.concatenate([x0[0], v0[0]])
    check("sweep equals dense operator action",
          np.max(np.abs(u_nodes - expected)) <= 1e-12 * np.max(np.abs(expected)))

    model = PenningForce(params, ens)
    ws = sweep_initialize((x0, v0), rule3, model)
    for _ in range(40):
        sdc_sweep(ws, rule3, model)
    x1, v1 = collocation_end_update(ws, rule3)
    check("end update equals last node at convergence",
          np.max(np.abs(x1 - ws.X[3])) <= 1e-13 * np.max(np.abs(x1)) and
          residual_norm(ws, rule3) < 1e-10)

    xa, va = analytic_solution(params, x0[0], v0[0], 0.7)
    h = 1e-6
    _, vp = analytic_solution(params, x0[0], v0[0], 0.7 + h)
    _, vm = analytic_solution(params, x0[0], v0[0], 0.7 - h)
    acc = PenningForce(params, ens).f(xa[None], va[None])[0]
    check("analytic trajectory satisfies the equations of motion",
          np.allclose((vp - vm) / (2 * h), acc, rtol=1e-5, atol=1e-3))

    cfgs = StepConfig(rule=rule3, iterations=2)
    out = {}
    for engine in ("python", "numba"):
        m = PenningForce(params, ens)
        out[engine] = run_trajectory((x0, v0), 25, dt, cfgs, m, stride=25,
                                     engine=engine)
    check("compiled kernels match the python engine",
          np.allclose(out["python"].x_final, out["numba"].x_final, rtol=1e-12))

    passed = sum(checks)
    print(f"selftest: {passed}/{len(checks)} checks passed")
    return 0 if passed == len(checks) else 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "selftest":
            return _run_selftest()
        cfg = _config_from_args(args)
        if args.command == "converge":
            rec = experiment_convergence(cfg)
            print(f"converge: fitted order {rec.summary['slope']:.3f} "
                  f"({rec.path})")
        elif args.command == "residual":
            rec = experiment_residual_control(cfg)
            sat = ", ".join(
                f"tol {t:g} -> {v:.2e}" for t, v in rec.summary["saturation"].items()
            )
            print(f"residual: saturation {sat} ({rec.path})")
        elif args.command == "work-precision":
            rec = experiment_work_precision(cfg)
            curves = rec.summary["curves"]
            best = min(
                curves, key=lambda kk: cheapest_reaching(curves[kk], 1e-10)
            )
            print(f"work-precision: cheapest at 1e-10 error: {best} "
                  f"({rec.path})")
        elif args.command == "energy":
            rec = experiment_energy(cfg)
            print(
                "energy: drift slope {slope_per_step:.3e}/step, "
                "max rel error {max_rel_error:.3e}, drift={drift}".format(
                    **rec.summary
                ) + f" ({rec.path})"
            )
        elif args.command == "cloud":
            com, en = experiment_cloud(cfg)
            print(
                f"cloud: com slopes {com.summary['slopes']}, "
                f"drift onsets {en.summary['onsets']} ({com.path})"
            )
        elif args.command in ("map-stability", "map-convergence", "map-energy"):
            which = args.command.split("-", 1)[1]
            rec = experiment_maps(cfg, which)
            print(
                f"{args.command}: stable/ok points {rec.summary['stable_count']}, "
                f"unstable outside mask {rec.summary['unstable_outside_mask']} "
                f"({rec.path})"
            )
        return 0
    except ParameterError as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"numerical divergence at step {exc.step}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
