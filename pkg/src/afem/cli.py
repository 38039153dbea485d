"""
Command-line entry point ``afem``.

Subcommands: ``run``, ``verify-constants``, ``axioms``, ``mesh-demo``.
Exit status: 0 success, 2 input error, 3 numerical error, 4 failed checks.
"""
import argparse
import logging
import sys

from .errors import InputError, NumericalError
from .mesh import GEOMETRIES

log = logging.getLogger("afem")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_PROPERTY = 0, 2, 3, 4


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_run(args):
    from .experiments import load_manifest, parse_manifest, run_sweep

    overrides = {
        "theta": args.theta, "lambda": args.lambda_, "geometry": args.geometry,
        "problem": args.problem, "max_dofs": args.max_dofs, "mode": args.mode,
        "output_dir": args.out, "workers": args.workers,
    }
    if args.timing:
        overrides["timing"] = True
    if args.manifest:
        manifest = load_manifest(args.manifest, overrides)
    else:
        manifest = parse_manifest("", overrides)
    results = run_sweep(manifest)
    status = EXIT_OK
    for theta, lam, rec in results:
        last = rec.entries[-1]
        log.info("theta=%g lambda=%g: %s after %d steps, %d dofs, eta=%.3e",
                 theta, lam, rec.status, last.total_step, last.num_free_dofs, last.eta)
        print(f"theta={theta:g} lambda={lam:g} status={rec.status} steps={last.total_step} "
              f"dofs={last.num_free_dofs} eta={last.eta:.6e}")
        if rec.status in ("numerical_error", "iteration_cap"):
            print(f"  {rec.message}", file=sys.stderr)
            status = EXIT_NUMERICAL
    print(f"outputs written to {manifest.output_dir}")
    return status


def cmd_verify_constants(args):
    from .experiments import verify_constants

    if args.problem == "poisson_linear":
        rep = verify_constants(lambda t: 1.0 + 0.0 * t)
        print(f"inf g = {rep['inf']:.10f}\nsup g = {rep['sup']:.10f}")
        return EXIT_OK
    rep = verify_constants(t_max=args.t_max)
    ok = rep["alpha_error"] <= args.tol and rep["L_error"] <= args.tol
    print(f"inf g = {rep['inf']:.10f} at t = {rep['argmin']:.6f}  "
          f"(reference {rep['alpha_ref']}, diff {rep['alpha_error']:.2e})")
    print(f"sup g = {rep['sup']:.10f} at t = {rep['argmax']:.6f}  "
          f"(reference {rep['L_ref']}, diff {rep['L_error']:.2e})")
    print(f"L / alpha = {rep['ratio']:.6f}  golden-ratio condition "
          f"{'satisfied' if rep['golden_ratio_ok'] else 'violated'}")
    return EXIT_OK if ok and rep["golden_ratio_ok"] else EXIT_PROPERTY


def cmd_axioms(args):
    from .experiments import run_axioms

    results = run_axioms(args.geometry, seed=args.seed, n_trials=args.trials)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_PROPERTY


def cmd_mesh_demo(args):
    from .experiments import mesh_demo

    paths = mesh_demo(args.geometry, args.out, levels=args.levels, theta=args.theta,
                      uniform=args.uniform)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="afem", description="Adaptive P1 FEM with contractive solvers.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="parameter sweep of the adaptive loop")
    r.add_argument("manifest", nargs="?", help="key = value manifest file")
    r.add_argument("--theta", type=_floats)
    r.add_argument("--lambda", dest="lambda_", type=_floats)
    r.add_argument("--geometry", choices=GEOMETRIES)
    r.add_argument("--problem", choices=("poisson_linear", "scalar_nonlinear"))
    r.add_argument("--max-dofs", type=int)
    r.add_argument("--mode", choices=("norm", "energy"))
    r.add_argument("--out")
    r.add_argument("--workers", type=int)
    r.add_argument("--timing", action="store_true", help="record wall-clock times")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("verify-constants", help="monotonicity and Lipschitz constants")
    c.add_argument("--problem", default="scalar_nonlinear",
                   choices=("poisson_linear", "scalar_nonlinear"))
    c.add_argument("--t-max", type=float, default=1e6)
    c.add_argument("--tol", type=float, default=1e-6)
    c.set_defaults(func=cmd_verify_constants)

    a = sub.add_parser("axioms", help="measure the structural properties")
    a.add_argument("--geometry", default="l_shape", choices=GEOMETRIES)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--trials", type=int, default=200)
    a.set_defaults(func=cmd_axioms)

    m = sub.add_parser("mesh-demo", help="export refined meshes in the text format")
    m.add_argument("--geometry", default="l_shape", choices=GEOMETRIES)
    m.add_argument("--levels", type=int, default=5)
    m.add_argument("--theta", type=float, default=0.5)
    m.add_argument("--uniform", action="store_true")
    m.add_argument("--out", default="meshes")
    m.set_defaults(func=cmd_mesh_demo)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
