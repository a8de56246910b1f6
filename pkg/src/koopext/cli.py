"""Command-line experiment runner and tool surface.

One experiment per invocation: a subcommand per benchmark study plus generic
tool subcommands (simulate, fit, eig, extend, bridge, phase). Every default
is listed by --help. Exit codes: 0 success, 1 numeric failure (acceptance
thresholds unmet), 2 usage error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .experiments import EXPERIMENTS, ExperimentConfig, default_params, run

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; overrides other flags")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=0, help="random seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap; results are thread-count independent")
    parser.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="preferred tabular artifact format")


def _add_param_overrides(parser: argparse.ArgumentParser, experiment: str) -> None:
    parser.add_argument(
        "--param",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help=f"override a default parameter (defaults: {json.dumps(default_params(experiment))})",
    )


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="koopext",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run an experiment from a config file")
    runp.add_argument("--config", required=True)

    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        _add_common(p)
        _add_param_overrides(p, name)

    sim = sub.add_parser("simulate", help="sample snapshot pairs from a benchmark system")
    _add_common(sim)
    sim.add_argument("--system", required=True)
    sim.add_argument("--n-pairs", type=int, default=400)
    sim.add_argument("--dt", type=float, default=0.2)
    sim.add_argument("--box", type=float, default=2.0, help="half-width of the sampling box")
    sim.add_argument("--samples-per-traj", type=int, default=2)

    fit = sub.add_parser("fit", help="fit a Koopman matrix from stored snapshots")
    _add_common(fit)
    fit.add_argument("--snapshots", required=True, help="snapshot file stem")
    fit.add_argument("--dict", dest="dict_kind", choices=("identity", "rbf"), default="identity")
    fit.add_argument("--n-centers", type=int, default=40)
    fit.add_argument("--bandwidth", type=float, default=0.3)
    fit.add_argument("--ridge", type=float, default=0.0)

    eig = sub.add_parser("eig", help="dominant eigenpairs of a stored model by deflation")
    _add_common(eig)
    eig.add_argument("--model", required=True, help="model file stem")
    eig.add_argument("--n", type=int, default=5)

    ext = sub.add_parser("extend", help="certified eigenfunction powers for a stored model")
    _add_common(ext)
    ext.add_argument("--model", required=True)
    ext.add_argument("--system", required=True)
    ext.add_argument("--n", type=int, default=5)
    ext.add_argument("--epsilon", type=float, default=0.01)
    ext.add_argument("--grid", type=float, nargs=3, default=(-1.0, 1.0, 0.01),
                     metavar=("LO", "HI", "H"))
    ext.add_argument("--p-max", type=int, default=64)

    brg = sub.add_parser("bridge", help="log-space bridge between two local families")
    _add_common(brg)
    brg.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                     help=f"override bridge1d defaults: {json.dumps(default_params('bridge1d'))}")

    ph = sub.add_parser("phase", help="isochron/isostable field for a benchmark system")
    _add_common(ph)
    ph.add_argument("--system", choices=("polarLC", "vanderpol"), default="polarLC")
    ph.add_argument("--method", choices=("analytic", "laplace_average"), default="analytic")
    ph.add_argument("--grid", type=float, nargs=3, default=(-1.8, 1.8, 0.1),
                    metavar=("LO", "HI", "H"))
    return parser


def _config_from_args(args, experiment: str) -> ExperimentConfig:
    if args.config:
        return ExperimentConfig.from_json(args.config)
    params = default_params(experiment)
    for item in args.param:
        if "=" not in item:
            raise ValueError(f"--param expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        params[key] = _parse_value(value)
    return ExperimentConfig(
        experiment=experiment,
        seed=args.seed,
        out_dir=args.out,
        format=args.format,
        threads=args.threads,
        params=params,
    )


def _tool_simulate(args) -> int:
    from .dynamics import make_system, sample_snapshots, write_snapshots

    sys_ = make_system(args.system)
    b = args.box
    d = sys_.dim
    snaps = sample_snapshots(
        sys_, args.n_pairs, args.dt, ((-b,) * d, (b,) * d), args.seed,
        samples_per_traj=args.samples_per_traj,
    )
    os.makedirs(args.out, exist_ok=True)
    write_snapshots(os.path.join(args.out, "snapshots"), snaps)
    print(f"wrote {len(snaps)} pairs to {args.out}/snapshots.csv")
    return EXIT_OK


def _tool_fit(args) -> int:
    from .dictionary import identity_dictionary, rbf_dictionary
    from .dynamics import read_snapshots
    from .regression import fit_edmd, save_model

    snaps = read_snapshots(args.snapshots)
    if args.dict_kind == "identity":
        dic = identity_dictionary(snaps.dim)
    else:
        dic = rbf_dictionary(snaps, args.n_centers, args.bandwidth, args.seed)
    model = fit_edmd(snaps, dic, ridge=args.ridge)
    os.makedirs(args.out, exist_ok=True)
    save_model(os.path.join(args.out, "model"), model)
    print(f"fit residual {model.fit_residual:.6e}; model written to {args.out}/model.json")
    return EXIT_OK


def _tool_eig(args) -> int:
    from .eigensolve import deflate_spectrum, write_eigenvectors_csv, write_spectrum_json
    from .regression import load_model

    model = load_model(args.model)
    pairs = deflate_spectrum(model.K, args.n, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "spectrum.json")
    write_spectrum_json(path, pairs)
    write_eigenvectors_csv(os.path.join(args.out, "eigenvectors"), pairs)
    for i, p in enumerate(pairs):
        print(f"{i}: {p.lam.real:+.12f} {p.lam.imag:+.12f}j residual {p.residual:.2e}")
    return EXIT_OK


def _tool_extend(args) -> int:
    from .core import EvalGrid
    from .dictionary import feature_sup_M, spectral_norm_bound_L
    from .dynamics import FlowMap, integration_error_sup, make_system
    from .extend import iterative_koopman_eigensolver, write_extension_report
    from .regression import load_model

    model = load_model(args.model)
    sys_ = make_system(args.system)
    lo, hi, h = args.grid
    grid = EvalGrid((lo,) * sys_.dim, (hi,) * sys_.dim, h)
    rk = FlowMap(sys_.field, model.dt, method="rk45", rel_tol=1e-11, abs_tol=1e-13)
    if sys_.field.exact_flow is not None:
        eps_G = integration_error_sup(rk, FlowMap(sys_.field, model.dt, method="exact"), grid)
    else:
        eps_G = 10 * rk.abs_tol
    L = spectral_norm_bound_L(model.dict, grid)
    M = feature_sup_M(model.dict, grid)
    results = iterative_koopman_eigensolver(
        model, grid, n=args.n, epsilon=args.epsilon, eps_G=eps_G, L=L, M=M,
        flow=rk, p_max=args.p_max, seed=args.seed,
    )
    os.makedirs(args.out, exist_ok=True)
    write_extension_report(os.path.join(args.out, "extension_report.json"), results)
    for i, pe in enumerate(results):
        print(f"{i}: lambda={pe.eigenvalue:.8f} certified powers up to p={pe.result.max_power}")
    return EXIT_OK


def _tool_phase(args) -> int:
    from .core import EvalGrid
    from .dynamics import make_system
    from .phase import LaplaceConfig, isofield, write_phase_csv

    sys_ = make_system(args.system)
    lo, hi, h = args.grid
    grid = EvalGrid((lo, lo), (hi, hi), h)
    field = isofield(sys_, args.method, grid,
                     LaplaceConfig() if args.method == "laplace_average" else None)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "phase.csv")
    write_phase_csv(path, field)
    print(f"wrote {path} (eigenvalue {field.eigenvalue:.6f})")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage errors already
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        if args.command == "run":
            summary = run(ExperimentConfig.from_json(args.config))
        elif args.command in EXPERIMENTS:
            summary = run(_config_from_args(args, args.command))
        elif args.command == "simulate":
            return _tool_simulate(args)
        elif args.command == "fit":
            return _tool_fit(args)
        elif args.command == "eig":
            return _tool_eig(args)
        elif args.command == "extend":
            return _tool_extend(args)
        elif args.command == "bridge":
            summary = run(_config_from_args(args, "bridge1d"))
        elif args.command == "phase":
            return _tool_phase(args)
        else:  # pragma: no cover
            return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    for crit in summary["criteria"]:
        status = "PASS" if crit["pass"] else "FAIL"
        print(f"{status} {crit['name']}: value={crit['value']:.6g} threshold={crit['threshold']:.6g}")
    return EXIT_OK if summary["all_pass"] else EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
