"""``stiffkit`` command-line entry point.

Exit status: 0 on success, 1 on invalid input or usage, 2 on numeric
failure. All outputs of a command are staged as temporary files and renamed
into place only after every one of them has been produced.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

import numpy as np

from . import io
from .analysis import correlate_records, nsi_attention_correlation, select_proxy_gt, tns_accuracy_experiment
from .datasets import synth_dataset
from .errors import NumericError, StiffkitError, ValidationError
from .metrics import (
    NSI_MODES,
    lemma1_cap,
    nsi_profile,
    pool_stage_means,
    tns,
    tns_refinement,
    trajectory_bounds,
)
from .network import NetworkConfig, TrainHyper, extract_trajectories, train
from .ode import IntegratorMethod, get_system, integrate_adaptive, integrate_fixed
from .theory import (
    random_trajectory_set,
    stiff_solver_comparison,
    theorem2_sweep,
    verify_lemma1_and_tns,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# -- argument helpers ------------------------------------------------------------

def _floats(text, n=None, name="value"):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"{name}: expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise ValidationError(f"{name}: expected {n} numbers, got {len(vals)}")
    return vals


def _ints(text, name):
    vals = _floats(text, name=name)
    if any(v != int(v) for v in vals):
        raise ValidationError(f"{name}: expected integers")
    return [int(v) for v in vals]


def _grid(text):
    m1, m2, n = _floats(text, 3, "--grid")
    if n != int(n):
        raise ValidationError("--grid: cell count must be an integer")
    return (m1, m2, int(n))


def _need_file(path, flag):
    if path is None:
        raise ValidationError(f"{flag} is required")
    if not os.path.exists(path):
        raise ValidationError(f"{flag}: {path} does not exist")
    return path


def _need_out(path, flag="--out"):
    if path is None:
        raise ValidationError(f"{flag} is required")
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise ValidationError(f"{flag}: directory {directory} does not exist")
    return path


def _commit(outputs):
    """Write ``{path: text}`` to temporaries, then rename them all."""
    staged = []
    try:
        for path, text in outputs.items():
            directory = os.path.dirname(os.path.abspath(path))
            fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            staged.append((tmp, path))
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("STIFFKIT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"STIFFKIT_THREADS must be an integer, got {env!r}") from None
    return 1


def _dataset_from_spec(spec, seed):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind is None:
        raise ValidationError("dataset section needs a 'kind'")
    seed = int(spec.pop("seed", seed))
    allowed = {"n", "noise", "classes", "turns"}
    unknown = set(spec) - allowed
    if unknown:
        raise ValidationError(f"unknown dataset fields {sorted(unknown)}")
    return synth_dataset(kind, seed=seed, **spec)


def _load_dataset(args, cfg):
    if getattr(args, "dataset", None):
        return io.load_dataset(args.dataset)
    if "dataset" not in cfg:
        raise ValidationError("provide --dataset or a 'dataset' section in the config")
    return _dataset_from_spec(cfg["dataset"], args.seed)


def _hyper(d):
    try:
        return TrainHyper(**d)
    except TypeError as exc:
        raise ValidationError(f"hyper: {exc}") from None


def _network_config(d, dataset, seed):
    d = dict(d)
    d.setdefault("input_dim", dataset.input_dim)
    d.setdefault("num_classes", dataset.num_classes)
    d["seed"] = seed
    try:
        return NetworkConfig.from_dict(d)
    except KeyError as exc:
        raise ValidationError(f"network config missing field {exc}") from None


# -- subcommands ------------------------------------------------------------------

def cmd_integrate(args):
    out = _need_out(args.out)
    system, default_u0 = get_system(args.system)
    t0, t1 = _floats(args.span, 2, "--span")
    u0 = np.array(_floats(args.u0, name="--u0")) if args.u0 else default_u0
    if args.method == "rkf45":
        if args.tol is None:
            raise ValidationError("--tol is required for rkf45")
        traj, stats = integrate_adaptive(system, u0, (t0, t1), args.tol)
    else:
        if (args.dt is None) == (args.steps is None):
            raise ValidationError(f"{args.method} needs exactly one of --dt or --steps")
        n = args.steps if args.steps is not None else int(round((t1 - t0) / args.dt))
        if n < 1:
            raise ValidationError("need at least one step")
        dt = (t1 - t0) / n if args.steps is not None else args.dt
        traj = integrate_fixed(system, u0, IntegratorMethod(args.method, dt=dt), n, t0=t0)
    _commit({out: io.dumps(io.trajectory_to_dict(traj))})


def _profiles(trajs, mode, exclude, pooled):
    profs = [nsi_profile(t, mode, exclude_first=exclude) for t in trajs]
    return pool_stage_means(profs) if pooled else profs


def cmd_stiffness(args):
    out = _need_out(args.out)
    trajs = io.load_trajectories(_need_file(args.traj, "--traj"))
    outputs = {out: io.profile_csv(_profiles(trajs, args.mode, not args.no_exclude, False))}
    if args.bounds:
        b = trajectory_bounds(trajs, args.mode, not args.no_exclude)
        outputs[_need_out(args.bounds, "--bounds")] = io.dumps(
            {"k1": b.k1, "k2": b.k2, "a": b.a, "b": b.b, "cap": lemma1_cap(b)}
        )
    _commit(outputs)


def cmd_tns(args):
    out = _need_out(args.out)
    if args.model:
        model = io.load_model(_need_file(args.model, "--model"))
        ds = io.load_dataset(_need_file(args.dataset, "--dataset"))
        trajs = extract_trajectories(model, ds.X_test, args.mode)
    else:
        trajs = io.load_trajectories(_need_file(args.trajs, "--trajs"))
    grid = _grid(args.grid)
    exclude = not args.no_exclude
    profs = _profiles(trajs, args.mode, exclude, args.pooled)
    cap = trajectory_bounds(trajs, args.mode, exclude) if args.cap else None
    est = tns(profs, grid, cap=cap)
    refinements = ()
    if args.refine:
        levels = _ints(args.refine, "--refine")
        refinements = tns_refinement(profs, grid[:2], levels, cap=cap)
    _commit({out: io.dumps(est.to_dict(refinements))})


def cmd_train(args):
    cfg = io.read_json(_need_file(args.config, "--config"))
    out = _need_out(args.out)
    metrics_out = _need_out(args.metrics, "--metrics") if args.metrics else None
    ds = _load_dataset(args, cfg)
    config = _network_config(cfg.get("network", {}), ds, args.seed)
    hyper = _hyper(cfg.get("hyper", {}))
    model, metrics = train(config, ds, hyper)
    outputs = {out: io.dumps(io.model_to_dict(model))}
    if metrics_out:
        outputs[metrics_out] = io.dumps({**metrics, "seed": args.seed, "hyper": hyper.to_dict()})
    _commit(outputs)


def cmd_verify(args):
    out = _need_out(args.out)
    if args.check == "theorem2":
        lambdas = _floats(args.lambdas, name="--lambdas")
        reports = theorem2_sweep(tuple(lambdas), gap=args.gap)
        payload = {"gap": args.gap, "reports": [r.to_dict() for r in reports]}
    elif args.check == "lemma1_tns":
        levels = tuple(_ints(args.levels, "--levels"))
        if args.trajs:
            sets = [io.load_trajectories(_need_file(args.trajs, "--trajs"))]
        else:
            rng = np.random.default_rng(args.seed)
            sets = [random_trajectory_set(rng, n_inputs=args.inputs) for _ in range(args.sets)]
        reports = []
        for trajs in sets:
            profs = [nsi_profile(t, args.mode) for t in trajs]
            reports.append(verify_lemma1_and_tns(profs, trajectory_bounds(trajs, args.mode), levels).to_dict())
        payload = {"mode": args.mode, "reports": reports}
    else:
        system, default_u0 = get_system(args.system)
        u0 = np.array(_floats(args.u0, name="--u0")) if args.u0 else default_u0
        probes = tuple(_floats(args.probe_dt, name="--probe-dt")) if args.probe_dt else ()
        rep = stiff_solver_comparison(system, u0, _floats(args.span, 2, "--span"), args.tol, probes)
        payload = rep.to_dict()
    _commit({out: io.dumps(payload)})


def cmd_analyze(args):
    if args.action == "correlate":
        out = _need_out(args.out)
        recs = io.load_records(_need_file(args.records, "--records"))
        _commit({out: io.dumps(correlate_records(recs).to_dict())})
    elif args.action == "ensemble":
        cfg = io.read_json(_need_file(args.config, "--config"))
        out = _need_out(args.out)
        rec_out = _need_out(args.records, "--records")
        proxy_out = _need_out(args.proxy_gt, "--proxy-gt") if args.proxy_gt else None
        ds = _load_dataset(args, cfg)
        kinds = cfg.get("kinds", ["none", "se_style", "stepnet"])
        seeds = cfg.get("seeds", [0, 1, 2, 3])
        configs = [
            _network_config({**cfg.get("network", {}), "adaptor": k}, ds, s) for k in kinds for s in seeds
        ]
        grid = tuple(cfg.get("tns_grid", (10.0, 10.0, 64)))
        records, report, trajs = tns_accuracy_experiment(
            configs,
            ds,
            _hyper(cfg.get("hyper", {})),
            (float(grid[0]), float(grid[1]), int(grid[2])),
            cfg.get("nsi_mode", "recorded_step"),
            threads=_threads(args),
            return_trajectories=True,
        )
        outputs = {rec_out: io.records_csv(records), out: io.dumps(report.to_dict())}
        if proxy_out:
            outputs[proxy_out] = io.dumps([io.trajectory_to_dict(t) for t in select_proxy_gt(records, trajs)])
        _commit(outputs)
    else:
        out = _need_out(args.out)
        model = io.load_model(_need_file(args.model, "--model"))
        ds = io.load_dataset(_need_file(args.dataset, "--dataset"))
        _commit({out: io.dumps(nsi_attention_correlation(model, ds.X_test).to_dict())})


# -- parser -----------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="seed for every stochastic step (default 0)")
    common.add_argument(
        "--threads", type=int, default=argparse.SUPPRESS, help="worker cap; falls back to STIFFKIT_THREADS, then 1"
    )

    p = _Parser(prog="stiffkit", description="Stiffness metrics for ODE solvers and residual networks.", parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("integrate", parents=[common], help="integrate a catalogued ODE system")
    s.add_argument("--system", required=True, help="decay, stiff_sine or linear_sym:<file.json>")
    s.add_argument("--method", choices=("rkf45", "forward_euler", "rk4"), default="rkf45")
    s.add_argument("--tol", type=float, help="tolerance for rkf45")
    s.add_argument("--dt", type=float, help="fixed step size")
    s.add_argument("--steps", type=int, help="number of fixed steps (alternative to --dt)")
    s.add_argument("--span", default="0,1", help="t0,t1 (default 0,1)")
    s.add_argument("--u0", help="comma-separated initial state (default: catalogue value)")
    s.add_argument("--out", required=True, help="trajectory JSON")
    s.set_defaults(func=cmd_integrate)

    s = sub.add_parser("stiffness", parents=[common], help="per-stage NSI profile as CSV")
    s.add_argument("--traj", required=True, help="trajectory file, list file or directory")
    s.add_argument("--mode", choices=NSI_MODES, default="unit_step")
    s.add_argument("--no-exclude", action="store_true", help="keep the first transition of each stage")
    s.add_argument("--bounds", help="also write norm/step bounds and the cap as JSON")
    s.add_argument("--out", required=True, help="profile CSV")
    s.set_defaults(func=cmd_stiffness)

    s = sub.add_parser("tns", parents=[common], help="total neural stiffness of a trajectory set")
    s.add_argument("--trajs", help="trajectory file, list file or directory")
    s.add_argument("--model", help="model JSON (with --dataset; uses the test split)")
    s.add_argument("--dataset", help="dataset JSON")
    s.add_argument("--grid", default="10,10,64", help="m1_max,m2_max,n (default 10,10,64)")
    s.add_argument("--mode", choices=NSI_MODES, default="recorded_step")
    s.add_argument("--cap", action="store_true", help="integrate over the cap box from empirical bounds")
    s.add_argument("--refine", help="comma-separated grid sizes to report, e.g. 16,32,64,128")
    s.add_argument("--pooled", action="store_true", help="pool stage means over inputs")
    s.add_argument("--no-exclude", action="store_true", help="keep the first transition of each stage")
    s.add_argument("--out", required=True, help="TNS report JSON")
    s.set_defaults(func=cmd_tns)

    s = sub.add_parser("train", parents=[common], help="train one network")
    s.add_argument("--config", required=True, help='JSON with "network", "hyper" and "dataset" sections')
    s.add_argument("--dataset", help="dataset JSON overriding the config's dataset section")
    s.add_argument("--out", required=True, help="model JSON")
    s.add_argument("--metrics", help="metrics JSON")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("verify", parents=[common], help="numerical checks of the theory")
    s.add_argument("check", choices=("theorem2", "lemma1_tns", "stiff_compare"))
    s.add_argument("--out", required=True, help="report JSON")
    s.add_argument("--lambdas", default="10,100,1000,10000", help="theorem2: fast rates")
    s.add_argument("--gap", type=float, default=1e-6, help="theorem2: difference quotient gap")
    s.add_argument("--trajs", help="lemma1_tns: trajectory set (default: random sets)")
    s.add_argument("--sets", type=int, default=10, help="lemma1_tns: number of random sets")
    s.add_argument("--inputs", type=int, default=50, help="lemma1_tns: trajectories per random set")
    s.add_argument("--levels", default="16,32,64,128", help="lemma1_tns: grid sizes")
    s.add_argument("--mode", choices=NSI_MODES, default="recorded_step", help="lemma1_tns: NSI mode")
    s.add_argument("--system", default="stiff_sine", help="stiff_compare: system name")
    s.add_argument("--u0", help="stiff_compare: initial state")
    s.add_argument("--span", default="0,1", help="stiff_compare: t0,t1")
    s.add_argument("--tol", type=float, default=1e-8, help="stiff_compare: adaptive tolerance")
    s.add_argument("--probe-dt", default="0.0021", help="stiff_compare: extra Euler step sizes to probe")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("analyze", parents=[common], help="correlation experiments")
    s.add_argument("action", choices=("ensemble", "correlate", "attention"))
    s.add_argument("--config", help="ensemble: JSON with dataset, network, hyper, kinds, seeds")
    s.add_argument("--dataset", help="dataset JSON (ensemble override; required for attention)")
    s.add_argument("--records", help="records CSV (written by ensemble, read by correlate)")
    s.add_argument("--model", help="attention: model JSON")
    s.add_argument("--proxy-gt", help="ensemble: write the best model's test trajectories here")
    s.add_argument("--out", required=True, help="correlation JSON")
    s.set_defaults(func=cmd_analyze)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not hasattr(args, "seed"):
        args.seed = 0
    if not hasattr(args, "threads"):
        args.threads = None
    try:
        args.func(args)
    except ValidationError as exc:
        print(f"stiffkit: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericError as exc:
        print(f"stiffkit: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except StiffkitError as exc:
        print(f"stiffkit: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
