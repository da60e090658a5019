"""Command line entry point: ``learntv <command> [options]``.

Exit codes: 0 on success, 1 on usage errors, 2 on data or format errors.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import data as datamod
from .operators import differentiate, ratio_experiment
from .plotting import write_line_chart
from .proxtv import init_nested_params, prox_error, tv_denoise
from .solvers import DUAL_METHODS, METHODS, TVProblem, inexact_budget, lambda_max, objective_analysis, reference_solution, solve
from .training import TrainConfig, curriculum
from .unrolled import ARCHS, init_net, initial_estimate, forward, load_net, network_loss, save_net

log = logging.getLogger("learntv")

PSTAR_ITERATIONS = 100_000


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _csv_writer(out):
    """Writer on ``out`` (a path) or standard output when ``out`` is None or '-'."""
    if out in (None, "-"):
        return nullcontext(sys.stdout)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    return open(out, "w", newline="")


def _fmt(v: float) -> str:
    return repr(float(v))


def _arch_name(flag: str) -> str:
    return flag.replace("-", "_")


def cmd_gen_data(args):
    if args.out is None:
        raise UsageError("gen-data needs --out <dir>")
    ds = datamod.generate(args.n, args.k, args.m, args.sparsity, args.snr, args.seed)
    datamod.save(ds, args.out)
    print(f"wrote {args.n} samples (k={args.k}, m={args.m}) to {args.out}")
    return 0


def cmd_ratio(args):
    summary = ratio_experiment(args.k, args.trials, args.seed, m=args.m)
    with _csv_writer(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "trial", "ratio"])
        for i, r in enumerate(summary.samples):
            w.writerow([args.k, i, _fmt(r)])
        for key in ("mean", "q10", "q90", "lower_bound", "conjecture"):
            w.writerow([args.k, key, _fmt(getattr(summary, key))])
    return 0


def cmd_budget(args):
    rep = inexact_budget(args.delta, args.rho, args.gamma, args.C0, args.C1)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["delta", "rho", "gamma", "C0", "C1", "T", "T_in", "T_raw", "T_in_raw"])
    w.writerow([args.delta, args.rho, args.gamma, args.C0, args.C1, rep.T, rep.T_in, _fmt(rep.T_raw), _fmt(rep.T_in_raw)])
    return 0


def _stage_dirs(path: Path):
    """A checkpoint directory, or a training output holding ``T<n>`` stage directories."""
    if (path / "manifest.txt").exists():
        return [path]
    stages = sorted((p for p in path.glob("T*") if (p / "manifest.txt").exists()), key=lambda p: int(p.name[1:]))
    if not stages:
        raise FileNotFoundError(f"no checkpoint found in {path}")
    return stages


def cmd_train(args):
    if args.data is None or args.out is None:
        raise UsageError("train needs --data and --out")
    ds = datamod.load(args.data)
    arch = _arch_name(args.arch)
    stages = [int(s) for s in args.curriculum.split(",")] if args.curriculum else [args.layers]
    if any(T < 1 for T in stages):
        raise UsageError("curriculum stages must be positive integers")
    A, X = ds.A, ds.X_train
    lam = args.lam * lambda_max(A, X)
    cfg = TrainConfig(max_epochs=args.max_epochs, seed=args.seed, eta0=args.eta0, freeze_inner=args.freeze_inner)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []

    def on_stage(T, net, report):
        save_net(net, out / f"T{T}")
        rows.append((T, 0, report.loss_history[0], ""))
        for e, (loss, eta) in enumerate(zip(report.loss_history[1:], report.etas), start=1):
            rows.append((T, e, loss, eta))
        log.info("stage T=%d: %d epochs, loss %.6g -> %.6g (%s)", T, report.epochs_run, report.loss_history[0], report.final_loss, report.stop_reason)

    curriculum(arch, A, X, lam, stages, cfg, t_in=args.inner, on_stage=on_stage)
    with open(out / "train_report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "epoch", "loss", "eta"])
        for T, e, loss, eta in rows:
            w.writerow([T, e, _fmt(loss), "" if eta == "" else _fmt(eta)])
    return 0


def split_problem(ds, lam_ratio):
    return TVProblem(ds.A, ds.X_test, lam_ratio * lambda_max(ds.A, ds.X_test))


def reference_objectives(data_dir, ds, lam_ratio, iterations=PSTAR_ITERATIONS):
    """Per-test-sample optimal objectives, cached beside the dataset.

    Only the default iteration count is cached so a cheaper reference never
    shadows the converged one.
    """
    path = Path(data_dir) / f"pstar-lam{lam_ratio!r}.f64"
    cache = iterations == PSTAR_ITERATIONS
    n = ds.X_test.shape[0]
    if cache and path.exists():
        cached = np.fromfile(path, dtype="<f8")
        if cached.size == n:
            return cached
    p = split_problem(ds, lam_ratio)
    pstar = objective_analysis(p, reference_solution(p, iterations).u)
    if cache:
        np.ascontiguousarray(pstar, dtype="<f8").tofile(path)
    return pstar


def cmd_bench_solvers(args):
    if args.data is None:
        raise UsageError("bench-solvers needs --data")
    ds = datamod.load(args.data)
    p = split_problem(ds, args.lam)
    pstar = reference_objectives(args.data, ds, args.lam, args.pstar_iterations).mean()
    full_rank = np.linalg.matrix_rank(ds.A) == ds.A.shape[1]
    curves = {}
    for method in args.solvers.split(",") if args.solvers else METHODS:
        if method in DUAL_METHODS and not full_rank:
            print(f"skipping {method}: design matrix is not full column rank", file=sys.stderr)
            continue
        curves[method] = solve(p, method, args.T_max).trace.objectives.mean(axis=1) - pstar
    learned = {}
    for ckpt in args.ckpt or []:
        for stage in _stage_dirs(Path(ckpt)):
            net = load_net(stage)
            risk = network_loss(net, ds.A, ds.X_test, p.lam)
            learned.setdefault(f"learned_{net.arch}", []).append((net.n_layers, risk - pstar))
    with _csv_writer(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["solver", "iteration", "objective"])
        for name, curve in curves.items():
            for t, v in enumerate(curve):
                w.writerow([name, t, _fmt(v)])
        for name, pts in learned.items():
            for t, v in sorted(pts):
                w.writerow([name, t, _fmt(v)])
    if args.svg:
        series = {name: (range(len(c)), c) for name, c in curves.items()}
        series.update({name: tuple(zip(*sorted(pts))) for name, pts in learned.items()})
        write_line_chart(args.svg, series, title=f"lambda = {args.lam} lambda_max", xlabel="iterations / layers", ylabel="P - P*")
    return 0


def cmd_prox_error(args):
    if args.data is None:
        raise UsageError("prox-error needs --data")
    ds = datamod.load(args.data)
    A, X = ds.A, ds.X_test
    lam = args.lam * lambda_max(A, X)
    nets = {}
    if args.ckpt:
        trained = load_net(_stage_dirs(Path(args.ckpt))[-1])
        if trained.arch != "lpgd_lista":
            raise UsageError("prox-error needs an lpgd-lista checkpoint")
        nets["lista_trained"] = trained
        base = trained
    else:
        base = init_net("lpgd_lista", A, float(np.mean(lam)), args.layers, args.inner)
    untrained = base.copy()
    inner = init_nested_params(base.k, base.t_in)
    untrained.params["W_z"][:] = inner.W_z
    untrained.params["W_h"][:] = inner.W_h
    untrained.params["mu_in"][:] = inner.mu_in
    nets["lista_untrained_inner"] = untrained
    u0 = initial_estimate(A, X)
    rows = []
    for name, net in nets.items():
        _, cache = forward(net, X, u0, lam)
        for t in range(net.n_layers):
            h, thr = cache.hs[t], cache.thr[t]
            eps = prox_error(h, cache.zs[t][-1], thr)
            if name == "lista_untrained_inner":
                # exact prox evaluated on the same pre-prox points
                rows.append(("exact", t + 1, prox_error(h, differentiate(tv_denoise(h, thr)), thr).mean()))
            rows.append((name, t + 1, eps.mean()))
    rows.sort(key=lambda r: (r[0], r[1]))
    with _csv_writer(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["series", "layer", "eps"])
        for name, t, v in rows:
            w.writerow([name, t, _fmt(v)])
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
    common.add_argument("--out", default=None, help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="learntv", description="Learned and classic solvers for 1D TV-regularized least squares.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--sparsity", type=int, default=2)
    p.add_argument("--snr", type=float, default=1.0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train an unrolled network")
    p.add_argument("--arch", choices=[a.replace("_", "-") for a in ARCHS], required=True)
    p.add_argument("--layers", type=int, default=10)
    p.add_argument("--inner", type=int, default=50)
    p.add_argument("--lam", type=float, default=0.1, help="regularization as a fraction of lambda_max")
    p.add_argument("--data", required=True)
    p.add_argument("--curriculum", default=None, help="comma separated layer counts")
    p.add_argument("--max-epochs", type=int, default=TrainConfig.max_epochs)
    p.add_argument("--eta0", type=float, default=TrainConfig.eta0)
    p.add_argument("--freeze-inner", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench-solvers", parents=[common], help="suboptimality curves of solvers and trained nets")
    p.add_argument("--data", required=True)
    p.add_argument("--lam", type=float, default=0.1)
    p.add_argument("--T-max", dest="T_max", type=int, default=100)
    p.add_argument("--svg", default=None)
    p.add_argument("--ckpt", action="append", help="checkpoint or training output directory (repeatable)")
    p.add_argument("--solvers", default=None, help=f"comma separated subset of {','.join(METHODS)}")
    p.add_argument("--pstar-iterations", type=int, default=PSTAR_ITERATIONS)
    p.set_defaults(func=cmd_bench_solvers)

    p = sub.add_parser("prox-error", parents=[common], help="per-layer prox-TV error of LPGD-LISTA")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--lam", type=float, default=0.1)
    p.add_argument("--layers", type=int, default=20)
    p.add_argument("--inner", type=int, default=50)
    p.set_defaults(func=cmd_prox_error)

    p = sub.add_parser("ratio", parents=[common], help="Monte-Carlo study of ||AL||^2 / ||A||^2")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--m", type=int, default=None, help="rows of A (default k)")
    p.add_argument("--trials", type=int, default=1000)
    p.set_defaults(func=cmd_ratio)

    p = sub.add_parser("budget", parents=[common], help="iteration budget of inexact PGD")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--C0", type=float, required=True)
    p.add_argument("--C1", type=float, required=True)
    p.set_defaults(func=cmd_budget)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits on --help (0) and on usage errors (1)
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    if args.threads is not None:
        from threadpoolctl import threadpool_limits

        limits = threadpool_limits(args.threads)
    else:
        limits = nullcontext()
    try:
        with limits:
            return args.func(args)
    except (datamod.DatasetFormatError, OSError) as exc:
        print(f"learntv: error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ValueError) as exc:
        # out-of-domain option values
        print(f"learntv: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
