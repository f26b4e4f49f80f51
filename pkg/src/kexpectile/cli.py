"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 numerical or domain
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, selection, theory
from .als import ALSConfig, DiscreteDistribution, expectile
from .errors import DomainError, ExpectileError
from .kernel import (GaussianKernel, empirical_eigendecay, entropy_maximizer, entropy_maximizer_grid,
                     entropy_profile_max, gram)
from .solver import Dataset, ExpectileModel, fit

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("kexpectile")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _tau(value: str) -> float:
    v = float(value)
    if not (0.0 < v < 1.0):
        raise argparse.ArgumentTypeError(f"tau must lie in (0, 1), got {value}")
    return v


def _positive(value: str) -> float:
    v = float(value)
    if not (v > 0.0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {value}")
    return v


def _n_grid(value: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad n grid {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--tau", type=_tau, default=0.5)
    shared.add_argument("--lambda", dest="lam", type=_positive, default=1e-3)
    shared.add_argument("--gamma", type=_positive, default=0.5)
    shared.add_argument("--alpha", type=float, default=bench.DEFAULT_ALPHA)
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    shared.add_argument("--out", type=Path)
    shared.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="kexpectile", description="Kernel expectile regression toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[shared], help="fit a model on an x1..xd,y CSV")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--clip", type=_positive, help="clip level (default max |y|)")
    t.add_argument("--eigenvalues", type=Path, help="also write the Gram eigenvalues as i,lambda CSV")

    pr = sub.add_parser("predict", parents=[shared], help="clipped predictions for an x1..xd CSV")
    pr.add_argument("--model", type=Path, required=True)
    pr.add_argument("--data", type=Path, required=True)

    tv = sub.add_parser("tvsvm", parents=[shared], help="training/validation grid selection")
    tv.add_argument("--data", type=Path, required=True)
    tv.add_argument("--grid-mode", choices=["practical", "strict_net"], default="practical")
    tv.add_argument("--table", type=Path, help="write the lambda,gamma,risk table")

    r = sub.add_parser("rates", parents=[shared], help="learning-rate experiment")
    r.add_argument("--kind", choices=bench.PROBLEM_KINDS, default="noiseless-sine")
    r.add_argument("--d", type=int, default=1)
    r.add_argument("--c1", type=_positive, default=1.0)
    r.add_argument("--c2", type=_positive, default=1.0)
    r.add_argument("--n-grid", type=_n_grid, default=bench.DEFAULT_N_GRID)
    r.add_argument("--reps", type=int, default=5)
    r.add_argument("--mc-samples", type=int, default=100_000)
    r.add_argument("--summary", type=Path, help="JSON summary with the fitted slope")
    r.add_argument("--unbounded", action="store_true", help="clip at M_n = 2c(rho_hat + ln n)^l")
    r.add_argument("--tail-c", type=float, default=3.0)
    r.add_argument("--tail-l", type=float, default=0.5)
    r.add_argument("--rho-hat", type=float, default=1.0)

    v = sub.add_parser("verify", parents=[shared], help="run the bound checks")
    v.add_argument("--distribution", type=Path, help="value,mass CSV to check")
    v.add_argument("--mc-samples", type=int, default=100_000)
    v.add_argument("--trials", type=int, default=10_000)
    return p


def _read_covariates(path: Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DomainError("covariate CSV needs a header x1,...,xd")
        if header and header[-1].strip() == "y":
            header = header[:-1]
            rows = [[float(v) for v in row[:-1]] for row in reader if row]
        else:
            rows = [[float(v) for v in row] for row in reader if row]
    d = len(header)
    if any(len(r) != d for r in rows):
        raise DomainError("ragged covariate CSV")
    return np.asarray(rows, dtype=float).reshape(-1, d)


def cmd_train(args) -> int:
    data = Dataset.from_csv(args.data)
    model = fit(data, args.tau, args.lam, args.gamma, args.clip)
    out = args.out or Path("model.json")
    model.save(out)
    if args.eigenvalues:
        lam = empirical_eigendecay(gram(GaussianKernel(args.gamma), data.x))
        with open(args.eigenvalues, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "lambda"])
            for i, v in enumerate(lam, 1):
                w.writerow([i, repr(float(v))])
    print(f"objective {model.diagnostics.objective:.12g}")
    print(f"iterations {model.diagnostics.iterations}")
    print(f"model written to {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = ExpectileModel.load(args.model)
    X = _read_covariates(args.data)
    if X.shape[0] and X.shape[1] != model.d:
        raise DomainError(f"model expects d={model.d}, covariates have d={X.shape[1]}")
    if X.shape[0]:
        pred = model.predict_clipped(X) if model.clip_level is not None else model.predict(X)
    else:
        pred = np.empty(0)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["prediction"])
        for v in np.atleast_1d(pred):
            w.writerow([repr(float(v))])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_tvsvm(args) -> int:
    data = Dataset.from_csv(args.data)
    if data.n < 4:
        raise UsageError(f"tvsvm needs at least 4 samples, got {data.n}")
    grids = selection.make_grids(data.n, args.alpha, data.d, args.grid_mode)
    res = selection.tv_svm(data, args.tau, grids, threads=args.threads)
    res.model.save(args.out or Path("model.json"))
    if args.table:
        res.to_csv(args.table)
    print(f"lambda {res.chosen_lambda!r}")
    print(f"gamma {res.chosen_gamma!r}")
    print(f"validation_risk {res.validation_risk!r}")
    return EXIT_OK


def cmd_rates(args) -> int:
    exp = bench.RateExperiment(kind=args.kind, c1=args.c1, c2=args.c2, alpha=args.alpha, d=args.d,
                               n_grid=args.n_grid, repetitions=args.reps, seed=args.seed,
                               mc_samples=args.mc_samples)
    if args.unbounded:
        sched = bench.TailSchedule(args.tail_c, args.tail_l, args.rho_hat)
        exp = bench.unbounded_rate_run(exp, sched, args.tau, threads=args.threads)
    else:
        exp = bench.measure_rate(exp, args.tau, threads=args.threads)
    out = args.out or Path("rates.csv")
    exp.to_csv(out)
    summary = args.summary or out.with_suffix(".json")
    summary.write_text(exp.summary_json(), encoding="utf-8")
    for r in exp.results:
        print(f"n={r.n:6d} excess={r.mean_excess:.6e} std={r.std_excess:.3e}")
    print(f"slope {exp.slope}")
    return EXIT_OK


def default_suite(mc_samples: int = 100_000, trials: int = 10_000, seed: int = 0) -> list[theory.BoundReport]:
    reports = [theory.check_inner_risk_sandwich(trials, seed), theory.check_hp_lemma(10_000)]

    ent = theory.BoundReport("entropy_maximizer")
    for p in (0.2, 0.5, 0.8):
        for d in (1, 2, 3):
            eps_grid, value, step = entropy_maximizer_grid(p, d)
            gap = abs(math.log(eps_grid) - math.log(entropy_maximizer(p, d)))
            ent.record(gap - step, 0.0, p=p, d=d, check="argmax")
            rel = abs(value / entropy_profile_max(p, d) - 1.0)
            ent.record(rel - 1e-8, 0.0, p=p, d=d, check="value")
    reports.append(ent)

    for tau in (0.1, 0.5, 0.9):
        pb = bench.make_problem("uniform-noise", 1, tau, seed)
        shift = 0.1
        reports.append(theory.check_calibration(pb, lambda x, pb=pb: pb.target(x) + shift, mc_samples, seed))
        M = pb.response_bound()
        reports.append(theory.check_variance_bound(
            pb, lambda x, pb=pb, M=M: np.clip(pb.target(x) + 0.2, -M, M), M, mc_samples, seed))
    return reports


def cmd_verify(args) -> int:
    reports = default_suite(args.mc_samples, args.trials, args.seed)
    if args.distribution:
        Q = DiscreteDistribution.from_csv(args.distribution)
        rep = theory.sandwich_on_grid(Q, args.tau)
        print(f"expectile(tau={args.tau}) = {expectile(Q, ALSConfig(args.tau))!r}")
        reports.append(rep)
    ok = True
    for rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        ok &= rep.passed
        print(f"{status} {rep.name}: trials={rep.trials} violations={rep.violations} "
              f"max_slack={rep.max_slack:.3e}")
    if args.out:
        args.out.write_text(json.dumps([r.to_dict() for r in reports], default=theory._json_default),
                            encoding="utf-8")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "tvsvm": cmd_tvsvm,
            "rates": cmd_rates, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"kexpectile: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, UnicodeDecodeError) as exc:
        print(f"kexpectile: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ExpectileError, ValueError, ArithmeticError) as exc:
        print(f"kexpectile: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
