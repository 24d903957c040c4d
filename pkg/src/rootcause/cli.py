"""Command-line entry point: ``rootcause <command> ...``.

Exit codes: 0 success, 1 input error, 2 numerical failure.  ``RC_THREADS``
caps the number of worker threads.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .evaluation import ExperimentConfig, run_experiment
from .highdim import HighdimConfig, rc_scores_highdim
from .io import (
    CountMatrix,
    InputError,
    LabeledMatrix,
    format_csv,
    load_csv,
    load_dataset,
    parse_int_list,
    parse_thresholds,
    preprocess_counts,
    write_csv,
)
from .numerics import CovMode, NotPositiveDefinite
from .scoring import Permutation, is_sufficient, rc_scores
from .sem import (
    Intervention,
    Sem,
    hub_dag,
    random_dag,
    rescale_to_target_variances,
    sample_interventional,
    sample_observational,
    shuffle_variables,
)

log = logging.getLogger("rootcause")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


def thread_cap(requested: int | None = None) -> int:
    env = os.environ.get("RC_THREADS")
    cap = None
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise InputError(f"RC_THREADS must be an integer, got {env!r}") from None
    if requested is None:
        return cap or 1
    return min(requested, cap) if cap else requested


def hub_layout(p: int) -> tuple[int, int]:
    """Upper/lower block sizes for four hubs totalling ``p`` variables (3:2 split)."""
    if p % 4 or p < 12:
        raise InputError("hub graphs need p divisible by 4 and at least 12")
    rest = p // 4 - 1
    upper = round(rest * 0.6)
    return upper, rest - upper


def _simulate(args) -> int:
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    if args.dag == "random":
        dag = random_dag(args.p, args.s, rng)
    else:
        upper, lower = hub_layout(args.p)
        dag = hub_dag(4, upper, lower, args.cross_in, args.cross_out, args.s, rng)
    p = dag.p
    sem = Sem(
        dag,
        rng.uniform(-10, 10, size=p),
        rng.uniform(*args.error_var_range, size=p),
        (args.error_family,) * p,
    )
    sem = rescale_to_target_variances(sem, rng.uniform(10, 50, size=p))
    sem, _ = shuffle_variables(sem, rng)
    obs = sample_observational(sem, args.n, rng)
    roots = rng.choice(p, size=args.cases, replace=p < args.cases)
    cases = np.array([sample_interventional(sem, Intervention(int(r), args.delta), rng) for r in roots])
    names = tuple(f"X{j + 1}" for j in range(p))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.json").write_text(sem.to_json() + "\n", encoding="utf-8")
    write_csv(out / "obs.csv", LabeledMatrix(tuple(f"obs{i + 1}" for i in range(args.n)), names, obs, "sample"))
    write_csv(out / "cases.csv", LabeledMatrix(tuple(f"case{c + 1}" for c in range(args.cases)), names, cases, "sample"))
    truth = "case,root_cause,variable\n" + "".join(f"case{c + 1},{int(r)},{names[r]}\n" for c, r in enumerate(roots))
    (out / "truth.csv").write_text(truth, encoding="utf-8")
    return EXIT_OK


def _sidecar_path(out: Path) -> Path:
    return out.with_suffix(".json") if out.suffix != ".json" else out.with_name(out.name + ".details.json")


def _score(args) -> int:
    ds = load_dataset(args.obs, args.case, args.case_row)
    report = rc_scores(ds, args.v, parse_thresholds(args.thresholds), CovMode.parse(args.cov), args.seed)
    Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    return EXIT_OK


def _score_highdim(args) -> int:
    ds = load_dataset(args.obs, args.case, args.case_row)
    config = HighdimConfig(
        response_threshold=args.resp_threshold,
        all_responses=args.all_responses,
        v=args.v,
        thresholds=parse_thresholds(args.thresholds),
        cv_folds=args.cv_folds,
        cov_mode=CovMode.parse(args.cov),
        seed=args.seed,
        workers=thread_cap(args.workers),
    )
    report = rc_scores_highdim(ds, config)
    out = Path(args.out)
    out.write_text(report.to_csv(), encoding="utf-8")
    _sidecar_path(out).write_text(json.dumps(report.details, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def _eval(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {args.config}: {exc}") from None
    config = ExperimentConfig.from_dict(raw)
    config.workers = thread_cap(config.workers)
    result = run_experiment(config)
    echo = config.to_dict()
    echo.pop("workers")  # parallelism does not change results
    result.write(args.out)
    (Path(args.out) / "config.json").write_text(json.dumps(echo, indent=2) + "\n", encoding="utf-8")
    if result.failures:
        log.warning("%d cases failed and were excluded", result.failures)
    return EXIT_OK


def _preprocess(args) -> int:
    counts = CountMatrix.from_matrix(load_csv(args.counts))
    pre = preprocess_counts(
        counts, args.min_count, args.max_zero_frac, args.corr_cutoff,
        pseudocount=args.pseudocount, log_then_divide=args.log_then_divide,
    )
    Path(args.out).write_text(format_csv(pre.to_matrix()), encoding="utf-8")
    return EXIT_OK


def _check_sufficiency(args) -> int:
    try:
        sem = Sem.from_json(Path(args.model).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"cannot read model {args.model}: {exc}") from None
    perm = parse_int_list(args.perm)
    if len(perm) != sem.p:
        raise InputError(f"permutation has {len(perm)} entries, model has {sem.p} variables")
    if not 0 <= args.root < sem.p:
        raise InputError(f"root {args.root} out of range")
    print("true" if is_sufficient(sem.dag, Permutation(perm), args.root) else "false")
    return EXIT_OK


def _range(text: str) -> tuple[float, float]:
    lo, hi = (float(t) for t in text.split(","))
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rootcause", description="Root cause discovery in linear SEMs.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="sample a random model, observational data and interventional cases")
    sp.add_argument("--dag", choices=("random", "hub"), required=True)
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--s", type=float, default=0.4)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--cases", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--error-family", choices=("gaussian", "uniform"), default="gaussian")
    sp.add_argument("--error-var-range", type=_range, default=(1.0, 2.0))
    sp.add_argument("--cross-in", type=int, default=4)
    sp.add_argument("--cross-out", type=int, default=3)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_simulate)

    for name, func in (("score", _score), ("score-highdim", _score_highdim)):
        sp = sub.add_parser(name)
        sp.add_argument("--obs", required=True)
        sp.add_argument("--case", required=True)
        sp.add_argument("--case-row", type=int, default=0, help="row of the case file to score (0-based)")
        sp.add_argument("--cov", default="auto", help="auto, sample, shrunk or shrunk:ALPHA")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True)
        sp.set_defaults(func=func)
        if name == "score":
            sp.add_argument("--v", type=int, default=10)
            sp.add_argument("--thresholds", default="auto", help="comma-separated list or 'auto'")
        else:
            sp.add_argument("--resp-threshold", type=float, default=1.5)
            sp.add_argument("--all-responses", action="store_true")
            sp.add_argument("--v", type=int, default=20)
            sp.add_argument("--thresholds", default=",".join(str(t) for t in HighdimConfig().thresholds))
            sp.add_argument("--cv-folds", type=int, default=5)
            sp.add_argument("--workers", type=int, default=None)

    sp = sub.add_parser("eval", help="run a simulation study from a JSON config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_eval)

    sp = sub.add_parser("preprocess", help="filter, normalize and log-transform a count matrix")
    sp.add_argument("--counts", required=True)
    sp.add_argument("--min-count", type=float, default=10)
    sp.add_argument("--max-zero-frac", type=float, default=0.9)
    sp.add_argument("--corr-cutoff", type=float, default=0.999)
    sp.add_argument("--pseudocount", type=float, default=1.0)
    sp.add_argument("--log-then-divide", action="store_true", help="log(count + pc) / s instead of log((count + pc) / s)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=_preprocess)

    sp = sub.add_parser("check-sufficiency", help="print whether a permutation is sufficient for a root cause")
    sp.add_argument("--model", required=True)
    sp.add_argument("--perm", required=True, help="comma-separated 0-based variable indices")
    sp.add_argument("--root", type=int, required=True)
    sp.set_defaults(func=_check_sufficiency)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (NotPositiveDefinite, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
