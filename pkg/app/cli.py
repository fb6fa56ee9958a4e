"""Command-line entry point: fit, select, generate, bound, test and coverage.

Results go to stdout as key=value lines; logs go to stderr. Exit codes: 0 success,
2 semantic error, 3 input or usage error.
"""

import argparse
import math
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from loguru import logger
from pydantic import ValidationError

from app.config import config
from app.errors import (
    AlphabetMismatchError,
    LogLinError,
    ParseError,
    UsageError,
    exit_code_for,
    unwrap_validation_error,
)
from app.models.alphabet import Alphabet
from app.models.selection import FitConfig
from app.services import baselines, file_store, vc
from app.services.fitter import LogLinearFitter, evaluate_model
from app.services.loglin import SAMPLER_NAME, min_log_prob, sample, to_table
from app.services.selector import SrmSelector, bound_coverage
from app.utils.helpers import format_bool, parse_sizes
from app.utils.logging import setup_logging


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _emit(**values) -> None:
    for key, value in values.items():
        if isinstance(value, bool):
            value = format_bool(value)
        print(f"{key}={value}")


def _alphabet(text: str) -> Alphabet:
    try:
        return Alphabet.from_sizes(parse_sizes(text))
    except ValidationError as e:
        raise UsageError(f"--alphabet {text}: {unwrap_validation_error(e)}")
    except ValueError as e:
        raise UsageError(str(e))


def _non_negative(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {value}")
    return value


def _input_path(path: str) -> str:
    if not Path(path).is_file():
        raise ParseError(f"{path}: no such file")
    return path


def _output_path(path: Optional[str]) -> Optional[str]:
    if path is not None and not Path(path).parent.is_dir():
        raise UsageError(f"{path}: output directory does not exist")
    return path


def _check_degree(k: int, alphabet: Alphabet, flag: str = "--k") -> None:
    if not 1 <= k <= alphabet.n:
        raise UsageError(f"{flag} {k} outside [1, {alphabet.n}]")


def _fit_config(args: argparse.Namespace) -> FitConfig:
    try:
        return config.fit_config(max_iters=args.max_iters, grad_tol=args.grad_tol)
    except ValidationError as e:
        raise UsageError(str(unwrap_validation_error(e)))


def cmd_fit(args: argparse.Namespace) -> int:
    alphabet = _alphabet(args.alphabet)
    _check_degree(args.k, alphabet)
    _output_path(args.out)
    fitter = LogLinearFitter(_fit_config(args))
    data = file_store.read_dataset(_input_path(args.data), alphabet)

    result = fitter.fit(data, args.k, args.lam)
    file_store.write_model(args.out, result.model)
    _emit(
        k=args.k,
        **{"lambda": args.lam},
        r_emp=result.r_emp,
        min_log_prob=min_log_prob(result.model),
        iterations=result.iterations,
        converged=result.converged,
        active_floor_states=result.active_floor_states,
    )
    return 0


def cmd_select(args: argparse.Namespace) -> int:
    alphabet = _alphabet(args.alphabet)
    _check_degree(args.max_k, alphabet, "--max-k")
    try:
        penalty_cfg = config.penalty_config(
            eta=args.eta, ladder_base=args.ladder_base, ladder_depth=args.ladder_depth
        )
    except ValidationError as e:
        raise UsageError(str(unwrap_validation_error(e)))
    _output_path(args.out)
    selector = SrmSelector(penalty_cfg, _fit_config(args), max_workers=args.workers)
    data = file_store.read_dataset(_input_path(args.data), alphabet)

    report = selector.select(data, args.max_k)
    if args.out:
        file_store.write_json(args.out, report)

    _emit(records=len(report.records))
    if report.winner is None:
        print("winner none")
    else:
        best = report.winner_record
        print(f"winner k={best.k} n={best.n} guaranteed_risk={best.guaranteed_risk}")
    for name in ("aic_winner", "bic_winner", "stepwise"):
        choice = getattr(report, name)
        print(f"{name} k={choice.k} n={choice.n}" if choice else f"{name} none")
    return 0


def cmd_generate(args: argparse.Namespace) -> int:
    _output_path(args.out)
    model = file_store.read_model(_input_path(args.model))
    data = sample(model, args.count, args.seed)
    file_store.write_dataset(args.out, data)
    _emit(count=data.l, distinct_states=len(data.counts), seed=args.seed, generator=SAMPLER_NAME)
    return 0


def cmd_bound(args: argparse.Namespace) -> int:
    alphabet = _alphabet(args.alphabet)
    _check_degree(args.k, alphabet)
    if not 0 < args.lam <= 1 / alphabet.n_states:
        raise UsageError(f"--lambda {args.lam} outside (0, 1/|Ω|] = (0, {1 / alphabet.n_states}]")
    if not 0 < args.eta < 1:
        raise UsageError(f"--eta {args.eta} outside (0, 1)")
    if args.l < 1:
        raise UsageError(f"--l {args.l} must be positive")

    value = vc.phi(args.k, args.lam, args.eta, args.l, alphabet)
    trivial = -math.log(args.lam)
    _emit(
        h_k=vc.h_k(alphabet, args.k),
        product_vc_dim=vc.product_vc_dim(alphabet),
        phi=value,
        trivial_bound=trivial,
        vacuous=value >= trivial,
    )
    return 0


def cmd_test(args: argparse.Namespace) -> int:
    model = file_store.read_model(_input_path(args.model))
    alphabet = model.alphabet
    if args.alphabet and _alphabet(args.alphabet).sizes != alphabet.sizes:
        raise AlphabetMismatchError(
            f"--alphabet {args.alphabet} disagrees with the model alphabet {list(alphabet.sizes)}"
        )
    data = file_store.read_dataset(_input_path(args.data), alphabet)

    table = to_table(model)
    scored = evaluate_model(data, model)
    params = baselines.parameter_count(alphabet, model.k)
    df = baselines.degrees_of_freedom(alphabet, model.k)
    x2 = baselines.pearson_x2(data, table)
    g2 = baselines.deviance_g2(data, table)
    _emit(
        l=data.l,
        r_emp=scored.r_emp,
        x2=x2,
        g2=g2,
        params=params,
        df=df,
        x2_p=baselines.chi2_p_value(x2, df),
        g2_p=baselines.chi2_p_value(g2, df),
        aic=baselines.aic_score(data, scored, params),
        bic=baselines.bic_score(data, scored, params),
    )
    return 0


def cmd_coverage(args: argparse.Namespace) -> int:
    _output_path(args.out)
    model = file_store.read_model(_input_path(args.model))
    if args.k is not None:
        _check_degree(args.k, model.alphabet)
    report = bound_coverage(
        model,
        l=args.l,
        trials=args.trials,
        k=args.k,
        lam=args.lam,
        eta=args.eta,
        seed=args.seed,
        fit_cfg=_fit_config(args),
    )
    if args.out:
        file_store.write_json(args.out, report)
    _emit(
        trials=report.trials,
        violations=report.violations,
        fraction=report.fraction,
        phi=report.phi,
        generator=report.generator,
    )
    return 0


def _add_fit_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--max-iters", type=int, default=None)
    parser.add_argument("--grad-tol", type=float, default=None)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="loglin-srm", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler: Callable[[argparse.Namespace], int], summary: str) -> ArgumentParser:
        sub = commands.add_parser(name, help=summary)
        sub.set_defaults(handler=handler)
        return sub

    p = command("fit", cmd_fit, "fit one k-factor model under a probability floor")
    p.add_argument("data")
    p.add_argument("--alphabet", required=True, help="category counts, e.g. 2,2,3")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--out", required=True, help="model JSON path")
    _add_fit_flags(p)

    p = command("select", cmd_select, "structural risk minimization over (k, λ_n)")
    p.add_argument("data")
    p.add_argument("--alphabet", required=True)
    p.add_argument("--max-k", type=int, required=True)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--ladder-base", type=float, default=None)
    p.add_argument("--ladder-depth", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="report JSON path")
    _add_fit_flags(p)

    p = command("generate", cmd_generate, "sample a data CSV from a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=_non_negative, required=True)
    p.add_argument("--seed", type=_non_negative, required=True)
    p.add_argument("--out", required=True)

    p = command("bound", cmd_bound, "evaluate the guaranteed-risk penalty")
    p.add_argument("--alphabet", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--eta", type=float, default=config.srm_eta)
    p.add_argument("--l", type=int, required=True)

    p = command("test", cmd_test, "classical goodness-of-fit statistics of a model on data")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--alphabet", default=None)

    p = command("coverage", cmd_coverage, "resampling check of the risk bound")
    p.add_argument("--model", required=True)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--seed", type=_non_negative, required=True)
    p.add_argument("--eta", type=float, default=config.srm_eta)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--out", default=None)
    _add_fit_flags(p)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging(config.log_level)
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except ValidationError as e:
        error = unwrap_validation_error(e)
    except LogLinError as e:
        error = e
    except OSError as e:
        error = ParseError(f"{e.filename or 'input'}: {e.strerror or e}")
    logger.error(str(error))
    return exit_code_for(error)


if __name__ == "__main__":
    sys.exit(main())
