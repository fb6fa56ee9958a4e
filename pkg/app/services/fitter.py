"""Floored maximum-likelihood fitting of k-factor models.

The negative log-likelihood -(1/l) Σ counts[x] <c^x, f> + ln Z(f) is convex in f. The floor
ln P_f(x) >= ln λ is enforced with a log-barrier over a decreasing weight schedule.

Problems with few identifiable parameters take damped Newton steps and finish with an
active-set stage that places pinned states exactly on the floor and checks the KKT
conditions. Larger ones use first-order descent, optionally followed by a barrier-free polish
when no state sits near the floor.
"""

import math
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg
from loguru import logger
from scipy.special import logsumexp

from app.config import config
from app.errors import BarrierDomainError, DomainError, InfeasibleFloorError, ZeroMarginalError
from app.models.alphabet import Dataset
from app.models.loglinear import FactorBasis, LogLinearModel
from app.models.selection import FitConfig, FitResult
from app.services.baselines import parameter_count
from app.services.information import empirical_risk
from app.services.loglin import (
    build_basis,
    corner_design,
    feature_columns,
    feature_totals,
    log_probabilities,
    make_model,
    model_from_marginals,
    normalize,
    to_table,
)

# distance to the floor, in nats, below which a state counts as pinned
ACTIVE_FLOOR_TOL = 1e-6
# a pinned state ends the barrier schedule about w / λ nats above the floor
BARRIER_PIN_FACTOR = 10.0
# polish only when every state is at least this far above the floor
POLISH_MARGIN = 1.0
MIN_STEP = 1e-20
MAX_STEP = 1e12

# dense design entries (|Ω| x parameters) allowed on the Newton path
SECOND_ORDER_MAX_ENTRIES = 2**24
# a Newton stage stops once half the decrement, relative to |value|, falls below this
NEWTON_GAP = 1e-13
FACE_MAX_STEPS = 50
MAX_ACTIVE_ROUNDS = 50
FEASIBILITY_TOL = 1e-10
FACE_PRIMAL_TOL = 1e-12
MULTIPLIER_TOL = 1e-10


class FitProblem:
    """Data-dependent pieces of the objective, computed once per (dataset, basis, λ)."""

    def __init__(self, d: Dataset, basis: FactorBasis, lam: float):
        if d.alphabet != basis.alphabet:
            raise DomainError("dataset and basis are defined over different alphabets")
        if not lam > 0 or lam * basis.alphabet.n_states >= 1:
            raise InfeasibleFloorError(
                f"floor {lam!r} must satisfy 0 < λ < 1/|Ω| = {1 / basis.alphabet.n_states!r}"
            )
        self.basis = basis
        self.lam = lam
        self.log_lam = math.log(lam)
        self.columns = feature_columns(basis)
        self.counts = d.dense_counts().astype(np.float64)
        self.l = d.l
        self.emp_mean = feature_totals(self.counts, basis) / self.l

    def evaluate(self, f: np.ndarray, barrier_weight: float) -> Tuple[float, np.ndarray, np.ndarray]:
        """Objective, gradient and normalized log-probabilities at f."""
        s = f[self.columns].sum(axis=1)
        log_z = float(logsumexp(s))
        log_p = s - log_z
        p = np.exp(log_p)
        expected = feature_totals(p, self.basis)

        value = -float(self.counts @ s) / self.l + log_z
        grad = expected - self.emp_mean
        if barrier_weight > 0:
            u = log_p - self.log_lam
            if np.any(u <= 0):
                raise BarrierDomainError(f"iterate leaves the floor region (min margin {u.min()!r})")
            inv = 1.0 / u
            value -= barrier_weight * float(np.log(u).sum())
            grad -= barrier_weight * (feature_totals(inv, self.basis) - inv.sum() * expected)
        return value, grad, log_p


class CornerProblem:
    """The same objective in identifiable coordinates θ, with block parameters f = lift @ θ."""

    def __init__(self, problem: FitProblem):
        self.problem = problem
        self.design, self.lift = corner_design(problem.basis)
        self.emp_mean = self.design.T @ problem.counts / problem.l

    @property
    def dimension(self) -> int:
        return self.design.shape[1]

    def margins(self, log_p: np.ndarray) -> np.ndarray:
        return log_p - self.problem.log_lam

    def evaluate(
        self, theta: np.ndarray, barrier_weight: float
    ) -> Tuple[float, np.ndarray, np.ndarray]:
        problem = self.problem
        s = self.design @ theta
        log_z = float(logsumexp(s))
        log_p = s - log_z
        mean = self.design.T @ np.exp(log_p)

        value = -float(problem.counts @ s) / problem.l + log_z
        grad = mean - self.emp_mean
        if barrier_weight > 0:
            u = self.margins(log_p)
            if np.any(u <= 0):
                raise BarrierDomainError(f"iterate leaves the floor region (min margin {u.min()!r})")
            inv = 1.0 / u
            value -= barrier_weight * float(np.log(u).sum())
            grad -= barrier_weight * (self.design.T @ inv - inv.sum() * mean)
        return value, grad, log_p

    def curvature(self, log_p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Gradients of ln P(x) as rows, and the covariance of the design under P."""
        p = np.exp(log_p)
        centered = self.design - self.design.T @ p
        return centered, centered.T @ (p[:, None] * centered)

    def hessian(self, log_p: np.ndarray, barrier_weight: float) -> np.ndarray:
        centered, cov = self.curvature(log_p)
        if barrier_weight == 0:
            return cov
        inv = 1.0 / self.margins(log_p)
        return (1.0 + barrier_weight * inv.sum()) * cov + barrier_weight * centered.T @ (
            inv[:, None] ** 2 * centered
        )


def objective_and_gradient(
    f: np.ndarray, d: Dataset, basis: FactorBasis, barrier_weight: float, lam: float
) -> Tuple[float, np.ndarray]:
    value, grad, _ = FitProblem(d, basis, lam).evaluate(np.asarray(f, dtype=np.float64), barrier_weight)
    return value, grad


def _newton_direction(hessian: np.ndarray, grad: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.solve(hessian, -grad, assume_a="pos")
    except (np.linalg.LinAlgError, ValueError):
        return -np.linalg.lstsq(hessian, grad, rcond=None)[0]


class _Stage:
    def __init__(self, point: np.ndarray, iterations: int, converged: bool, trace: List[float]):
        self.point = point
        self.iterations = iterations
        self.converged = converged
        self.trace = trace


class _Face:
    def __init__(
        self, theta: np.ndarray, multipliers: np.ndarray, steps: int, status: str, margins: np.ndarray
    ):
        self.theta = theta
        self.multipliers = multipliers
        self.steps = steps
        self.status = status
        self.margins = margins


class _Outcome:
    def __init__(
        self, f: np.ndarray, iterations: int, converged: bool, traces: List[tuple], slack: float
    ):
        self.f = f
        self.iterations = iterations
        self.converged = converged
        self.traces = traces
        # margin under which a state is reported on the floor
        self.slack = slack


class LogLinearFitter:
    def __init__(self, cfg: Optional[FitConfig] = None):
        self.cfg = cfg or config.fit_config()

    def fit(self, d: Dataset, k: int, lam: float) -> FitResult:
        if not 1 <= k <= d.alphabet.n:
            raise DomainError(f"degree k={k} outside [1, {d.alphabet.n}]")
        basis = build_basis(d.alphabet, k)
        problem = FitProblem(d, basis, lam)

        if self.uses_second_order(basis):
            outcome = self._fit_second_order(problem, k, lam)
        else:
            outcome = self._fit_first_order(problem, k, lam)

        model = normalize(make_model(basis, outcome.f, lam))
        log_p = log_probabilities(model)
        result = FitResult(
            model=model,
            r_emp=empirical_risk(d, to_table(model)),
            iterations=outcome.iterations,
            converged=outcome.converged,
            active_floor_states=int(np.count_nonzero(log_p - problem.log_lam <= outcome.slack)),
            objective_trace=tuple(outcome.traces) if self.cfg.record_trace else (),
        )
        if not outcome.converged:
            logger.warning(
                f"fit k={k} λ={lam:.3g} stopped after {outcome.iterations} iterations without converging"
            )
        logger.info(
            f"fit k={k} λ={lam:.3g}: r_emp={result.r_emp:.6f}, {outcome.iterations} iterations, "
            f"{result.active_floor_states} state(s) on the floor"
        )
        return result

    def uses_second_order(self, basis: FactorBasis) -> bool:
        params = parameter_count(basis.alphabet, basis.k)
        return (
            params <= self.cfg.second_order_max_params
            and params * basis.alphabet.n_states <= SECOND_ORDER_MAX_ENTRIES
        )

    def _stage_tol(self, i: int, weight: float) -> float:
        if i == len(self.cfg.barrier_weights) - 1:
            return self.cfg.grad_tol
        return max(self.cfg.grad_tol, 1e-4 * weight)

    def _fit_second_order(self, problem: FitProblem, k: int, lam: float) -> _Outcome:
        cfg = self.cfg
        corner = CornerProblem(problem)
        theta = np.zeros(corner.dimension)
        used, traces = 0, []
        for i, weight in enumerate(cfg.barrier_weights):
            tol = self._stage_tol(i, weight)
            stage = self._newton_descend(corner, theta, weight, tol, cfg.max_iters - used)
            theta, used = stage.point, used + stage.iterations
            traces.append(tuple(stage.trace))
            logger.debug(
                f"k={k} λ={lam:.3g}: barrier {weight:g} took {stage.iterations} Newton steps "
                f"(converged={stage.converged})"
            )

        last = cfg.barrier_weights[-1]
        settled, steps = self._settle_on_floor(corner, theta, last, cfg.max_iters - used)
        used += steps
        if settled is None:
            logger.warning(
                f"k={k} λ={lam:.3g}: active-set stage did not settle; keeping the barrier iterate"
            )
            slack = max(ACTIVE_FLOOR_TOL, BARRIER_PIN_FACTOR * last / lam)
            return _Outcome(corner.lift @ theta, used, False, traces, slack)
        logger.debug(f"k={k} λ={lam:.3g}: active-set stage took {steps} steps")
        return _Outcome(corner.lift @ settled, used, True, traces, ACTIVE_FLOOR_TOL)

    def _fit_first_order(self, problem: FitProblem, k: int, lam: float) -> _Outcome:
        cfg = self.cfg
        f = np.zeros(problem.basis.dimension)
        used, converged, traces = 0, False, []
        for i, weight in enumerate(cfg.barrier_weights):
            tol = self._stage_tol(i, weight)
            stage = self._descend(problem, f, weight, tol, cfg.max_iters - used, guard_floor=False)
            f, used = stage.point, used + stage.iterations
            traces.append(tuple(stage.trace))
            converged = stage.converged
            logger.debug(
                f"k={k} λ={lam:.3g}: barrier {weight:g} took {stage.iterations} steps "
                f"(converged={stage.converged})"
            )

        if cfg.polish and used < cfg.max_iters:
            _, _, log_p = problem.evaluate(f, 0.0)
            if float(log_p.min()) - problem.log_lam >= POLISH_MARGIN:
                stage = self._descend(problem, f, 0.0, cfg.grad_tol, cfg.max_iters - used, guard_floor=True)
                f, used = stage.point, used + stage.iterations
                traces.append(tuple(stage.trace))
                logger.debug(f"k={k} λ={lam:.3g}: polish took {stage.iterations} steps")
                return _Outcome(f, used, converged or stage.converged, traces, ACTIVE_FLOOR_TOL)

        slack = max(ACTIVE_FLOOR_TOL, BARRIER_PIN_FACTOR * cfg.barrier_weights[-1] / lam)
        return _Outcome(f, used, converged, traces, slack)

    def _newton_descend(
        self, problem: CornerProblem, theta: np.ndarray, weight: float, tol: float, budget: int
    ) -> _Stage:
        """Damped Newton steps with Armijo backtracking, stopped on the Newton decrement."""
        cfg = self.cfg
        value, grad, log_p = problem.evaluate(theta, weight)
        trace = [value]
        iterations = 0

        while iterations < budget:
            direction = _newton_direction(problem.hessian(log_p, weight), grad)
            decrement = float(-grad @ direction)
            if np.abs(grad).max() <= tol or decrement / 2 <= NEWTON_GAP * max(1.0, abs(value)):
                return _Stage(theta, iterations, True, trace)

            resolution = 8 * np.finfo(float).eps * max(1.0, abs(value))
            t = 1.0
            while True:
                candidate = theta + t * direction
                try:
                    c_value, c_grad, c_log_p = problem.evaluate(candidate, weight)
                except BarrierDomainError:
                    c_value = math.inf
                if math.isfinite(c_value) and (
                    c_value <= value - cfg.sufficient_decrease * t * decrement
                    or (t * decrement < resolution and c_value <= value)
                ):
                    break
                t *= cfg.shrink
                if t < MIN_STEP:
                    return _Stage(theta, iterations, False, trace)

            theta, value, grad, log_p = candidate, c_value, c_grad, c_log_p
            iterations += 1
            trace.append(value)

        return _Stage(theta, iterations, bool(np.abs(grad).max() <= tol), trace)

    def _settle_on_floor(
        self, problem: CornerProblem, theta: np.ndarray, weight: float, budget: int
    ) -> Tuple[Optional[np.ndarray], int]:
        """Active-set refinement from the last barrier iterate to the exact floored optimum.

        The barrier iterate holds ln P(x) - ln λ ≈ w / μ_x, so states close to the floor seed
        the active set and w / margin seeds their multipliers. Inactive states that cross the
        floor are added; the state with the most negative multiplier is released. Returns None
        when no active set passes the KKT checks.
        """
        start_value, _, log_p = problem.evaluate(theta, 0.0)
        start = problem.margins(log_p)
        guess = min(1.0, max(ACTIVE_FLOOR_TOL, BARRIER_PIN_FACTOR * weight / problem.problem.lam))
        active = start <= guess
        seen, used = set(), 0

        for _ in range(MAX_ACTIVE_ROUNDS):
            key = active.tobytes()
            if key in seen:
                break
            seen.add(key)
            face = self._solve_face(problem, theta, active, weight / start[active], budget - used)
            used += face.steps
            if face.status == "violated":
                active = active | (face.margins < -FEASIBILITY_TOL)
                continue
            if face.status != "solved":
                break
            if face.multipliers.size and face.multipliers.min() < -MULTIPLIER_TOL:
                active = active.copy()
                active[np.flatnonzero(active)[np.argmin(face.multipliers)]] = False
                continue
            value, _, _ = problem.evaluate(face.theta, 0.0)
            if value > start_value + 1e-12 * max(1.0, abs(start_value)):
                break
            return face.theta, used
        return None, used

    def _solve_face(
        self,
        problem: CornerProblem,
        theta: np.ndarray,
        active: np.ndarray,
        multipliers: np.ndarray,
        budget: int,
    ) -> _Face:
        """Newton-KKT iterations for min L(θ) subject to ln P(x) = ln λ on every active state."""
        index = np.flatnonzero(active)
        dim = problem.dimension
        steps = 0
        while True:
            _, grad, log_p = problem.evaluate(theta, 0.0)
            margins = problem.margins(log_p)
            if np.any(margins[~active] < -FEASIBILITY_TOL):
                return _Face(theta, multipliers, steps, "violated", margins)

            centered, cov = problem.curvature(log_p)
            jacobian = centered[index]
            residual = grad - jacobian.T @ multipliers
            if (
                np.abs(residual).max() <= self.cfg.grad_tol
                and np.abs(margins[index]).max(initial=0.0) <= FACE_PRIMAL_TOL
            ):
                return _Face(theta, multipliers, steps, "solved", margins)
            if steps >= min(budget, FACE_MAX_STEPS):
                return _Face(theta, multipliers, steps, "failed", margins)

            kkt = np.block(
                [
                    [(1.0 + multipliers.sum()) * cov, -jacobian.T],
                    [jacobian, np.zeros((index.size, index.size))],
                ]
            )
            solution = np.linalg.lstsq(kkt, np.concatenate([-grad, -margins[index]]), rcond=None)[0]
            if not np.all(np.isfinite(solution)):
                return _Face(theta, multipliers, steps, "failed", margins)
            theta = theta + solution[:dim]
            multipliers = solution[dim:]
            steps += 1

    def _descend(
        self, problem: FitProblem, f: np.ndarray, weight: float, tol: float, budget: int, guard_floor: bool
    ) -> _Stage:
        """Gradient descent from a Barzilai-Borwein trial step with Armijo backtracking."""
        cfg = self.cfg
        value, grad, _ = problem.evaluate(f, weight)
        trace = [value]
        step, prev_f, prev_grad = 1.0, None, None
        iterations = 0

        while iterations < budget:
            if np.abs(grad).max() <= tol:
                return _Stage(f, iterations, True, trace)
            if prev_f is not None:
                s, y = f - prev_f, grad - prev_grad
                sy = float(s @ y)
                if sy > 0:
                    step = min(max(float(s @ s) / sy, MIN_STEP), MAX_STEP)

            g2 = float(grad @ grad)
            # below this predicted decrease the objective no longer resolves progress
            resolution = 8 * np.finfo(float).eps * max(1.0, abs(value))
            t = step
            while True:
                candidate = f - t * grad
                accepted = False
                try:
                    c_value, c_grad, c_log_p = problem.evaluate(candidate, weight)
                except BarrierDomainError:
                    c_value = math.inf
                if math.isfinite(c_value) and not (
                    guard_floor and float(c_log_p.min()) < problem.log_lam
                ):
                    if c_value <= value - cfg.sufficient_decrease * t * g2:
                        accepted = True
                    elif t * g2 < resolution:
                        accepted = c_value <= value and np.abs(c_grad).max() < np.abs(grad).max()
                if accepted:
                    break
                t *= cfg.shrink
                if t < MIN_STEP:
                    return _Stage(f, iterations, False, trace)

            prev_f, prev_grad = f, grad
            f, value, grad = candidate, c_value, c_grad
            step = t
            iterations += 1
            trace.append(value)

        return _Stage(f, iterations, bool(np.abs(grad).max() <= tol), trace)


def fit(d: Dataset, k: int, lam: float, cfg: Optional[FitConfig] = None) -> FitResult:
    return LogLinearFitter(cfg).fit(d, k, lam)


def fit_closed_form_independent(d: Dataset) -> LogLinearModel:
    """Independence model built from the empirical marginals."""
    counts = d.dense_counts().reshape(tuple(reversed(d.alphabet.sizes)))
    marginals = []
    for i, name in enumerate(d.alphabet.names):
        axis = d.alphabet.n - 1 - i
        marginal = counts.sum(axis=tuple(a for a in range(counts.ndim) if a != axis)).astype(np.float64)
        if np.any(marginal == 0):
            raise ZeroMarginalError(
                f"variable {name} has an unobserved category; fit it with a floor instead"
            )
        marginals.append(marginal / d.l)
    return model_from_marginals(d.alphabet, marginals)


def evaluate_model(d: Dataset, model: LogLinearModel) -> FitResult:
    """Score an externally supplied model on a dataset without refitting."""
    if d.alphabet != model.alphabet:
        raise DomainError("dataset and model are defined over different alphabets")
    margin = log_probabilities(model) - math.log(model.lam)
    return FitResult(
        model=model,
        r_emp=empirical_risk(d, to_table(model)),
        iterations=0,
        converged=True,
        active_floor_states=int(np.count_nonzero(margin <= ACTIVE_FLOOR_TOL)),
    )
