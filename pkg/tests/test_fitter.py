import math

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import logsumexp

from app.errors import BarrierDomainError, InfeasibleFloorError, ZeroMarginalError
from app.models.alphabet import Alphabet, Dataset
from app.models.selection import FitConfig
from app.services.fitter import (
    LogLinearFitter,
    evaluate_model,
    fit,
    fit_closed_form_independent,
    objective_and_gradient,
)
from app.services.information import empirical_distribution, empirical_risk, entropy, state_matrix
from app.services.loglin import (
    build_basis,
    corner_design,
    feature_totals,
    min_log_prob,
    model_from_marginals,
    sample,
    to_table,
)


def _total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(p - q).sum())


def _permute_variables(d: Dataset, order) -> Dataset:
    """Relabel variables so that new variable i is old variable order[i]."""
    old = d.alphabet
    alphabet = Alphabet(
        sizes=tuple(old.sizes[i] for i in order),
        names=tuple(old.names[i] for i in order),
        value_labels=tuple(old.value_labels[i] for i in order),
    )
    states = state_matrix(old)[:, list(order)]
    index = (states * np.array(alphabet.strides)).sum(axis=1)
    dense = np.zeros(alphabet.n_states, dtype=np.int64)
    dense[index] = d.dense_counts()
    return Dataset.from_dense(alphabet, dense)


def _floored_empirical(q: np.ndarray, lam: float) -> np.ndarray:
    """argmax Σ q log p over tables with p >= λ: p = max(λ, q / ν) with ν fixing the total."""
    pinned = np.zeros(q.shape, dtype=bool)
    while True:
        scale = (1 - lam * pinned.sum()) / q[~pinned].sum()
        newly = ~pinned & (q * scale < lam)
        if not newly.any():
            return np.where(pinned, lam, q * scale)
        pinned |= newly


def _constrained_oracle(d: Dataset, k: int, lam: float) -> float:
    """Floored empirical risk from a general-purpose SLSQP solve in identifiable coordinates."""
    design, _ = corner_design(build_basis(d.alphabet, k))
    counts = d.dense_counts() / d.l

    def log_p(theta):
        s = design @ theta
        return s - logsumexp(s)

    def objective(theta):
        return -float(counts @ log_p(theta))

    def gradient(theta):
        return design.T @ np.exp(log_p(theta)) - design.T @ counts

    def margin_jacobian(theta):
        return design - np.exp(log_p(theta)) @ design

    solution = minimize(
        objective,
        np.zeros(design.shape[1]),
        jac=gradient,
        method="SLSQP",
        constraints=[{"type": "ineq", "fun": lambda t: log_p(t) - math.log(lam), "jac": margin_jacobian}],
        options={"ftol": 1e-14, "maxiter": 1000},
    )
    assert log_p(solution.x).min() >= math.log(lam) - 1e-8
    return float(solution.fun)


def _central_difference(func, f: np.ndarray, step: float = 1e-5) -> np.ndarray:
    grad = np.empty_like(f)
    for i in range(f.shape[0]):
        e = np.zeros_like(f)
        e[i] = step
        grad[i] = (func(f + e) - func(f - e)) / (2 * step)
    return grad


@pytest.fixture
def product_data(rng):
    """Draws from a product distribution whose marginals stay well away from zero."""

    def make(alphabet: Alphabet, l: int) -> Dataset:
        marginals = [0.5 * rng.dirichlet(np.full(m, 5.0)) + 0.5 / m for m in alphabet.sizes]
        model = model_from_marginals(alphabet, marginals)
        return sample(model, l, seed=int(rng.integers(2**31)))

    return make


def test_gradient_at_uniform_start_is_moment_gap(binary3, random_dataset, rng):
    d = random_dataset(binary3, 40, rng)
    basis = build_basis(binary3, 2)
    _, grad = objective_and_gradient(np.zeros(basis.dimension), d, basis, 0.0, 0.01)
    uniform_mean = feature_totals(np.full(8, 1 / 8), basis)
    empirical_mean = feature_totals(d.dense_counts().astype(float), basis) / d.l
    np.testing.assert_allclose(grad, uniform_mean - empirical_mean, atol=1e-15)


@pytest.mark.parametrize("barrier_weight", [0.0, 1.0, 1e-2])
def test_gradient_matches_central_differences(barrier_weight, random_dataset, rng):
    alphabet = Alphabet.from_sizes((2, 3, 2))
    lam = 0.1 / alphabet.n_states
    for k in (1, 2):
        basis = build_basis(alphabet, k)
        for _ in range(10):
            d = random_dataset(alphabet, 30, rng)
            f = 0.3 * rng.normal(size=basis.dimension)
            _, grad = objective_and_gradient(f, d, basis, barrier_weight, lam)
            numeric = _central_difference(
                lambda x: objective_and_gradient(x, d, basis, barrier_weight, lam)[0], f
            )
            assert np.linalg.norm(numeric - grad) <= 1e-6 * max(1.0, np.linalg.norm(grad))


def test_objective_is_midpoint_convex(binary3, random_dataset, rng):
    basis = build_basis(binary3, 2)
    d = random_dataset(binary3, 50, rng)
    for _ in range(20):
        f1, f2 = rng.normal(size=(2, basis.dimension))
        v1, _ = objective_and_gradient(f1, d, basis, 0.0, 0.01)
        v2, _ = objective_and_gradient(f2, d, basis, 0.0, 0.01)
        vm, _ = objective_and_gradient((f1 + f2) / 2, d, basis, 0.0, 0.01)
        assert vm <= (v1 + v2) / 2 + 1e-12


def test_barrier_outside_floor_region_signals(binary3, random_dataset, rng):
    basis = build_basis(binary3, 1)
    f = np.zeros(basis.dimension)
    f[0] = 10.0
    with pytest.raises(BarrierDomainError):
        objective_and_gradient(f, random_dataset(binary3, 20, rng), basis, 1.0, 0.1)


def test_independent_fit_matches_closed_form(product_data, rng):
    fits = 0
    while fits < 25:
        n = int(rng.integers(1, 5))
        alphabet = Alphabet.from_sizes(tuple(int(m) for m in rng.integers(2, 4, size=n)))
        d = product_data(alphabet, [50, 500][fits % 2])
        try:
            oracle = to_table(fit_closed_form_independent(d))
        except ZeroMarginalError:
            continue
        result = fit(d, 1, 1e-12 / alphabet.n_states)
        assert _total_variation(to_table(result.model).probs, oracle.probs) <= 1e-5
        fits += 1


def test_saturated_fit_reproduces_empirical_table(rng):
    for sizes in [(2, 2), (2, 2, 2), (3, 2)]:
        alphabet = Alphabet.from_sizes(sizes)
        d = Dataset.from_dense(alphabet, rng.integers(1, 30, size=alphabet.n_states))
        result = fit(d, alphabet.n, 1e-12 / alphabet.n_states)
        expected = empirical_distribution(d).probs
        assert _total_variation(to_table(result.model).probs, expected) <= 1e-5
        assert result.r_emp == pytest.approx(entropy(empirical_distribution(d)), abs=1e-8)


def test_fitted_models_are_normalized_and_floored(binary3, random_dataset, rng):
    sparse = Dataset(alphabet=binary3, counts={0: 9, 7: 11})
    cases = [(random_dataset(binary3, 60, rng), k, lam) for k in (1, 2, 3) for lam in (0.1, 0.01)]
    cases += [(sparse, 3, 0.01), (sparse, 2, 0.05)]
    for d, k, lam in cases:
        result = fit(d, k, lam)
        probs = to_table(result.model).probs
        assert abs(probs.sum() - 1) <= 1e-8
        assert probs.min() >= lam * (1 - 1e-6)
        assert min_log_prob(result.model) >= math.log(lam) - 1e-6
        assert result.r_emp == pytest.approx(empirical_risk(d, to_table(result.model)), abs=1e-10)
        assert result.r_emp <= math.log(8) + 1e-9


def test_active_floor_is_reported(binary3):
    d = Dataset(alphabet=binary3, counts={0: 10, 7: 10})
    result = fit(d, 3, 0.01)
    assert result.converged
    assert result.active_floor_states == 6
    assert result.r_emp == pytest.approx(-math.log((1 - 6 * 0.01) / 2), abs=1e-9)
    assert min_log_prob(result.model) == pytest.approx(math.log(0.01), abs=1e-9)


def test_interior_optimum_matches_moments(binary3, product_data):
    d = product_data(binary3, 500)
    result = fit(d, 2, 1e-9)
    assert result.active_floor_states == 0
    basis = result.model.basis
    expected = feature_totals(to_table(result.model).probs, basis)
    empirical = feature_totals(d.dense_counts().astype(float), basis) / d.l
    np.testing.assert_allclose(expected, empirical, atol=1e-6)


@pytest.mark.parametrize("second_order_max_params", [0, 1024])
def test_descent_is_monotone_within_each_stage(second_order_max_params, binary3, random_dataset, rng):
    d = random_dataset(binary3, 80, rng)
    cfg = FitConfig(record_trace=True, second_order_max_params=second_order_max_params)
    result = fit(d, 2, 0.01, cfg)
    assert len(result.objective_trace) >= 4
    for trace in result.objective_trace:
        assert np.all(np.diff(trace) <= 0)


def test_fit_is_deterministic(binary4, random_dataset, rng):
    d = random_dataset(binary4, 200, rng)
    first, second = fit(d, 2, 1e-3), fit(d, 2, 1e-3)
    assert np.array_equal(first.model.f, second.model.f)
    assert first.iterations == second.iterations


def test_smaller_floor_never_raises_empirical_risk(binary3):
    d = Dataset(alphabet=binary3, counts={0: 12, 3: 5, 7: 9})
    risks = [fit(d, 3, lam).r_emp for lam in (0.1, 0.05, 0.01, 0.001)]
    assert all(b <= a + 1e-6 for a, b in zip(risks, risks[1:]))


def test_larger_degree_never_raises_empirical_risk(binary4, random_dataset, rng):
    d = random_dataset(binary4, 150, rng)
    risks = [fit(d, k, 1e-3).r_emp for k in range(1, 5)]
    assert all(b <= a + 1e-8 for a, b in zip(risks, risks[1:]))


def test_permuting_variables_permutes_the_fit(rng):
    alphabet = Alphabet.from_sizes((2, 3, 2))
    probs = 0.5 * rng.dirichlet(np.full(alphabet.n_states, 5.0)) + 0.5 / alphabet.n_states
    d = Dataset.from_dense(alphabet, rng.multinomial(2000, probs))
    order = (2, 0, 1)
    moved = _permute_variables(d, order)

    old_states = state_matrix(alphabet)
    new_index = (old_states[:, list(order)] * np.array(moved.alphabet.strides)).sum(axis=1)
    for k in (1, 2):
        original = to_table(fit(d, k, 1e-6).model).probs
        permuted = to_table(fit(moved, k, 1e-6).model).probs
        np.testing.assert_allclose(permuted[new_index], original, atol=1e-6)


def test_floor_must_be_strictly_feasible(binary3, random_dataset, rng):
    d = random_dataset(binary3, 30, rng)
    with pytest.raises(InfeasibleFloorError):
        fit(d, 1, 1 / 8)
    with pytest.raises(InfeasibleFloorError):
        fit(d, 1, 0.0)


def test_uniform_data_fits_near_uniform():
    alphabet = Alphabet.from_sizes((2, 2))
    d = Dataset.from_dense(alphabet, [250, 250, 250, 250])
    for k in (1, 2):
        np.testing.assert_allclose(to_table(fit(d, k, 0.01).model).probs, 0.25, atol=1e-6)


def test_closed_form_examples():
    alphabet = Alphabet.from_sizes((2, 2))
    d = Dataset.from_dense(alphabet, [2, 3, 2, 3])
    model = fit_closed_form_independent(d)
    np.testing.assert_allclose(to_table(model).probs, [0.2, 0.3, 0.2, 0.3], atol=1e-12)
    assert empirical_risk(d, to_table(model)) == pytest.approx(
        entropy(empirical_distribution(d)), abs=1e-12
    )

    single = Alphabet.from_sizes((3,))
    d = Dataset.from_dense(single, [1, 2, 7])
    np.testing.assert_allclose(to_table(fit_closed_form_independent(d)).probs, [0.1, 0.2, 0.7])

    with pytest.raises(ZeroMarginalError):
        fit_closed_form_independent(Dataset(alphabet=alphabet, counts={0: 5}))


def test_evaluate_model_scores_without_fitting(binary3):
    d = Dataset(alphabet=binary3, counts={0: 3, 5: 1})
    model = model_from_marginals(binary3, [[0.5, 0.5]] * 3)
    result = evaluate_model(d, model)
    assert result.iterations == 0
    assert result.r_emp == pytest.approx(math.log(8))


def test_saturated_fit_fills_the_floor_exactly(binary4):
    d = Dataset(alphabet=binary4, counts={0: 50})
    result = fit(d, 4, 1e-3)
    assert result.converged
    assert result.active_floor_states == 15
    assert result.r_emp == pytest.approx(-math.log(1 - 15e-3), abs=1e-9)
    assert result.r_emp == pytest.approx(0.0151136378, abs=1e-9)


@pytest.mark.parametrize("sizes, lam", [((2, 2, 2), 0.02), ((2, 3), 0.05), ((3, 3), 0.01)])
def test_saturated_fit_matches_water_filling(sizes, lam, rng):
    alphabet = Alphabet.from_sizes(sizes)
    for _ in range(5):
        counts = rng.integers(0, 20, size=alphabet.n_states) * (rng.random(alphabet.n_states) < 0.6)
        counts[0] += 1
        d = Dataset.from_dense(alphabet, counts)
        q = d.dense_counts() / d.l
        expected = _floored_empirical(q, lam)

        result = fit(d, alphabet.n, lam)
        assert result.converged
        np.testing.assert_allclose(to_table(result.model).probs, expected, atol=1e-7)
        optimum = -float(q[q > 0] @ np.log(expected[q > 0]))
        assert result.r_emp == pytest.approx(optimum, abs=1e-9)
        assert result.active_floor_states == int(np.count_nonzero(expected == lam))


@pytest.mark.parametrize(
    "counts, lam",
    [
        ({0: 30, 3: 10, 5: 12, 6: 8, 7: 1}, 0.0625),
        ({0: 40, 1: 2, 6: 25, 7: 9}, 0.05),
        ({2: 7, 4: 19, 5: 3}, 0.02),
    ],
)
def test_pairwise_fit_matches_general_constrained_solver(binary3, counts, lam):
    d = Dataset(alphabet=binary3, counts=counts)
    result = fit(d, 2, lam)
    assert result.converged
    assert min_log_prob(result.model) >= math.log(lam) - 1e-9
    assert result.r_emp == pytest.approx(_constrained_oracle(d, 2, lam), abs=1e-6)


def test_first_and_second_order_paths_agree(binary3, product_data):
    d = product_data(binary3, 400)
    newton = fit(d, 2, 1e-6)
    gradient = fit(d, 2, 1e-6, FitConfig(second_order_max_params=0))
    assert newton.converged
    np.testing.assert_allclose(to_table(newton.model).probs, to_table(gradient.model).probs, atol=1e-5)


def test_second_order_threshold(binary3):
    fitter = LogLinearFitter(FitConfig(second_order_max_params=3))
    assert fitter.uses_second_order(build_basis(binary3, 1))
    assert not fitter.uses_second_order(build_basis(binary3, 2))
    assert not LogLinearFitter(FitConfig(second_order_max_params=0)).uses_second_order(build_basis(binary3, 1))
