import math

import numpy as np
import pytest

from e2m.divergence import (
    alpha_divergence,
    cross_entropy,
    negative_log_likelihood,
    objective_L,
)
from e2m.errors import DomainError
from e2m.tensors import build_empirical

# Frozen by direct float64 evaluation of the defining formulas for
# T = [0.5, 0.5], P = [0.25, 0.75] (cross-checked at 40-digit precision).
DIV_HALF = 0.1362966948437263
OBJ_HALF = 0.06933646419507362
KL_VALUE = 0.14384103622589042
CE_VALUE = 0.8369882167858358


def _two_cell():
    T = build_empirical([(0,), (1,)], (2,))
    p = np.array([0.25, 0.75])
    return T, p


class TestAlphaDivergence:
    def test_zero_for_identical(self):
        T = build_empirical([(0,), (0,), (1,), (1,)], (2,))
        assert alpha_divergence(T, T.weights, 0.5) == pytest.approx(0.0, abs=1e-10)

    def test_half_alpha_value(self):
        T, p = _two_cell()
        value = alpha_divergence(T, p, 0.5)
        assert value == pytest.approx(DIV_HALF, abs=1e-12)
        assert value == pytest.approx(0.13629, abs=1e-5)

    def test_kl_branch(self):
        T, p = _two_cell()
        assert alpha_divergence(T, p, 1.0) == pytest.approx(KL_VALUE, abs=1e-12)

    def test_nonnegative_on_random_instances(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = rng.integers(2, 9)
            samples = [(i,) for i in range(n) for _ in range(rng.integers(1, 5))]
            T = build_empirical(samples, (int(n),))
            p = rng.uniform(0.05, 1.0, size=T.nnz)
            p /= p.sum()
            alpha = float(rng.uniform(0.05, 1.0))
            assert alpha_divergence(T, p, alpha) >= -1e-12

    def test_zero_model_value_rejected(self):
        T, _ = _two_cell()
        with pytest.raises(DomainError, match="zero mass"):
            alpha_divergence(T, np.array([0.0, 1.0]), 0.5)

    def test_alpha_out_of_range(self):
        T, p = _two_cell()
        for bad in (0.0, -0.3, 1.5):
            with pytest.raises(DomainError):
                alpha_divergence(T, p, bad)


class TestObjective:
    def test_zero_for_identical(self):
        T = build_empirical([(0,), (1,), (1,), (1,)], (2,))
        assert objective_L(T, T.weights, 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_half_alpha_value(self):
        T, p = _two_cell()
        value = objective_L(T, p, 0.5)
        assert value == pytest.approx(OBJ_HALF, abs=1e-12)
        # the closest 6-decimal rounding of the directly evaluated formula
        assert value == pytest.approx(0.069336, abs=1e-6)

    def test_alpha_one_is_cross_entropy(self):
        T, p = _two_cell()
        assert objective_L(T, p, 1.0) == pytest.approx(CE_VALUE, abs=1e-12)

    def test_continuity_at_alpha_one(self):
        # The alpha->1 limit of the surrogate is the KL divergence, which is
        # the alpha=1 branch minus the (fixed) empirical entropy.
        T, p = _two_cell()
        near_one = objective_L(T, p, 1.0 - 1e-7)
        entropy = -float(np.sum(T.weights * np.log(T.weights)))
        assert near_one == pytest.approx(KL_VALUE, abs=1e-6)
        assert near_one == pytest.approx(
            objective_L(T, p, 1.0) - entropy, abs=1e-6
        )

    def test_enumeration_order_invariance(self):
        from e2m.divergence import log_power_sum

        rng = np.random.default_rng(8)
        w = rng.uniform(0.01, 1.0, size=50)
        w /= w.sum()
        p = rng.uniform(0.01, 1.0, size=50)
        p /= p.sum()
        base = log_power_sum(w, p, 0.7)
        for _ in range(5):
            order = rng.permutation(50)
            assert log_power_sum(w[order], p[order], 0.7) == pytest.approx(
                base, abs=1e-14
            )

    def test_monotone_link_with_divergence(self):
        rng = np.random.default_rng(21)
        T = build_empirical([(i,) for i in range(6) for _ in range(i + 1)], (6,))
        for _ in range(30):
            p1 = rng.uniform(0.05, 1.0, size=6)
            p1 /= p1.sum()
            p2 = rng.uniform(0.05, 1.0, size=6)
            p2 /= p2.sum()
            alpha = float(rng.choice([0.2, 0.5, 0.8]))
            dd = alpha_divergence(T, p1, alpha) - alpha_divergence(T, p2, alpha)
            dl = objective_L(T, p1, alpha) - objective_L(T, p2, alpha)
            assert np.sign(dd) == np.sign(dl) or abs(dd) < 1e-13


class TestCrossEntropy:
    def test_point_mass(self):
        assert cross_entropy(np.array([1.0]), np.array([0.0])) == 0.0

    def test_two_cell(self):
        value = cross_entropy(
            np.array([0.5, 0.5]), np.log(np.array([0.25, 0.75]))
        )
        assert value == pytest.approx(CE_VALUE, abs=1e-12)

    def test_linearity_in_weights(self):
        rng = np.random.default_rng(5)
        w = rng.uniform(size=8)
        lv = np.log(rng.uniform(0.1, 1.0, size=8))
        for c in (0.25, 0.5, 2.0):
            assert cross_entropy(c * w, lv) == pytest.approx(
                c * cross_entropy(w, lv), rel=1e-12
            )


class TestNegativeLogLikelihood:
    def test_uniform_model(self):
        samples = np.array([[0, 0], [1, 1], [0, 1]])
        result = negative_log_likelihood(
            lambda idx: np.full(len(idx), 0.25), samples
        )
        assert result.per_sample == pytest.approx(math.log(4), abs=1e-12)
        assert result.total == pytest.approx(3 * math.log(4), abs=1e-12)

    def test_empirical_model_gives_entropy(self):
        samples = [(0,), (0,), (0,), (1,)]
        T = build_empirical(samples, (2,))
        weights = {tuple(r): w for r, w in zip(T.indices, T.weights)}

        def model(idx):
            return np.array([weights[tuple(row)] for row in idx])

        result = negative_log_likelihood(model, np.array(samples))
        entropy = -sum(w * math.log(w) for w in weights.values())
        assert result.per_sample == pytest.approx(entropy, abs=1e-12)

    def test_zero_mass_reports_sample(self):
        with pytest.raises(DomainError, match=r"\(1, 0\)"):
            negative_log_likelihood(
                lambda idx: np.where(idx[:, 0] == 1, 0.0, 0.5),
                np.array([[0, 0], [1, 0]]),
            )
