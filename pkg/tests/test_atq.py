import numpy as np
import pytest

from ternpack import (
    AtqState,
    CalibrationError,
    aga_align,
    flexible_round,
    itf,
    optimal_grid,
    quantize_tile,
    ternary_init,
)
from ternpack.atq import tile_output_error, tile_weight_error


def solve_grid_oracle(w_row, t_row):
    """Independent 2x2 normal-equation solve for one row."""
    t = t_row.astype(float)
    g = len(t)
    A = np.array([[t @ t, t.sum()], [t.sum(), g]])
    b = np.array([w_row @ t, w_row.sum()])
    return np.linalg.solve(A, b)


def solve_weighted_oracle(w_row, t_row, gram):
    """Weighted least squares for [t, 1] under the metric induced by gram."""
    design = np.stack([t_row.astype(float), np.ones(len(t_row))], axis=1)
    lhs = design.T @ gram @ design
    rhs = design.T @ gram @ w_row
    return np.linalg.solve(lhs, rhs)


def random_psd(rng, g, rank=None):
    q = rng.normal(size=(rank or g + 2, g))
    return q.T @ q


class TestTernaryInit:
    def test_hand_evaluated_row(self):
        alpha, mu, trits = ternary_init(np.array([[1.0, -1.0, 0.1, -0.1]]))
        assert mu[0] == 0.0
        # delta = 0.75 * mean(|w|) = 0.4125: only +-1.0 exceed it
        np.testing.assert_array_equal(trits, [[1, -1, 0, 0]])
        assert alpha[0] == 1.0

    def test_constant_row_is_exact(self):
        alpha, mu, trits = ternary_init(np.array([[2.0, 2.0, 2.0, 2.0]]))
        assert mu[0] == 2.0 and alpha[0] == 0.0
        np.testing.assert_array_equal(trits, [[0, 0, 0, 0]])
        assert tile_weight_error(np.full((1, 4), 2.0), alpha, mu, trits) == 0.0

    @pytest.mark.parametrize("c", [0.3, 1.0, 7.5])
    def test_symmetric_pair_is_exact(self, c):
        w = np.array([[c, -c]])
        alpha, mu, trits = ternary_init(w)
        assert mu[0] == 0.0 and alpha[0] == pytest.approx(c, rel=1e-15)
        np.testing.assert_array_equal(trits, [[1, -1]])
        assert tile_weight_error(w, alpha, mu, trits) <= 1e-28

    def test_threshold_boundary_maps_to_zero(self):
        # |w - mu| == delta is inside the zero band
        w = np.array([[1.0, -1.0, 0.0, 0.0]])  # delta = 0.375
        alpha, mu, trits = ternary_init(w)
        np.testing.assert_array_equal(trits, [[1, -1, 0, 0]])


class TestOptimalGrid:
    def test_exact_affine_row(self):
        alpha, mu = optimal_grid(np.array([[3.0, 1.0, -1.0]]),
                                 np.array([[1, 0, -1]], dtype=np.int8))
        assert alpha[0] == pytest.approx(2.0, abs=1e-15)
        assert mu[0] == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_linear_solver_oracle(self, seed):
        rng = np.random.default_rng(seed)
        g = int(rng.integers(3, 40))
        w = rng.normal(size=(12, g))
        trits = rng.integers(-1, 2, size=(12, g)).astype(np.int8)
        # ensure mixed trits per row
        trits[:, 0], trits[:, 1] = 1, -1
        alpha, mu = optimal_grid(w, trits)
        for i in range(12):
            a_ref, m_ref = solve_grid_oracle(w[i], trits[i])
            assert alpha[i] == pytest.approx(a_ref, rel=1e-9)
            assert mu[i] == pytest.approx(m_ref, rel=1e-9)

    def test_all_zero_trits_fallback(self):
        w = np.array([[4.0, 6.0]])
        alpha, mu = optimal_grid(w, np.zeros((1, 2), np.int8))
        assert alpha[0] == 0.0 and mu[0] == 5.0
        alpha, mu = optimal_grid(w, np.zeros((1, 2), np.int8),
                                 alpha_prev=np.array([1.25]))
        assert alpha[0] == 1.25 and mu[0] == 5.0

    def test_uniform_nonzero_trits_reset(self):
        w = np.array([[4.0, 6.0]])
        trits = np.ones((1, 2), dtype=np.int8)
        alpha, mu = optimal_grid(w, trits)
        assert alpha[0] == 0.0 and mu[0] == 5.0
        np.testing.assert_array_equal(trits, [[0, 0]])  # reset in place

    @pytest.mark.parametrize("seed", range(4))
    def test_finite_difference_optimality(self, seed):
        rng = np.random.default_rng(100 + seed)
        w = rng.normal(size=(6, 24))
        trits = rng.integers(-1, 2, size=(6, 24)).astype(np.int8)
        trits[:, 0], trits[:, 1] = 1, -1
        alpha, mu = optimal_grid(w, trits)
        e0 = tile_weight_error(w, alpha, mu, trits)
        eps = 1e-6
        for da, dm in ((eps, 0), (-eps, 0), (0, eps), (0, -eps)):
            e = tile_weight_error(w, alpha + da, mu + dm, trits)
            assert e >= e0 - 1e-12 * max(e0, 1.0)


class TestFlexibleRound:
    def test_forced_examples(self):
        alpha = np.array([1.0])
        mu = np.array([0.0])
        assert flexible_round(np.array([[0.6]]), alpha, mu)[0, 0] == 1
        assert flexible_round(np.array([[-0.45]]), alpha, mu)[0, 0] == 0

    def test_tie_at_half_goes_to_zero(self):
        alpha = np.array([1.0])
        mu = np.array([0.0])
        assert flexible_round(np.array([[0.5]]), alpha, mu)[0, 0] == 0
        assert flexible_round(np.array([[-0.5]]), alpha, mu)[0, 0] == 0

    def test_zero_alpha_rows_give_zero_trits(self):
        got = flexible_round(np.array([[5.0, -9.0]]), np.array([0.0]),
                             np.array([1.0]))
        np.testing.assert_array_equal(got, [[0, 0]])

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_bruteforce_argmin(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.normal(size=(8, 50)) * 3
        alpha = np.abs(rng.normal(size=8)) + 0.1
        mu = rng.normal(size=8)
        got = flexible_round(w, alpha, mu)
        z = (w - mu[:, None]) / alpha[:, None]
        # candidate order (0, -1, 1): ties involving 0 resolve to 0
        cands = np.array([0.0, -1.0, 1.0])
        pick = np.argmin(np.abs(z[..., None] - cands), axis=-1)
        ref = cands[pick].astype(np.int8)
        np.testing.assert_array_equal(got, ref)

    def test_negative_alpha_still_argmin(self):
        w = np.array([[0.9, -0.9, 0.2]])
        alpha = np.array([-1.0])
        mu = np.array([0.0])
        got = flexible_round(w, alpha, mu)
        # z = [-0.9, 0.9, -0.2]: nearest trits are [-1, 1, 0]
        np.testing.assert_array_equal(got, [[-1, 1, 0]])


class TestItf:
    def test_representable_tile_converges_exactly(self):
        # balanced trit mix: init recovers the classes, first solve is exact
        rng = np.random.default_rng(5)
        trits = rng.permuted(np.tile(np.array([-1, 0, 1], np.int8), (4, 8)), axis=1)
        w = 1.5 * trits + 0.25
        state = itf(AtqState.initialize(w))
        assert state.converged and state.iteration <= 2
        assert state.e_w <= 1e-24

    def test_error_trace_monotone_non_increasing(self):
        rng = np.random.default_rng(7)
        w = rng.normal(size=(4, 16)) + rng.normal(size=(4, 1))
        state = itf(AtqState.initialize(w))
        trace = np.asarray(state.e_w_trace)
        assert ((trace[1:] - trace[:-1]) <= 1e-12 * np.maximum(trace[:-1], 1e-300)).all()
        state.check_consistent()

    def test_half_step_count_matches_iterations(self):
        state = itf(AtqState.initialize(np.random.default_rng(0).normal(size=(3, 12))))
        # init point + 2 half-steps per executed iteration
        assert len(state.e_w_trace) == 1 + 2 * state.iteration

    def test_non_convergence_is_flagged_not_fatal(self):
        rng = np.random.default_rng(11)
        w = rng.normal(size=(6, 64))
        state = itf(AtqState.initialize(w), max_iters=1)
        assert state.iteration == 1
        # with a single iteration the trit plane usually still moves
        assert state.converged in (True, False)

    def test_documented_stall_on_skewed_representable_row(self):
        # counts (1, 1, 14) of {mu-a, mu, mu+a}: init collapses the +1 class
        # and the fit converges to the constant-vs-step local optimum with
        # e_w = 0.5 * alpha^2 (spec's "always exact" claim does not cover this)
        w = np.full((1, 16), 1.0)
        w[0, 0], w[0, 1] = -1.0, 0.0
        state = itf(AtqState.initialize(w + 3.0))
        assert state.converged
        assert state.e_w == pytest.approx(0.5, rel=1e-12)


class TestAgaAlign:
    def test_isotropic_gram_equals_unweighted_solve(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=(5, 12))
        trits = rng.integers(-1, 2, size=(5, 12)).astype(np.int8)
        trits[:, 0], trits[:, 1] = 1, -1
        a_ref, m_ref = optimal_grid(w, trits)
        gram = 2.5 * np.eye(12)
        a, m = aga_align(w, trits, gram, np.zeros(5), np.zeros(5))
        np.testing.assert_allclose(a, a_ref, rtol=1e-12)
        np.testing.assert_allclose(m, m_ref, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_weighted_ls_oracle(self, seed):
        rng = np.random.default_rng(200 + seed)
        g = int(rng.integers(3, 24))
        w = rng.normal(size=(9, g))
        trits = rng.integers(-1, 2, size=(9, g)).astype(np.int8)
        trits[:, 0], trits[:, 1] = 1, -1
        gram = random_psd(rng, g)
        a, m = aga_align(w, trits, gram, np.zeros(9), np.zeros(9))
        for i in range(9):
            a_ref, m_ref = solve_weighted_oracle(w[i], trits[i], gram)
            assert a[i] == pytest.approx(a_ref, rel=1e-8)
            assert m[i] == pytest.approx(m_ref, rel=1e-8)

    def test_zero_gram_keeps_prior_grid(self):
        w = np.random.default_rng(0).normal(size=(3, 6))
        trits = np.random.default_rng(1).integers(-1, 2, size=(3, 6)).astype(np.int8)
        prior_a = np.array([1.0, 2.0, 3.0])
        prior_m = np.array([-1.0, 0.0, 1.0])
        a, m = aga_align(w, trits, np.zeros((6, 6)), prior_a, prior_m)
        np.testing.assert_array_equal(a, prior_a)
        np.testing.assert_array_equal(m, prior_m)

    def test_asymmetric_gram_rejected(self):
        w = np.zeros((1, 3))
        trits = np.zeros((1, 3), np.int8)
        gram = np.array([[1.0, 0.5, 0.0], [0.1, 1.0, 0.0], [0.0, 0.0, 1.0]])
        with pytest.raises(CalibrationError, match="not symmetric"):
            aga_align(w, trits, gram, np.zeros(1), np.zeros(1))

    def test_trits_frozen(self):
        rng = np.random.default_rng(17)
        w = rng.normal(size=(4, 10))
        trits = rng.integers(-1, 2, size=(4, 10)).astype(np.int8)
        before = trits.copy()
        aga_align(w, trits, random_psd(rng, 10), np.zeros(4), np.zeros(4))
        np.testing.assert_array_equal(trits, before)

    @pytest.mark.parametrize("seed", range(5))
    def test_descent_against_previous_grid(self, seed):
        rng = np.random.default_rng(300 + seed)
        w = rng.normal(size=(6, 16))
        state = itf(AtqState.initialize(w))
        gram = random_psd(rng, 16)
        before = tile_output_error(w, state.alpha, state.mu, state.trits, gram)
        a, m = aga_align(w, state.trits, gram, state.alpha, state.mu)
        after = tile_output_error(w, a, m, state.trits, gram)
        assert after <= before * (1 + 1e-9)


class TestQuantizeTile:
    def test_ablation_switches(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=(4, 12)) + 0.4
        gram = random_psd(rng, 12)
        base = quantize_tile(w, gram, use_itf=False, use_aga=False)
        a0, m0, t0 = ternary_init(w)
        np.testing.assert_array_equal(base.trits, t0)
        np.testing.assert_array_equal(base.alpha, a0)
        full = quantize_tile(w, gram)
        assert full.e_x_after_align <= full.e_x_before_align * (1 + 1e-9)
        no_aga = quantize_tile(w, None)
        assert no_aga.e_x_before_align is None

    def test_skipping_itf_keeps_init_grid_under_aga(self):
        rng = np.random.default_rng(4)
        w = rng.normal(size=(3, 9))
        gram = random_psd(rng, 9)
        res = quantize_tile(w, gram, use_itf=False, use_aga=True)
        _, _, t0 = ternary_init(w)
        np.testing.assert_array_equal(res.trits, t0)
