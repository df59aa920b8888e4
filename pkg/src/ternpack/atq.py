"""Asymmetric ternary quantizer for one (rows x column-group) tile.

The quantizer represents each row of a tile as alpha * t + mu with
t in {-1,0,+1}. Three stages, all training-free and row-vectorized:

* ternary_init: offset mu = row mean, threshold rounding of the centered
  row at 0.75 * mean(|w - mu|), scale from the signed-mean ratio.
* iterative fitting: alternate the exact least-squares grid solve for the
  current trits with exact per-element re-rounding until the trit plane
  stops changing. Each half-step is an exact conditional minimizer, so the
  squared weight error is non-increasing.
* grid alignment: one closed-form re-solve of (alpha, mu) under the
  calibration-Gram-weighted output error, trits frozen.

Singular rows (uniform trits, degenerate Gram) fall back to the constant
fit / previous grid as documented on each function.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError
from .validation import as_matrix, as_trits, check_gram

logger = logging.getLogger(__name__)

# relative tolerance for declaring a 2x2 normal-equation system singular
SINGULAR_RTOL = 1e-12

DEFAULT_MAX_ITERS = 50


def _reconstruct(alpha: np.ndarray, mu: np.ndarray, trits: np.ndarray) -> np.ndarray:
    return alpha[:, None] * trits.astype(np.float64) + mu[:, None]


def tile_weight_error(w: np.ndarray, alpha: np.ndarray, mu: np.ndarray,
                      trits: np.ndarray) -> float:
    d = w - _reconstruct(alpha, mu, trits)
    return float(np.sum(d * d))


def tile_output_error(w: np.ndarray, alpha: np.ndarray, mu: np.ndarray,
                      trits: np.ndarray, gram: np.ndarray) -> float:
    """Gram-form output error sum_i r_i C r_i^T for r = w - (alpha t + mu)."""
    r = w - _reconstruct(alpha, mu, trits)
    return float(np.sum((r @ gram) * r))


def ternary_init(w_tile: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Asymmetric ternary initialization of one tile.

    Per row i: mu_i = mean(w_i); on the centered row wt = w_i - mu_i the
    threshold is 0.75 * mean(|wt|), trits are +1/-1 beyond +-threshold and 0
    inside; alpha_i = sum(t*wt)/sum(|t|) (0 when no trit fired).

    Returns (alpha, mu, trits).
    """
    w = as_matrix(w_tile, "w_tile")
    if w.shape[1] < 1:
        raise ValueError("tile must have at least one column")
    mu = w.mean(axis=1)
    wt = w - mu[:, None]
    delta = 0.75 * np.abs(wt).mean(axis=1)
    trits = ((wt > delta[:, None]).astype(np.int8)
             - (wt < -delta[:, None]).astype(np.int8))
    num = np.sum(trits * wt, axis=1)
    den = np.sum(np.abs(trits), axis=1).astype(np.float64)
    alpha = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return alpha, mu, trits


def optimal_grid(w_tile: np.ndarray, trits: np.ndarray,
                 alpha_prev: np.ndarray | None = None,
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Exact least-squares (alpha, mu) per row for a fixed trit plane.

    Solves the 2x2 normal equations in closed form, vectorized over rows:

        alpha = (g*S_wt - S_t*S_w) / (g*S_t2 - S_t^2)
        mu    = (S_t2*S_w - S_t*S_wt) / (g*S_t2 - S_t^2)

    The denominator vanishes iff all trits in a row are equal. Fallbacks:
    all-zero trits keep ``alpha_prev`` (or 0) with mu = row mean; a uniform
    nonzero trit row becomes the equivalent constant representation --
    alpha = 0, mu = row mean, and that row of ``trits`` is rewritten to
    zeros IN PLACE.
    """
    w = as_matrix(w_tile, "w_tile")
    trits = as_trits(trits)
    if trits.shape != w.shape:
        raise ValueError(f"trits shape {trits.shape} does not match tile {w.shape}")
    g = w.shape[1]
    t = trits.astype(np.float64)
    s_t = t.sum(axis=1)
    s_t2 = (t * t).sum(axis=1)
    s_w = w.sum(axis=1)
    s_wt = (w * t).sum(axis=1)

    denom = g * s_t2 - s_t * s_t
    scale = g * s_t2 + s_t * s_t
    singular = denom <= SINGULAR_RTOL * np.maximum(scale, 1.0)

    safe = np.where(singular, 1.0, denom)
    alpha = (g * s_wt - s_t * s_w) / safe
    mu = (s_t2 * s_w - s_t * s_wt) / safe

    if singular.any():
        mu[singular] = w[singular].mean(axis=1)
        all_zero = singular & (s_t2 == 0)
        uniform_nonzero = singular & (s_t2 != 0)
        if alpha_prev is not None:
            alpha[all_zero] = np.asarray(alpha_prev, dtype=np.float64)[all_zero]
        else:
            alpha[all_zero] = 0.0
        alpha[uniform_nonzero] = 0.0
        trits[uniform_nonzero, :] = 0
    return alpha, mu


def flexible_round(w_tile: np.ndarray, alpha: np.ndarray,
                   mu: np.ndarray) -> np.ndarray:
    """Exact per-element trit assignment for a fixed grid.

    t = argmin over {-1,0,1} of |z - t| with z = (w - mu)/alpha, i.e. +1 for
    z > 0.5, -1 for z < -0.5, else 0. The |z| = 0.5 tie goes to 0 (prefer
    sparsity, deterministic). Rows with alpha == 0 produce all-zero trits.
    """
    w = as_matrix(w_tile, "w_tile")
    alpha = np.asarray(alpha, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    zero = alpha == 0
    safe = np.where(zero, 1.0, alpha)
    z = (w - mu[:, None]) / safe[:, None]
    trits = (z > 0.5).astype(np.int8) - (z < -0.5).astype(np.int8)
    if zero.any():
        trits[zero, :] = 0
    return trits


@dataclass
class AtqState:
    """Working state of the iterative fit for one tile.

    e_w_trace records the squared weight error after init and after every
    half-step (grid solve / re-round), so monotonicity is checkable.
    """

    w_tile: np.ndarray
    alpha: np.ndarray
    mu: np.ndarray
    trits: np.ndarray
    e_w: float
    iteration: int = 0
    converged: bool = False
    e_w_trace: list[float] = field(default_factory=list)

    @classmethod
    def initialize(cls, w_tile: np.ndarray) -> "AtqState":
        w = as_matrix(w_tile, "w_tile")
        alpha, mu, trits = ternary_init(w)
        e = tile_weight_error(w, alpha, mu, trits)
        return cls(w_tile=w, alpha=alpha, mu=mu, trits=trits, e_w=e,
                   e_w_trace=[e])

    def check_consistent(self) -> None:
        e = tile_weight_error(self.w_tile, self.alpha, self.mu, self.trits)
        if not np.isclose(e, self.e_w, rtol=1e-9, atol=1e-12):
            raise AssertionError(f"stale e_w: stored {self.e_w}, recomputed {e}")


def itf(state: AtqState, max_iters: int = DEFAULT_MAX_ITERS) -> AtqState:
    """Iterative ternary fitting: alternate grid solve and re-rounding.

    Stops when the trit plane is unchanged between iterations (converged)
    or after max_iters (flagged, not an error). E_w is non-increasing at
    every half-step because both half-steps are exact conditional
    minimizers.
    """
    w = state.w_tile
    alpha, mu, trits = state.alpha, state.mu, state.trits.copy()
    trace = list(state.e_w_trace) or [tile_weight_error(w, alpha, mu, trits)]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        alpha, mu = optimal_grid(w, trits, alpha_prev=alpha)
        trace.append(tile_weight_error(w, alpha, mu, trits))
        new_trits = flexible_round(w, alpha, mu)
        trace.append(tile_weight_error(w, alpha, mu, new_trits))
        if np.array_equal(new_trits, trits):
            converged = True
            break
        trits = new_trits
    if not converged:
        logger.warning("ITF did not converge within %d iterations", max_iters)
    return AtqState(w_tile=w, alpha=alpha, mu=mu, trits=trits,
                    e_w=trace[-1], iteration=it, converged=converged,
                    e_w_trace=trace)


def aga_align(w_tile: np.ndarray, trits: np.ndarray, gram_tile: np.ndarray,
              alpha: np.ndarray, mu: np.ndarray,
              ) -> tuple[np.ndarray, np.ndarray]:
    """Activation-aware re-solve of (alpha, mu) with trits frozen.

    Minimizes the tile-local weighted error (w - a t - m 1) C (.)^T per row
    via the closed forms with d = 1'C1, v = tC1:

        a = (d*B - v*c) / (d*A - v^2),  m = (A*c - v*B) / (d*A - v^2)

    where A = tCt', B = wCt', c = wC1. Rows whose system is singular
    (d*A = v^2, e.g. an all-zero Gram) keep the passed-in grid. The trit
    plane is never modified.
    """
    w = as_matrix(w_tile, "w_tile")
    t8 = as_trits(trits)
    if t8.shape != w.shape:
        raise ValueError(f"trits shape {t8.shape} does not match tile {w.shape}")
    gram = check_gram(gram_tile, w.shape[1], name="gram_tile")
    alpha = np.asarray(alpha, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)

    t = t8.astype(np.float64)
    s1 = gram.sum(axis=1)
    d = float(s1.sum())
    v = t @ s1
    c = w @ s1
    a_q = ((t @ gram) * t).sum(axis=1)
    b_q = ((w @ gram) * t).sum(axis=1)

    denom = d * a_q - v * v
    scale = np.abs(d * a_q) + v * v
    singular = denom <= SINGULAR_RTOL * np.maximum(scale, np.finfo(np.float64).tiny)

    safe = np.where(singular, 1.0, denom)
    new_alpha = (d * b_q - v * c) / safe
    new_mu = (a_q * c - v * b_q) / safe
    new_alpha = np.where(singular, alpha, new_alpha)
    new_mu = np.where(singular, mu, new_mu)
    return new_alpha, new_mu


@dataclass
class TileResult:
    """Outcome of the full quantizer on one tile."""

    alpha: np.ndarray
    mu: np.ndarray
    trits: np.ndarray
    e_w: float
    itf_iterations: int
    converged: bool
    e_w_trace: list[float]
    e_x_before_align: float | None = None
    e_x_after_align: float | None = None


def quantize_tile(w_tile: np.ndarray, gram_tile: np.ndarray | None = None, *,
                  use_itf: bool = True, use_aga: bool = True,
                  max_iters: int = DEFAULT_MAX_ITERS) -> TileResult:
    """Run init (+ iterative fitting) (+ grid alignment) on one tile.

    gram_tile is the tile's diagonal sub-block of the calibration Gram in
    quantized column order; pass None to skip alignment (the grid then stays
    at the fitted/threshold solution). Ablation switches mirror the pipeline
    config.
    """
    state = AtqState.initialize(w_tile)
    if use_itf:
        state = itf(state, max_iters=max_iters)
    alpha, mu, trits = state.alpha, state.mu, state.trits
    ex_before = ex_after = None
    if use_aga and gram_tile is not None:
        gram = check_gram(gram_tile, state.w_tile.shape[1], name="gram_tile")
        ex_before = tile_output_error(state.w_tile, alpha, mu, trits, gram)
        alpha, mu = aga_align(state.w_tile, trits, gram, alpha, mu)
        ex_after = tile_output_error(state.w_tile, alpha, mu, trits, gram)
    return TileResult(
        alpha=alpha, mu=mu, trits=trits,
        e_w=tile_weight_error(state.w_tile, alpha, mu, trits),
        itf_iterations=state.iteration, converged=state.converged or not use_itf,
        e_w_trace=state.e_w_trace,
        e_x_before_align=ex_before, e_x_after_align=ex_after,
    )
