"""Input validation helpers shared by the estimator, pipeline, and IO layers.

All solver math runs in float64; these helpers widen inputs on entry and
reject non-finite data with the offending flat index, so downstream code can
assume clean arrays.
"""

from __future__ import annotations

import numpy as np

from .errors import CalibrationError, TensorDataError

__all__ = [
    "as_matrix",
    "as_trits",
    "check_finite",
    "check_gram",
    "check_permutation",
]


def check_finite(a: np.ndarray, name: str = "array") -> np.ndarray:
    """Raise TensorDataError naming the first non-finite flat index."""
    finite = np.isfinite(a)
    if not finite.all():
        idx = int(np.argmin(finite.ravel()))
        val = a.ravel()[idx]
        raise TensorDataError(f"{name}: non-finite value {val!r} at flat index {idx}")
    return a


def as_matrix(a, name: str = "array", *, copy: bool = False) -> np.ndarray:
    """Coerce to a 2-D float64 matrix, rejecting NaN/Inf."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise TensorDataError(f"{name}: expected a 2-D matrix, got ndim={out.ndim}")
    check_finite(out, name)
    if copy:
        out = out.copy()
    return out


def as_trits(t, name: str = "trits") -> np.ndarray:
    """Coerce to a 2-D int8 matrix with entries in {-1, 0, +1}."""
    out = np.asarray(t)
    if out.ndim != 2:
        raise TensorDataError(f"{name}: expected a 2-D matrix, got ndim={out.ndim}")
    out = out.astype(np.int8, copy=False)
    bad = (out < -1) | (out > 1)
    if bad.any():
        idx = int(np.argmax(bad.ravel()))
        raise TensorDataError(f"{name}: value outside {{-1,0,1}} at flat index {idx}")
    return out


def check_permutation(p, m: int, name: str = "permutation") -> np.ndarray:
    """Validate a bijection on {0..m-1} and return it as int64."""
    out = np.asarray(p, dtype=np.int64)
    if out.shape != (m,):
        raise TensorDataError(f"{name}: expected length {m}, got shape {out.shape}")
    seen = np.zeros(m, dtype=bool)
    if out.size and (out.min() < 0 or out.max() >= m):
        raise TensorDataError(f"{name}: index out of range for m={m}")
    seen[out] = True
    if not seen.all():
        raise TensorDataError(f"{name}: not a bijection on 0..{m - 1}")
    return out


def check_gram(c, m: int | None = None, *, rel_tol: float = 1e-9,
               name: str = "gram") -> np.ndarray:
    """Validate a square, finite, symmetric (within rel_tol) Gram matrix."""
    out = np.asarray(c, dtype=np.float64)
    if out.ndim != 2 or out.shape[0] != out.shape[1]:
        raise CalibrationError(f"{name}: expected a square matrix, got shape {out.shape}")
    if m is not None and out.shape[0] != m:
        raise CalibrationError(f"{name}: dimension {out.shape[0]} does not match m={m}")
    check_finite(out, name)
    scale = float(np.abs(out).max()) if out.size else 0.0
    asym = float(np.abs(out - out.T).max()) if out.size else 0.0
    if asym > rel_tol * max(scale, np.finfo(np.float64).tiny):
        raise CalibrationError(
            f"{name}: not symmetric (max asymmetry {asym:.3e} vs scale {scale:.3e})")
    return out
