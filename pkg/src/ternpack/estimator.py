"""scikit-learn-style front end for the quantization pipeline.

``TernaryQuantizer.fit(W, activations)`` learns the packed ternary
approximation of a weight matrix; ``transform(X)`` then applies the
quantized linear map X @ W_hat^T, so the fitted object drops into code that
expects the estimator protocol (get_params/set_params/clone all work).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .pipeline import CalibGram, QuantConfig, accumulate_gram, quantize_layer
from .ternary import dequantize
from .validation import as_matrix


class TernaryQuantizer(TransformerMixin, BaseEstimator):
    """Compress a dense weight matrix to a packed ternary representation.

    Parameters mirror :class:`ternpack.pipeline.QuantConfig`. Unlike the
    raw pipeline, a missing calibration matrix falls back to an identity
    Gram by default so the estimator is usable standalone.

    Attributes (after fit): ``packed_`` (the serialized-form tensor),
    ``report_`` (per-layer metrics), ``n_features_in_``.
    """

    def __init__(self, group_size: int = 128, damp_frac: float = 0.01,
                 max_itf_iters: int = 50, ssr: bool = True, aga: bool = True,
                 itf: bool = True, compensation: bool = True,
                 scale_dtype: str = "f32", identity_gram_fallback: bool = True):
        self.group_size = group_size
        self.damp_frac = damp_frac
        self.max_itf_iters = max_itf_iters
        self.ssr = ssr
        self.aga = aga
        self.itf = itf
        self.compensation = compensation
        self.scale_dtype = scale_dtype
        self.identity_gram_fallback = identity_gram_fallback

    def _config(self) -> QuantConfig:
        return QuantConfig(
            group_size=self.group_size,
            damp_frac=self.damp_frac,
            max_itf_iters=self.max_itf_iters,
            use_ssr=self.ssr,
            use_aga=self.aga,
            use_itf=self.itf,
            use_compensation=self.compensation,
            scale_dtype=self.scale_dtype,
            identity_gram_fallback=self.identity_gram_fallback,
        )

    def fit(self, W, activations=None):
        """Quantize W (n, m), optionally calibrated on activations (s, m)."""
        w = as_matrix(W, "W")
        gram = None
        if activations is not None:
            x = as_matrix(activations, "activations")
            gram = accumulate_gram(CalibGram.zeros(w.shape[1]), x)
        self.packed_, self.report_ = quantize_layer(w, gram, self._config())
        self.n_features_in_ = w.shape[1]
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "packed_"):
            raise NotFittedError(
                "This TernaryQuantizer instance is not fitted yet; call fit first.")

    def dequantize(self) -> np.ndarray:
        """Dense float64 reconstruction W_hat in original column order."""
        self._check_fitted()
        return dequantize(self.packed_)

    def transform(self, X) -> np.ndarray:
        """Apply the quantized linear map: X (s, m) -> X @ W_hat^T (s, n)."""
        self._check_fitted()
        x = as_matrix(X, "X")
        if x.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {x.shape[1]} features, expected {self.n_features_in_}")
        return x @ self.dequantize().T
