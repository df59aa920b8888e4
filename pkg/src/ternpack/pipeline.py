"""Layer- and model-level quantization orchestration.

Per layer: accumulate the calibration Gram C = sum x x^T, damp it into the
compensation Hessian H = C + lam*I, then quantize column blocks in a greedy
loop — similarity-selected (or in-order) block, tile quantizer, grid
alignment against the block's Gram sub-block, then propagate the block's
residual into the not-yet-quantized columns through the inverse Hessian.
The result is assembled into a packed tensor plus a metrics report.

Within a layer blocks are strictly sequential (selection and compensation
both read the evolving residual); distinct layers are independent and may
run concurrently.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .atq import quantize_tile
from .errors import CalibrationError
from .ssr import PermutationTrace, block_variance_profile, select_next_block
from .tensorio import LayerManifest, load_calibration, load_tensor, write_packed
from .ternary import (
    SCALE_DTYPES,
    GridParams,
    PackedTernaryTensor,
    canonicalize_grid,
    dequantize,
    n_groups_for,
    pack_trits,
    weight_error,
)
from .validation import as_matrix, check_gram

logger = logging.getLogger(__name__)


@dataclass
class QuantConfig:
    """Knobs of the quantization pipeline.

    The use_* switches exist for ablation studies; all default on. With
    identity_gram_fallback, layers without calibration data run against an
    identity Gram (alignment degenerates to the fitted grid, compensation
    to plain rounding) instead of failing.
    """

    group_size: int = 128
    damp_frac: float = 0.01
    max_itf_iters: int = 50
    use_ssr: bool = True
    use_aga: bool = True
    use_itf: bool = True
    use_compensation: bool = True
    scale_dtype: str = "f32"
    identity_gram_fallback: bool = False

    def __post_init__(self) -> None:
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if not 0.0 < self.damp_frac < 1.0:
            raise ValueError("damp_frac must be in (0, 1)")
        if self.max_itf_iters < 1:
            raise ValueError("max_itf_iters must be >= 1")
        if self.scale_dtype not in SCALE_DTYPES:
            raise ValueError(f"scale_dtype must be one of {sorted(SCALE_DTYPES)}")


@dataclass
class CalibGram:
    """Accumulated activation Gram sum x x^T plus the sample count."""

    gram: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, m: int) -> "CalibGram":
        return cls(gram=np.zeros((m, m)), count=0)

    @property
    def m(self) -> int:
        return self.gram.shape[0]


def accumulate_gram(state: CalibGram, batch: np.ndarray) -> CalibGram:
    """Add one calibration batch (s, m) into the running Gram.

    Accumulation is sequential over batches (bit-reproducible); the batch's
    own sum runs through one gemm.
    """
    x = as_matrix(batch, "batch")
    if x.shape[1] != state.m:
        raise CalibrationError(
            f"batch feature dim {x.shape[1]} does not match gram dim {state.m}")
    state.gram += x.T @ x
    state.count += x.shape[0]
    return state


@dataclass
class HessianFactor:
    """Damped Hessian H = C + lam*I with its inverse's Cholesky factor.

    upper is the upper-triangular U with H^-1 = U^T U; for in-order block
    processing the compensation coefficients for the block at columns
    [j, j+k) are solve(U[j:j+k, j:j+k], U[j:j+k, j+k:]). The dense H is kept
    for dynamic-order refactorization.
    """

    h: np.ndarray
    upper: np.ndarray
    damp: float
    dead: np.ndarray

    @property
    def m(self) -> int:
        return self.h.shape[0]


def hessian_prepare(gram: CalibGram, damp_frac: float = 0.01) -> HessianFactor:
    """Damp the Gram and factor its inverse for sequential compensation.

    lam = damp_frac * mean(diag); columns with zero calibration energy
    (zero diagonal) end up with diagonal exactly lam and are flagged dead.
    """
    c = check_gram(gram.gram, name="gram")
    m = c.shape[0]
    c = 0.5 * (c + c.T)
    diag = np.diag(c)
    dead = diag == 0
    lam = float(damp_frac) * float(diag.mean())
    h = c + lam * np.eye(m)
    try:
        low, _ = scipy.linalg.cho_factor(h, lower=True)
        hinv = scipy.linalg.cho_solve((low, True), np.eye(m))
        upper = scipy.linalg.cholesky(0.5 * (hinv + hinv.T), lower=False)
    except np.linalg.LinAlgError as exc:
        raise CalibrationError(
            f"Hessian factorization failed even after damping (lam={lam:.3e}); "
            f"increase damp_frac") from exc
    if dead.any():
        logger.info("%d dead column(s) damped to lam=%.3e", int(dead.sum()), lam)
    return HessianFactor(h=h, upper=upper, damp=lam, dead=dead)


def gram_output_error(w: np.ndarray, w_hat: np.ndarray, gram: np.ndarray) -> float:
    """Gram-form output error ||(W - W_hat) X||_F^2 = sum_i r_i C r_i^T."""
    r = as_matrix(w, "w") - as_matrix(w_hat, "w_hat")
    return float(np.sum((r @ gram) * r))


@dataclass
class LayerReport:
    """Per-layer metrics. The leading fields are the stable report schema;
    the rest are diagnostics."""

    layer: str
    n: int
    m: int
    k: int
    e_w: float
    e_x_gram: float
    bits_per_weight: float
    itf_iters_mean: float
    blocks: int
    ssr: bool
    aga: bool
    itf: bool = True
    compensation: bool = True
    scale_dtype: str = "f32"
    itf_converged_fraction: float = 1.0
    aga_ex_before: float | None = None
    aga_ex_after: float | None = None
    block_variance_mean: float = 0.0
    block_variance: list[float] = field(default_factory=list)
    bits_per_weight_total: float | None = None
    payload_bytes: int = 0
    gram_identity: bool = False
    gram_samples: int = 0
    dead_columns: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _comp_coefficients_inorder(upper: np.ndarray, pos: int, kb: int) -> np.ndarray:
    """Compensation matrix for the in-order block [pos, pos+kb):
    U_BB^-1 U_BR from the global Cholesky-of-inverse factor."""
    u_bb = upper[pos:pos + kb, pos:pos + kb]
    u_br = upper[pos:pos + kb, pos + kb:]
    return scipy.linalg.solve_triangular(u_bb, u_br, lower=False)


def _comp_coefficients_gathered(h: np.ndarray, block_idx: np.ndarray,
                                rest_idx: np.ndarray) -> np.ndarray:
    """Compensation matrix for a dynamically ordered block: refactorize on
    the remaining submatrix. Equals -H_BR H_RR^-1 = ([Hs^-1]_BB)^-1 [Hs^-1]_BR
    for Hs = H gathered over block+rest."""
    h_rr = h[np.ix_(rest_idx, rest_idx)]
    h_rb = h[np.ix_(rest_idx, block_idx)]
    low, _ = scipy.linalg.cho_factor(h_rr, lower=True)
    coef = scipy.linalg.cho_solve((low, True), h_rb)  # H_RR^-1 H_RB, (r, kb)
    return -coef.T


def quantize_layer(w: np.ndarray, gram: CalibGram | None,
                   cfg: QuantConfig | None = None, layer_name: str = "layer",
                   ) -> tuple[PackedTernaryTensor, LayerReport]:
    """Quantize one weight matrix into a packed ternary tensor.

    gram=None requires cfg.identity_gram_fallback; the layer then runs
    against an identity Gram (flagged in the report).
    """
    cfg = cfg or QuantConfig()
    w = as_matrix(w, f"weights[{layer_name}]")
    n, m = w.shape
    k = cfg.group_size

    gram_identity = gram is None
    if gram_identity:
        if not cfg.identity_gram_fallback:
            raise CalibrationError(
                f"layer {layer_name!r} has no calibration data; enable "
                f"identity_gram_fallback to quantize without it")
        gram = CalibGram(gram=np.eye(m), count=0)
    if gram.m != m:
        raise CalibrationError(
            f"gram dim {gram.m} does not match layer width {m}")
    c_raw = 0.5 * (check_gram(gram.gram, m) + gram.gram.T)

    factor = hessian_prepare(gram, cfg.damp_frac) if cfg.use_compensation else None

    scale_np = SCALE_DTYPES[cfg.scale_dtype]
    n_groups = n_groups_for(m, k)
    trits_q = np.empty((n, m), dtype=np.int8)
    alpha_store = np.zeros((n, n_groups), dtype=scale_np)
    mu_store = np.zeros((n, n_groups), dtype=scale_np)

    residual = w.copy()
    remaining = np.arange(m)
    trace = PermutationTrace(m)
    itf_iters: list[int] = []
    itf_converged: list[bool] = []
    ex_before_sum = 0.0
    ex_after_sum = 0.0
    aga_ran = False

    pos = 0
    block = 0
    while remaining.size:
        kb = min(k, remaining.size)
        if cfg.use_ssr:
            local = select_next_block(residual[:, remaining], kb)
        else:
            local = np.arange(kb)
        block_idx = remaining[local]
        w_b = residual[:, block_idx]

        gram_tile = None
        if cfg.use_aga and not gram_identity:
            gram_tile = c_raw[np.ix_(block_idx, block_idx)]
        tile = quantize_tile(w_b, gram_tile, use_itf=cfg.use_itf,
                             use_aga=cfg.use_aga, max_iters=cfg.max_itf_iters)
        itf_iters.append(tile.itf_iterations)
        itf_converged.append(tile.converged)
        if tile.e_x_before_align is not None:
            aga_ran = True
            ex_before_sum += tile.e_x_before_align
            ex_after_sum += tile.e_x_after_align

        alpha, mu, trits = canonicalize_grid(tile.alpha, tile.mu, tile.trits)
        a_cast = alpha.astype(scale_np)
        m_cast = mu.astype(scale_np)
        # compensation and reports must see the values the artifact stores
        q_b = (a_cast.astype(np.float64)[:, None] * trits
               + m_cast.astype(np.float64)[:, None])
        err_b = w_b - q_b

        remaining = np.delete(remaining, local)
        if cfg.use_compensation and remaining.size:
            if cfg.use_ssr:
                coef = _comp_coefficients_gathered(factor.h, block_idx, remaining)
            else:
                coef = _comp_coefficients_inorder(factor.upper, pos, kb)
            residual[:, remaining] -= err_b @ coef

        trits_q[:, pos:pos + kb] = trits
        alpha_store[:, block] = a_cast
        mu_store[:, block] = m_cast
        trace.extend(block_idx)
        pos += kb
        block += 1

    perm = trace.permutation().astype(np.uint32)
    packed = PackedTernaryTensor(
        shape=(n, m), group_size=k, permutation=perm,
        grid=GridParams(alpha=alpha_store, mu=mu_store),
        payload=pack_trits(trits_q), scale_dtype=cfg.scale_dtype,
    )

    w_hat = dequantize(packed)
    e_w = weight_error(w, w_hat)
    e_x = gram_output_error(w, w_hat, c_raw)
    variances = block_variance_profile(w, perm, k)
    report = LayerReport(
        layer=layer_name, n=n, m=m, k=k, e_w=e_w, e_x_gram=e_x,
        bits_per_weight=packed.payload_bits_per_weight(),
        itf_iters_mean=float(np.mean(itf_iters)) if itf_iters else 0.0,
        blocks=block, ssr=cfg.use_ssr, aga=cfg.use_aga, itf=cfg.use_itf,
        compensation=cfg.use_compensation, scale_dtype=cfg.scale_dtype,
        itf_converged_fraction=float(np.mean(itf_converged)) if itf_converged else 1.0,
        aga_ex_before=ex_before_sum if aga_ran else None,
        aga_ex_after=ex_after_sum if aga_ran else None,
        block_variance_mean=float(variances.mean()),
        block_variance=[float(v) for v in variances],
        payload_bytes=len(packed.payload),
        gram_identity=gram_identity,
        gram_samples=gram.count,
        dead_columns=int(factor.dead.sum()) if factor is not None else 0,
    )
    return packed, report


@dataclass
class ModelReport:
    """Aggregate over a manifest run; failures carry (layer, message)."""

    layers: list[LayerReport] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    total_params: int = 0
    total_file_bytes: int = 0
    bits_per_weight_overall: float | None = None
    size_reduction_vs_f32: float | None = None
    size_reduction_vs_f16: float | None = None
    config: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "layers": [r.to_dict() for r in self.layers],
            "failures": self.failures,
            "total_params": self.total_params,
            "total_file_bytes": self.total_file_bytes,
            "bits_per_weight_overall": self.bits_per_weight_overall,
            "size_reduction_vs_f32": self.size_reduction_vs_f32,
            "size_reduction_vs_f16": self.size_reduction_vs_f16,
            "config": self.config,
        }


def _quantize_entry(manifest: LayerManifest, name: str, cfg: QuantConfig,
                    out_dir: Path) -> tuple[LayerReport, int]:
    w = load_tensor(manifest, name)
    calib = load_calibration(manifest, name)
    gram = None
    if calib is not None:
        gram = accumulate_gram(CalibGram.zeros(w.shape[1]), calib)
    packed, report = quantize_layer(w, gram, cfg, layer_name=name)
    out_path = out_dir / f"{name}.pt2t"
    write_packed(packed, out_path)
    file_bytes = out_path.stat().st_size
    report.bits_per_weight_total = 8.0 * file_bytes / (report.n * report.m)
    return report, file_bytes


def quantize_model(manifest: LayerManifest, cfg: QuantConfig | None = None,
                   out_dir=".", jobs: int = 1,
                   write_report: bool = True) -> ModelReport:
    """Quantize every manifest entry, writing one .pt2t per tensor plus
    report.json. Per-layer errors are collected, not fatal; check
    ModelReport.ok / .failures."""
    cfg = cfg or QuantConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = manifest.names()

    def run(name: str):
        try:
            return run_one(name)
        except Exception as exc:  # collected per layer by contract
            logger.error("layer %s failed: %s", name, exc)
            return name, None, str(exc)

    def run_one(name: str):
        report, file_bytes = _quantize_entry(manifest, name, cfg, out_dir)
        return name, (report, file_bytes), None

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, names))
    else:
        results = [run(name) for name in names]

    model = ModelReport(config=asdict(cfg))
    f32_bytes = 0
    f16_bytes = 0
    for name, ok, err in results:
        if ok is None:
            model.failures.append({"layer": name, "error": err})
            continue
        report, file_bytes = ok
        model.layers.append(report)
        model.total_params += report.n * report.m
        model.total_file_bytes += file_bytes
        f32_bytes += report.n * report.m * 4
        f16_bytes += report.n * report.m * 2
    if model.total_file_bytes:
        model.bits_per_weight_overall = 8.0 * model.total_file_bytes / model.total_params
        model.size_reduction_vs_f32 = f32_bytes / model.total_file_bytes
        model.size_reduction_vs_f16 = f16_bytes / model.total_file_bytes
    if write_report:
        (out_dir / "report.json").write_text(
            json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n")
    return model
