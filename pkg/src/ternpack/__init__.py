"""ternpack: training-free ternary weight compression.

Dense float weight matrices are compressed to a trit plane in {-1,0,+1}
with per-(row, group) scale/offset grids, a similarity-chosen column order,
and inverse-Hessian error compensation, then packed five trits per byte
into the checksummed PT2T container.
"""

from .atq import (
    AtqState,
    TileResult,
    aga_align,
    flexible_round,
    itf,
    optimal_grid,
    quantize_tile,
    ternary_init,
)
from .errors import (
    CalibrationError,
    ContainerError,
    ManifestError,
    TensorDataError,
    TernpackError,
)
from .estimator import TernaryQuantizer
from .pipeline import (
    CalibGram,
    HessianFactor,
    LayerReport,
    ModelReport,
    QuantConfig,
    accumulate_gram,
    gram_output_error,
    hessian_prepare,
    quantize_layer,
    quantize_model,
)
from .ssr import (
    PermutationTrace,
    block_variance_profile,
    cosine_similarity_matrix,
    select_next_block,
)
from .synth import SynthSpec, generate_dataset, synth_layer
from .tensorio import (
    LayerManifest,
    ManifestEntry,
    load_calibration,
    load_manifest,
    load_tensor,
    read_packed,
    write_manifest,
    write_packed,
)
from .ternary import (
    GridParams,
    PackedTernaryTensor,
    canonicalize_grid,
    dequantize,
    pack_trits,
    unpack_trits,
    weight_error,
)

__version__ = "0.1.0"

__all__ = [
    "AtqState",
    "CalibGram",
    "CalibrationError",
    "ContainerError",
    "GridParams",
    "HessianFactor",
    "LayerManifest",
    "LayerReport",
    "ManifestEntry",
    "ManifestError",
    "ModelReport",
    "PackedTernaryTensor",
    "PermutationTrace",
    "QuantConfig",
    "SynthSpec",
    "TensorDataError",
    "TernaryQuantizer",
    "TernpackError",
    "TileResult",
    "accumulate_gram",
    "aga_align",
    "block_variance_profile",
    "canonicalize_grid",
    "cosine_similarity_matrix",
    "dequantize",
    "flexible_round",
    "generate_dataset",
    "gram_output_error",
    "hessian_prepare",
    "itf",
    "load_calibration",
    "load_manifest",
    "load_tensor",
    "optimal_grid",
    "pack_trits",
    "quantize_layer",
    "quantize_model",
    "quantize_tile",
    "read_packed",
    "select_next_block",
    "synth_layer",
    "ternary_init",
    "unpack_trits",
    "weight_error",
    "write_manifest",
    "write_packed",
]
