"""Core ternary data types: trit matrices, per-group grid parameters, base-3
packing, and dequantization.

A quantized matrix is stored as a trit plane T in {-1,0,+1} plus, per
(row, column-group), a scale alpha and offset mu defining the three
representable values {mu-alpha, mu, mu+alpha}. Trits pack five to a byte in
base 3 (1.6 bits/weight); column order is tracked by an explicit permutation
so reordered quantization round-trips to original positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContainerError, TensorDataError
from .validation import as_matrix, as_trits, check_finite, check_permutation

TRITS_PER_BYTE = 5
# digit weights for one byte: first trit is least significant
_POW3 = np.array([1, 3, 9, 27, 81], dtype=np.uint16)
# max encodable byte: all five digits equal 2
MAX_TRIT_BYTE = 242

SCALE_DTYPES = {"f32": np.float32, "f16": np.float16}


def payload_nbytes(n: int, m: int) -> int:
    """Bytes needed to pack n*m trits at five per byte."""
    return -(-(n * m) // TRITS_PER_BYTE)


def n_groups_for(m: int, group_size: int) -> int:
    return -(-m // group_size)


def pack_trits(trits: np.ndarray) -> bytes:
    """Pack a trit matrix into base-3 bytes, five trits per byte.

    Trits are flattened row-major and mapped to digits d = t + 1; each byte
    holds five consecutive digits with the first least significant. The final
    partial byte, if any, is zero-padded.
    """
    t = as_trits(trits)
    digits = (t.reshape(-1).astype(np.int16) + 1).astype(np.uint16)
    pad = (-digits.size) % TRITS_PER_BYTE
    if pad:
        digits = np.concatenate([digits, np.zeros(pad, dtype=np.uint16)])
    packed = digits.reshape(-1, TRITS_PER_BYTE) @ _POW3
    return packed.astype(np.uint8).tobytes()


def unpack_trits(payload: bytes, shape: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`pack_trits`. Validates length and byte range."""
    n, m = int(shape[0]), int(shape[1])
    need = payload_nbytes(n, m)
    if len(payload) != need:
        raise ContainerError(
            f"payload holds {len(payload)} bytes, expected {need} for shape ({n}, {m})")
    raw = np.frombuffer(payload, dtype=np.uint8)
    bad = raw > MAX_TRIT_BYTE
    if bad.any():
        raise ContainerError(f"invalid trit byte at offset {int(np.argmax(bad))}")
    digits = (raw[:, None].astype(np.uint16) // _POW3[None, :]) % 3
    trits = digits.reshape(-1)[: n * m].astype(np.int8) - 1
    return trits.reshape(n, m)


@dataclass
class GridParams:
    """Per-(row, group) ternary grid: representable values {mu-a, mu, mu+a}.

    alpha and mu are (n_rows, n_groups) arrays. alpha is canonically
    non-negative (see canonicalize_grid); values are kept in the storage
    dtype (f32/f16) so serialization is bit-exact.
    """

    alpha: np.ndarray
    mu: np.ndarray

    def __post_init__(self) -> None:
        self.alpha = np.asarray(self.alpha)
        self.mu = np.asarray(self.mu)
        if self.alpha.ndim != 2 or self.alpha.shape != self.mu.shape:
            raise TensorDataError(
                f"grid params must be matching 2-D arrays, got {self.alpha.shape} vs {self.mu.shape}")
        check_finite(self.alpha.astype(np.float64), "alpha")
        check_finite(self.mu.astype(np.float64), "mu")
        if (self.alpha < 0).any():
            raise TensorDataError("alpha must be non-negative (canonical form)")

    @property
    def n_rows(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_groups(self) -> int:
        return self.alpha.shape[1]


def canonicalize_grid(alpha: np.ndarray, mu: np.ndarray,
                      trits: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return an equivalent representation with alpha >= 0.

    Rows with negative alpha get alpha negated and their trits flipped; rows
    with alpha == 0 get all-zero trits (the trit plane is inert there) and a
    positive zero. Dequantized values are unchanged.
    """
    alpha = np.asarray(alpha, dtype=np.float64).copy()
    mu = np.asarray(mu, dtype=np.float64)
    trits = as_trits(trits).copy()
    neg = alpha < 0
    if neg.any():
        alpha[neg] = -alpha[neg]
        trits[neg, :] *= -1
    zero = alpha == 0
    if zero.any():
        alpha[zero] = 0.0  # normalizes -0.0 as well
        trits[zero, :] = 0
    return alpha, mu, trits


@dataclass(eq=False)
class PackedTernaryTensor:
    """Serialized ternary tensor: packed trits + grid params + column order.

    Trit column j (quantized order) maps back to original column
    permutation[j]; group g covers quantized columns [g*k, (g+1)*k).
    """

    shape: tuple[int, int]
    group_size: int
    permutation: np.ndarray
    grid: GridParams
    payload: bytes
    scale_dtype: str = "f32"
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n, m = self.shape = (int(self.shape[0]), int(self.shape[1]))
        if n < 1 or m < 1:
            raise TensorDataError(f"shape must be positive, got {self.shape}")
        self.group_size = int(self.group_size)
        if self.group_size < 1:
            raise TensorDataError("group_size must be >= 1")
        if self.scale_dtype not in SCALE_DTYPES:
            raise TensorDataError(f"unknown scale dtype {self.scale_dtype!r}")
        self.permutation = check_permutation(self.permutation, m).astype(np.uint32)
        groups = n_groups_for(m, self.group_size)
        if self.grid.alpha.shape != (n, groups):
            raise TensorDataError(
                f"grid shape {self.grid.alpha.shape} does not match "
                f"(n={n}, n_groups={groups})")
        want = SCALE_DTYPES[self.scale_dtype]
        if self.grid.alpha.dtype != want or self.grid.mu.dtype != want:
            raise TensorDataError(
                f"grid dtype {self.grid.alpha.dtype} does not match scale_dtype={self.scale_dtype}")
        need = payload_nbytes(n, m)
        if len(self.payload) != need:
            raise ContainerError(
                f"payload holds {len(self.payload)} bytes, expected {need}")
        raw = np.frombuffer(self.payload, dtype=np.uint8)
        bad = raw > MAX_TRIT_BYTE
        if bad.any():
            raise ContainerError(f"invalid trit byte at offset {int(np.argmax(bad))}")

    @property
    def n_groups(self) -> int:
        return self.grid.n_groups

    def trits(self) -> np.ndarray:
        """Trit matrix in quantized column order."""
        return unpack_trits(self.payload, self.shape)

    def payload_bits_per_weight(self) -> float:
        n, m = self.shape
        return 8.0 * len(self.payload) / (n * m)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PackedTernaryTensor):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.group_size == other.group_size
            and self.scale_dtype == other.scale_dtype
            and np.array_equal(self.permutation, other.permutation)
            and self.grid.alpha.tobytes() == other.grid.alpha.tobytes()
            and self.grid.mu.tobytes() == other.grid.mu.tobytes()
            and self.payload == other.payload
        )


def dequantize(packed: PackedTernaryTensor) -> np.ndarray:
    """Reconstruct the dense float64 matrix in ORIGINAL column order.

    W_hat[i, perm[j]] = alpha[i, j//k] * T[i, j] + mu[i, j//k].
    """
    n, m = packed.shape
    t = packed.trits().astype(np.float64)
    alpha = packed.grid.alpha.astype(np.float64)
    mu = packed.grid.mu.astype(np.float64)
    gidx = np.arange(m) // packed.group_size
    vals = alpha[:, gidx] * t + mu[:, gidx]
    out = np.empty_like(vals)
    out[:, packed.permutation] = vals
    return out


def weight_error(w: np.ndarray, w_hat: np.ndarray) -> float:
    """Squared Frobenius norm of (w - w_hat)."""
    a = as_matrix(w, "w")
    b = as_matrix(w_hat, "w_hat")
    if a.shape != b.shape:
        raise TensorDataError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sum(d * d))
