import numpy as np
import pytest

from ternpack import GridParams, PackedTernaryTensor, pack_trits


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_packed(rng, n=6, m=17, k=5, scale_dtype="f32", permute=True):
    """A valid random PackedTernaryTensor for IO/round-trip tests."""
    trits = rng.integers(-1, 2, size=(n, m)).astype(np.int8)
    groups = -(-m // k)
    fdt = np.float16 if scale_dtype == "f16" else np.float32
    alpha = np.abs(rng.normal(size=(n, groups))).astype(fdt)
    mu = rng.normal(size=(n, groups)).astype(fdt)
    perm = rng.permutation(m) if permute else np.arange(m)
    return PackedTernaryTensor(
        shape=(n, m), group_size=k, permutation=perm.astype(np.uint32),
        grid=GridParams(alpha=alpha, mu=mu), payload=pack_trits(trits),
        scale_dtype=scale_dtype)
