"""Deterministic synthetic layers for studies and the test harness.

Weight matrices get per-row mean offsets and a fraction of 10x-scaled
outlier columns (the regimes that stress row-wise ternary grids);
calibration activations are heavy-tailed with log-normal per-feature
scales so the Gram is strongly anisotropic. Everything derives from one
seeded generator, so identical seeds give byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensorio import LayerManifest, ManifestEntry, write_manifest


@dataclass
class SynthSpec:
    n: int = 64
    m: int = 256
    samples: int = 320
    outlier_frac: float = 0.05
    row_offset: float = 0.5
    outlier_scale: float = 10.0
    feature_scale_sigma: float = 0.6
    layers: int = 1

    def __post_init__(self) -> None:
        if min(self.n, self.m, self.samples, self.layers) < 1:
            raise ValueError("n, m, samples, layers must be >= 1")
        if not 0.0 <= self.outlier_frac <= 1.0:
            raise ValueError("outlier_frac must be in [0, 1]")


def synth_layer(rng: np.random.Generator, spec: SynthSpec,
                ) -> tuple[np.ndarray, np.ndarray]:
    """One (weights, activations) pair drawn from the generator."""
    w = rng.normal(size=(spec.n, spec.m))
    if spec.row_offset > 0:
        w += rng.uniform(-spec.row_offset, spec.row_offset, size=(spec.n, 1))
    n_out = round(spec.outlier_frac * spec.m)
    if n_out:
        cols = rng.choice(spec.m, size=n_out, replace=False)
        w[:, cols] *= spec.outlier_scale
    col_scale = np.exp(rng.normal(0.0, spec.feature_scale_sigma, size=spec.m))
    x = rng.standard_t(df=4, size=(spec.samples, spec.m)) * col_scale
    return w, x


def generate_dataset(out_dir, seed: int, spec: SynthSpec) -> LayerManifest:
    """Write spec.layers synthetic layers (f32 binaries) plus manifest.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(spec.layers):
        w, x = synth_layer(rng, spec)
        name = f"layer{i:02d}"
        w_path = f"{name}.w.bin"
        x_path = f"{name}.x.bin"
        w.astype("<f4").tofile(out_dir / w_path)
        x.astype("<f4").tofile(out_dir / x_path)
        entries.append(ManifestEntry(
            name=name, shape=(spec.n, spec.m), dtype="f32",
            path=w_path, calib_path=x_path))
    manifest = LayerManifest(root=out_dir, entries=entries)
    write_manifest(manifest, out_dir / "manifest.json")
    return manifest
