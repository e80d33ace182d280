"""Overlay two feature clouds of one class in a shared 2-D PCA basis.

Writes the point and ellipse CSVs plus a PNG with axes fixed to [-40, 40].
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from materialkit import pca_overlay
from materialkit.evaluation import render_pca, write_pca_csv

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="materialkit-pca-"))
rng = np.random.default_rng(0)
direction = rng.normal(size=64)
synthetic = rng.normal(size=(300, 64)) * 2.0 + 6.0 * direction / np.linalg.norm(direction)
real = rng.normal(size=(200, 64)) * 3.0

overlay = pca_overlay({"synthetic": synthetic, "real": real}, "wood")
for name, fit in overlay.datasets.items():
    major, minor = fit.semi_axes
    print(f"{name:10s} mean {np.round(fit.mean, 2)}  2-sigma axes {major:.2f} x {minor:.2f}  "
          f"angle {fit.angle_deg:.1f}")
for path in write_pca_csv(overlay, out):
    print("wrote", path)
render_pca(overlay, out / "wood_pca.png")
print("wrote", out / "wood_pca.png")
