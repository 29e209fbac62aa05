"""
Shape template space
====================

Fit a rank-20 basis to synthetic road elements and look at how much of the
shape energy it keeps.
"""

import numpy as np

from roadprior import dataset as ds
from roadprior import template_space as ts

records = ds.generate_synthetic(ds.SynthConfig(n_frames=100, seed=0))
matrix = ts.ElementMatrix.from_records(records)
print("element matrix", matrix.data.shape)

space = ts.fit(matrix, 20)
for m in (1, 2, 5, 10, 20):
    print(f"M={m:2d}  explained energy {space.explained_variance(m):.6f}")

# The squared reconstruction error is exactly the dropped spectrum.
err = ts.reconstruction_error(space, matrix)
print("error", err, "tail", np.sum(space.singular_values[20:] ** 2))

# Coefficients are just inner products with the basis.
a = matrix.data[:, 0]
c = space.project(a)
print("first element, 3 leading coefficients:", np.round(c[:3], 3))
print("reconstruction residual (m):", np.linalg.norm(a - space.reconstruct(c)))

# Per-class spaces: crossings need several orientations.
per_class = ts.fit_per_class(records, 5)
for cls, sp in per_class.items():
    angles = [np.degrees(ts.dominant_orientation(sp.basis[:, k])) for k in range(5)]
    print(cls.value, "basis orientations (deg):", np.round(angles).astype(int))
