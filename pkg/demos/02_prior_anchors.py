"""
Prior anchors
=============

Cluster template coefficients into 50 anchors and compare them with anchors
drawn uniformly in the perception box.
"""

from pathlib import Path

import numpy as np

from roadprior import anchors as an
from roadprior import dataset as ds
from roadprior import plotting
from roadprior import template_space as ts
from roadprior.geometry import chamfer_matrix

train = ds.generate_synthetic(ds.SynthConfig(n_frames=150, seed=0))
held_out = ds.all_elements(ds.generate_synthetic(ds.SynthConfig(n_frames=100, seed=1000)))

matrix = ts.ElementMatrix.from_records(train)
space = ts.fit(matrix, 20)
clustered = an.select_prior_anchors(matrix, space, an.ClusterConfig(n_anchors=50, seed=0))
random = an.random_anchor_baseline(50, space, seed=0)

print(f"K-means: {clustered.iterations_run} iterations, converged={clustered.converged}")
print("inertia, first and last:", clustered.inertia_history[0], clustered.inertia_history[-1])

# every anchor is a real element mapped through the basis
assert np.array_equal(clustered.anchors, space.reconstruct(clustered.coefficients))

gt = np.stack([e.points for e in held_out])


def nearest(anchor_vectors):
    d = chamfer_matrix(gt, anchor_vectors.reshape(len(anchor_vectors), -1, 2))
    return d.min(axis=1).mean()


print(f"mean nearest-anchor Chamfer, clustered: {nearest(clustered.anchors):.2f} m")
print(f"mean nearest-anchor Chamfer, random:    {nearest(random.anchors):.2f} m")

out = Path("demo_out")
out.mkdir(exist_ok=True)
plotting.write(plotting.anchors_svg(clustered.anchors, clustered.classes, title="clustered"), out / "clustered.svg")
plotting.write(plotting.anchors_svg(random.anchors, random.classes, title="random"), out / "random.svg")
print("wrote", out / "clustered.svg", "and", out / "random.svg")
