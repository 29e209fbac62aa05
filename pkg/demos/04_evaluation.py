"""
Chamfer AP
==========

Score noisy copies of ground truth at the usual thresholds and at the strict
0.2 m one.
"""

import numpy as np

from roadprior import dataset as ds
from roadprior import evaluation as ev
from roadprior.geometry import RoadElement

gt = ds.generate_synthetic(ds.SynthConfig(n_frames=50, seed=2))
rng = np.random.default_rng(0)

predictions = []
for rec in gt:
    for e in rec.elements:
        sigma = rng.choice([0.05, 0.3, 1.0])
        pts = e.points + rng.normal(0.0, sigma, e.points.shape)
        # confidence loosely tracks quality
        conf = float(np.clip(1.0 - sigma + rng.normal(0, 0.1), 0, 1))
        predictions.append(ev.Prediction(RoadElement(e.cls, pts, e.is_closed, e.id), conf, rec.frame_id))

print(ev.evaluate(predictions, gt).table())
print()
print(ev.evaluate(predictions, gt, ev.STRICT_THRESHOLDS).table())

# precision/recall bookkeeping on a toy list
print("\nAP of [TP, FP, TP] with 2 GT:", ev.average_precision([1, 0, 1], [0.9, 0.8, 0.7], 2))
