"""
Noising anchors and denoising them
==================================

Two forward steps of a linear schedule barely move an anchor. The loop then
hands the noisy anchors to a denoiser, here the nearest-anchor oracle.
"""

import numpy as np

from roadprior import anchors as an
from roadprior import dataset as ds
from roadprior import diffusion as dif
from roadprior import template_space as ts

schedule = dif.NoiseSchedule.linear(1e-4, 0.02, 1000, t_trunc=2)
print("alpha_bar at steps 1, 2, 100, 1000:",
      [round(schedule.alpha_bar(i), 6) for i in (1, 2, 100, 1000)])

records = ds.generate_synthetic(ds.SynthConfig(n_frames=60, seed=1))
matrix = ts.ElementMatrix.from_records(records)
space = ts.fit(matrix, 20)
anchors = an.select_prior_anchors(matrix, space, an.ClusterConfig(n_anchors=30, seed=1))

noisy = dif.noise_anchors(schedule, anchors, 2, seed=0)
shift = np.linalg.norm((noisy - anchors.anchors).reshape(-1, 20, 2), axis=2).mean()
print(f"mean keypoint displacement at step 2: {shift:.2f} m")

# Much deeper into the schedule the anchors are mostly noise.
deep = dif.NoiseSchedule.linear(t_trunc=300)
far = dif.noise_anchors(deep, anchors, 300, seed=0)
print(f"... and at step 300: {np.linalg.norm((far - anchors.anchors).reshape(-1, 20, 2), axis=2).mean():.2f} m")

oracle = dif.oracle_denoiser(anchors)
scores, out = dif.truncated_denoise_loop(schedule, anchors, oracle, steps=2, seed=0)
recovered = np.mean([np.array_equal(a, b) for a, b in zip(out, anchors.anchors)])
print(f"oracle recovered {100 * recovered:.0f}% of anchors after 2 steps")
