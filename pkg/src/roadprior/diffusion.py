"""Truncated forward diffusion over prior anchors and the iterative denoise loop.

Step indices are 1-based: ``alpha_bar(0) == 1`` and ``alpha_bar(i)`` is the
product of the first ``i`` retention factors ``1 - beta``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Protocol

import numpy as np

from .anchors import AnchorSet
from .errors import ConfigInvalid, DenoiserFailure, DimensionMismatch, StepOutOfRange
from .geometry import CLASSES, DEFAULT_BOX, PerceptionBox, chamfer_matrix


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray
    t_trunc: int = 2

    def __post_init__(self):
        betas = np.array(self.betas, dtype=float).reshape(-1)
        if betas.size == 0:
            raise ConfigInvalid("schedule needs at least one step")
        if np.any(betas < 0) or np.any(betas >= 1):
            raise ConfigInvalid("betas must lie in [0, 1)")
        if not 1 <= self.t_trunc <= betas.size:
            raise ConfigInvalid(f"t_trunc must lie in [1, {betas.size}], got {self.t_trunc}")
        betas.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        alphas = 1.0 - betas
        alphas.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        alpha_bars = np.cumprod(alphas)
        alpha_bars.setflags(write=False)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @classmethod
    def linear(cls, beta_start=1e-4, beta_end=0.02, t_total=1000, t_trunc=2) -> "NoiseSchedule":
        if t_total < 1:
            raise ConfigInvalid("t_total must be >= 1")
        return cls(np.linspace(beta_start, beta_end, t_total), t_trunc)

    @property
    def T(self) -> int:
        return self.betas.size

    def _check(self, i, upper=None):
        upper = self.T if upper is None else upper
        if not 1 <= i <= upper:
            raise StepOutOfRange(f"step index {i} outside [1, {upper}]")

    def alpha(self, i: int) -> float:
        self._check(i)
        return float(self.alphas[i - 1])

    def alpha_bar(self, i: int) -> float:
        if i == 0:
            return 1.0
        self._check(i)
        return float(self.alpha_bars[i - 1])


def forward_step(schedule: NoiseSchedule, r_prev, i: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``r^i ~ N(sqrt(alpha_i) r^{i-1}, (1 - alpha_i) I)``.

    ``r_prev`` may carry leading batch dimensions.
    """
    a = schedule.alpha(i)
    r_prev = np.asarray(r_prev, dtype=float)
    eps = rng.standard_normal(r_prev.shape)
    return np.sqrt(a) * r_prev + np.sqrt(1.0 - a) * eps


def forward_marginal(schedule: NoiseSchedule, r0, i: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``r^i ~ N(sqrt(alpha_bar_i) r^0, (1 - alpha_bar_i) I)`` in one shot."""
    schedule._check(i)
    ab = schedule.alpha_bar(i)
    r0 = np.asarray(r0, dtype=float)
    eps = rng.standard_normal(r0.shape)
    return np.sqrt(ab) * r0 + np.sqrt(1.0 - ab) * eps


def anchor_rng(seed: int, anchor: int, step: int) -> np.random.Generator:
    """Independent stream per (seed, anchor index, step)."""
    return np.random.default_rng(np.random.SeedSequence([seed, anchor, step]))


def noise_vectors(
    schedule: NoiseSchedule,
    vectors,
    i: int,
    seed: int,
    box: PerceptionBox | None = DEFAULT_BOX,
    stream: int | None = None,
) -> np.ndarray:
    """Noise each row of ``vectors`` to step ``i`` with its own RNG stream.

    Row ``k`` draws from the stream ``(seed, k, stream)``; ``stream`` defaults
    to ``i``.  With ``box`` given the noise is applied in box-normalized coordinates and
    mapped back to meters; ``box=None`` noises raw meters.
    """
    schedule._check(i, schedule.t_trunc)
    vectors = np.asarray(vectors, dtype=float)
    ab = schedule.alpha_bar(i)
    if ab == 1.0:
        return vectors.copy()
    x = box.normalize(vectors) if box is not None else vectors
    stream = i if stream is None else stream
    eps = np.stack([anchor_rng(seed, k, stream).standard_normal(x.shape[1]) for k in range(x.shape[0])])
    noisy = np.sqrt(ab) * x + np.sqrt(1.0 - ab) * eps
    return box.denormalize(noisy) if box is not None else noisy


def noise_anchors(schedule, anchors: AnchorSet, i: int, seed: int, box=DEFAULT_BOX) -> np.ndarray:
    return noise_vectors(schedule, anchors.anchors, i, seed, box)


class Denoiser(Protocol):
    def __call__(self, noisy: np.ndarray, step: int, conditioning: Any) -> tuple:
        """Return ``(class_scores (K, C), denoised (K, N))`` for ``K`` inputs."""


def oracle_denoiser(anchors: AnchorSet) -> Callable:
    """Denoiser that maps every input to its Chamfer-nearest anchor.

    Class scores are one-hot on that anchor's class; ties go to the lowest
    anchor index.
    """
    if anchors.n_anchors == 0:
        raise ConfigInvalid("oracle denoiser needs at least one anchor")
    ref = anchors.anchors.copy()
    onehot = np.zeros((anchors.n_anchors, len(CLASSES)))
    for k, c in enumerate(anchors.classes):
        onehot[k, CLASSES.index(c)] = 1.0

    def denoise(noisy, step, conditioning=None):
        nearest = np.argmin(chamfer_matrix(noisy, ref), axis=1)
        return onehot[nearest].copy(), ref[nearest].copy()

    return denoise


def step_indices(t_trunc: int, steps: int) -> list:
    """Noise level used at each loop iteration, decaying from ``t_trunc`` to 1."""
    return [t_trunc - (it * t_trunc) // steps for it in range(steps)]


def truncated_denoise_loop(
    schedule: NoiseSchedule,
    anchors: AnchorSet,
    denoiser: Denoiser,
    conditioning: Any = None,
    steps: int = 2,
    seed: int = 0,
    noise_once: bool = False,
    box: PerceptionBox | None = DEFAULT_BOX,
):
    """Noise the references, denoise them, and feed the output back in.

    Returns ``(class_scores, elements)`` after ``steps`` denoiser calls.  By
    default noise is re-injected every iteration at a decaying step index;
    ``noise_once`` noises only the initial anchors.
    """
    if steps < 1:
        raise ConfigInvalid("steps must be >= 1")
    refs = anchors.anchors
    scores = None
    for it, i in enumerate(step_indices(schedule.t_trunc, steps)):
        if it == 0 or not noise_once:
            noisy = noise_vectors(schedule, refs, i, seed, box, stream=it)
        else:
            noisy = refs
        try:
            scores, refs = denoiser(noisy, i, conditioning)
            scores = np.asarray(scores, dtype=float)
            refs = np.asarray(refs, dtype=float)
        except DenoiserFailure:
            raise
        except Exception as exc:
            raise DenoiserFailure(i, exc) from exc
        if refs.shape != noisy.shape or scores.shape[0] != noisy.shape[0]:
            raise DenoiserFailure(
                i, DimensionMismatch(f"denoiser returned {refs.shape}, expected {noisy.shape}")
            )
    return scores, refs
