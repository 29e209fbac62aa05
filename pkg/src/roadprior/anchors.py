"""Prior anchor selection by K-means in template space.

Dataset elements are projected to template coefficients, clustered with
Lloyd's algorithm, each center is snapped to its nearest member (so every
anchor is a real, observed shape) and mapped back to coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigInvalid,
    DataError,
    DimensionMismatch,
    NPTooLarge,
    ParseError,
    SchemaVersionMismatch,
)
from .geometry import CLASSES, DEFAULT_BOX, ElementClass, PerceptionBox
from .template_space import ElementMatrix, TemplateSpace

FORMAT = "roadprior-anchors"
VERSION = 1
_ASSIGN_CHUNK = 4096


@dataclass(frozen=True)
class ClusterConfig:
    n_anchors: int = 50
    max_iterations: int = 300
    tolerance: float = 1e-4
    seed: int = 0
    init: str = "random"  # or "k-means++"

    def __post_init__(self):
        if self.n_anchors < 1:
            raise ConfigInvalid("n_anchors must be positive")
        if self.max_iterations < 1:
            raise ConfigInvalid("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ConfigInvalid("tolerance must be > 0")
        if self.init not in ("random", "k-means++"):
            raise ConfigInvalid(f"unknown init {self.init!r}")


@dataclass(eq=False)
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia_history: list
    iterations: int
    converged: bool


@dataclass(eq=False)
class AnchorSet:
    anchors: np.ndarray  # (N_P, N)
    coefficients: np.ndarray  # (N_P, M)
    classes: list
    cluster_sizes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    medoid_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    inertia_history: list = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False
    template_fingerprint: str = ""

    def __len__(self):
        return self.anchors.shape[0]

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "n_anchors": self.n_anchors,
            "N": self.anchors.shape[1],
            "M": self.coefficients.shape[1],
            "anchors": self.anchors.reshape(-1).tolist(),
            "coefficients": self.coefficients.reshape(-1).tolist(),
            "classes": [c.value for c in self.classes],
            "cluster_sizes": [int(x) for x in self.cluster_sizes],
            "medoid_indices": [int(x) for x in self.medoid_indices],
            "inertia_history": [float(x) for x in self.inertia_history],
            "iterations_run": self.iterations_run,
            "converged": self.converged,
            "template_fingerprint": self.template_fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnchorSet":
        if d.get("format") != FORMAT:
            raise DataError(f"not an anchor file (format={d.get('format')!r})")
        if d.get("version") != VERSION:
            raise SchemaVersionMismatch(f"anchor file version {d.get('version')}, expected {VERSION}")
        k, n, m = int(d["n_anchors"]), int(d["N"]), int(d["M"])
        anchors = np.asarray(d["anchors"], dtype=float)
        coefs = np.asarray(d["coefficients"], dtype=float)
        if anchors.size != k * n or coefs.size != k * m or len(d["classes"]) != k:
            raise DimensionMismatch("anchor file arrays disagree with the declared sizes")
        return cls(
            anchors.reshape(k, n),
            coefs.reshape(k, m),
            [ElementClass(c) for c in d["classes"]],
            np.asarray(d.get("cluster_sizes", [0] * k), dtype=np.int64),
            np.asarray(d.get("medoid_indices", [-1] * k), dtype=np.int64),
            list(d.get("inertia_history", [])),
            int(d.get("iterations_run", 0)),
            bool(d.get("converged", False)),
            d.get("template_fingerprint", ""),
        )


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def assign(points: np.ndarray, centers: np.ndarray):
    """Nearest-center labels (lowest index on ties) and squared distances."""
    labels = np.empty(points.shape[0], dtype=np.int64)
    best = np.empty(points.shape[0])
    for lo in range(0, points.shape[0], _ASSIGN_CHUNK):
        d = _sq_dists(points[lo : lo + _ASSIGN_CHUNK], centers)
        lab = np.argmin(d, axis=1)
        labels[lo : lo + _ASSIGN_CHUNK] = lab
        best[lo : lo + _ASSIGN_CHUNK] = d[np.arange(d.shape[0]), lab]
    return labels, best


def _init_centers(points, k, rng, init):
    if init == "random":
        idx = rng.choice(points.shape[0], size=k, replace=False)
        return points[np.sort(idx)].copy()
    # k-means++
    chosen = [int(rng.integers(points.shape[0]))]
    d2 = _sq_dists(points, points[chosen]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total == 0:
            rest = np.setdiff1d(np.arange(points.shape[0]), chosen)
            nxt = int(rest[0])
        else:
            nxt = int(rng.choice(points.shape[0], p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(points, points[[nxt]])[:, 0])
    return points[chosen].copy()


def kmeans(points, k: int, cfg: ClusterConfig | None = None, initial=None) -> KMeansResult:
    """Lloyd's algorithm with plain random initialization.

    Stops after ``cfg.max_iterations`` iterations or once the summed center
    movement drops to ``cfg.tolerance``.  A cluster that empties out is
    re-seeded at the point farthest from its assigned center.  ``initial``
    overrides the seeded initialization with explicit starting centers.
    """
    cfg = cfg or ClusterConfig(n_anchors=k)
    points = np.ascontiguousarray(points, dtype=float)
    L = points.shape[0]
    if k > L:
        raise NPTooLarge(f"cannot pick {k} anchors from {L} elements")
    rng = np.random.default_rng(cfg.seed)
    if initial is None:
        centers = _init_centers(points, k, rng, cfg.init)
    else:
        centers = np.array(initial, dtype=float).reshape(k, points.shape[1])
    history = []
    s, delta = 0, np.inf
    labels = None
    while s < cfg.max_iterations and delta > cfg.tolerance:
        labels, d2 = assign(points, centers)
        history.append(float(d2.sum()))
        new = np.empty_like(centers)
        counts = np.bincount(labels, minlength=k)
        taken = set()
        for j in range(k):
            if counts[j]:
                new[j] = points[labels == j].mean(axis=0)
            else:
                order = np.lexsort((np.arange(L), -d2))
                far = next(int(i) for i in order if int(i) not in taken)
                taken.add(far)
                new[j] = points[far]
        delta = float(np.sum(np.linalg.norm(new - centers, axis=1)))
        centers = new
        s += 1
    return KMeansResult(labels, centers, history, s, bool(delta <= cfg.tolerance))


def snap_to_medoids(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the member nearest to each center (lowest index on ties).

    Membership comes from assigning every point to the final centers; a
    center without members takes the nearest point not already used.
    """
    labels, _ = assign(points, centers)
    k = centers.shape[0]
    picks = np.full(k, -1, dtype=np.int64)
    for j in range(k):
        members = np.flatnonzero(labels == j)
        if members.size:
            d = _sq_dists(points[members], centers[j : j + 1])[:, 0]
            picks[j] = members[int(np.argmin(d))]
    for j in np.flatnonzero(picks < 0):
        d = _sq_dists(points, centers[j : j + 1])[:, 0]
        d[picks[picks >= 0]] = np.inf
        picks[j] = int(np.argmin(d))
    return picks


def _dominant_class(labels_of_members, fallback):
    if not labels_of_members:
        return fallback
    counts = {c: 0 for c in CLASSES}
    for c in labels_of_members:
        counts[c] += 1
    return max(CLASSES, key=lambda c: (counts[c], -CLASSES.index(c)))


def select_prior_anchors(matrix: ElementMatrix, space: TemplateSpace, cfg: ClusterConfig) -> AnchorSet:
    if matrix.N != space.N:
        raise DimensionMismatch(f"dataset has N={matrix.N}, template space N={space.N}")
    if cfg.n_anchors > matrix.L:
        raise NPTooLarge(f"N_P={cfg.n_anchors} exceeds the number of elements L={matrix.L}")
    # matrix.data is already centered when mean_removed, so project explicitly.
    coeffs = np.ascontiguousarray(matrix.data.T @ space.basis)  # rows of C_A^T
    km = kmeans(coeffs, cfg.n_anchors, cfg)
    medoids = snap_to_medoids(coeffs, km.centers)
    P_C = coeffs[medoids].copy()
    anchors = space.reconstruct(P_C)
    final_labels, _ = assign(coeffs, km.centers)
    sizes = np.bincount(final_labels, minlength=cfg.n_anchors).astype(np.int64)
    labels = matrix.class_labels or [ElementClass.DIVIDER] * matrix.L
    classes = [
        _dominant_class([labels[i] for i in np.flatnonzero(final_labels == j)], labels[medoids[j]])
        for j in range(cfg.n_anchors)
    ]
    return AnchorSet(
        anchors,
        P_C,
        classes,
        sizes,
        medoids,
        km.inertia_history,
        km.iterations,
        km.converged,
        space.source_fingerprint,
    )


def random_anchor_baseline(
    n: int, space: TemplateSpace, box: PerceptionBox = DEFAULT_BOX, seed: int = 0
) -> AnchorSet:
    """Anchors whose keypoints are i.i.d. uniform over the perception box."""
    if n < 1:
        raise ConfigInvalid("n must be positive")
    rng = np.random.default_rng(seed)
    P = space.N // 2
    xs = rng.uniform(box.x_min, box.x_max, size=(n, P))
    ys = rng.uniform(box.y_min, box.y_max, size=(n, P))
    anchors = np.stack([xs, ys], axis=2).reshape(n, -1)
    classes = [CLASSES[i] for i in rng.integers(len(CLASSES), size=n)]
    return AnchorSet(
        anchors,
        space.project(anchors),
        classes,
        np.zeros(n, dtype=np.int64),
        np.full(n, -1, dtype=np.int64),
        template_fingerprint=space.source_fingerprint,
    )


def save(anchors: AnchorSet, path) -> None:
    Path(path).write_text(json.dumps(anchors.to_dict(), separators=(",", ":")) + "\n")


def load(path) -> AnchorSet:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from exc
    return AnchorSet.from_dict(d)
