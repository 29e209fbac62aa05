"""Vectorized road elements: representation, resampling and Chamfer distance.

An element is a chain of ``P`` keypoints in the ego frame (x lateral, y
longitudinal, meters).  Its flat vector form interleaves the coordinates as
``[x1, y1, x2, y2, ..., xP, yP]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateGeometry, DimensionMismatch, OutOfPerceptionRange

DEFAULT_NUM_POINTS = 20


class ElementClass(str, enum.Enum):
    PED_CROSSING = "ped_crossing"
    DIVIDER = "divider"
    BOUNDARY = "boundary"

    @property
    def closed(self) -> bool:
        return self is ElementClass.PED_CROSSING


CLASSES = (ElementClass.PED_CROSSING, ElementClass.DIVIDER, ElementClass.BOUNDARY)


@dataclass(frozen=True)
class PerceptionBox:
    x_min: float = -15.0
    x_max: float = 15.0
    y_min: float = -30.0
    y_max: float = 30.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DataError(f"empty perception box {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def contains(self, points) -> bool:
        pts = as_points(points)
        x, y = pts[:, 0], pts[:, 1]
        return bool(
            np.all((x >= self.x_min) & (x <= self.x_max) & (y >= self.y_min) & (y <= self.y_max))
        )

    def normalize(self, vectors: np.ndarray) -> np.ndarray:
        """Map interleaved coordinates (any leading shape) into the unit square."""
        v = np.asarray(vectors, dtype=float)
        out = np.empty_like(v)
        out[..., 0::2] = (v[..., 0::2] - self.x_min) / self.width
        out[..., 1::2] = (v[..., 1::2] - self.y_min) / self.height
        return out

    def denormalize(self, vectors: np.ndarray) -> np.ndarray:
        v = np.asarray(vectors, dtype=float)
        out = np.empty_like(v)
        out[..., 0::2] = v[..., 0::2] * self.width + self.x_min
        out[..., 1::2] = v[..., 1::2] * self.height + self.y_min
        return out

    def to_dict(self) -> dict:
        return {"x": [self.x_min, self.x_max], "y": [self.y_min, self.y_max]}


DEFAULT_BOX = PerceptionBox()


def as_points(values) -> np.ndarray:
    """Return ``values`` as a ``(P, 2)`` float array.

    Accepts either a flat interleaved vector of even length or a point array.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        if arr.size % 2:
            raise DimensionMismatch(f"element vector has odd length {arr.size}")
        return arr.reshape(-1, 2)
    if arr.ndim == 2 and arr.shape[1] == 2:
        return arr
    raise DimensionMismatch(f"cannot interpret array of shape {arr.shape} as 2-D points")


def to_vector(points) -> np.ndarray:
    return as_points(points).reshape(-1).copy()


@dataclass(frozen=True, eq=False)
class RoadElement:
    cls: ElementClass
    points: np.ndarray
    is_closed: bool
    id: str = ""

    def __post_init__(self):
        pts = np.array(as_points(self.points), dtype=float)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "cls", ElementClass(self.cls))
        if bool(self.is_closed) != self.cls.closed:
            raise DataError(
                f"{self.cls.value} elements must have closed={self.cls.closed}, got {self.is_closed}"
            )

    @property
    def vector(self) -> np.ndarray:
        return self.points.reshape(-1).copy()

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @classmethod
    def from_vector(cls, element_class, vector, id=""):
        element_class = ElementClass(element_class)
        return cls(element_class, as_points(vector), element_class.closed, id)

    def same_as(self, other: "RoadElement") -> bool:
        return (
            self.cls is other.cls
            and self.is_closed == other.is_closed
            and self.id == other.id
            and np.array_equal(self.points, other.points)
        )


def resample(raw_points, target_count: int, closed: bool = False) -> np.ndarray:
    """Resample a chain to ``target_count`` points equally spaced in arclength.

    For closed chains the cycle is walked from the first point back to itself
    and the duplicated closing point is not emitted.
    """
    if target_count < 1:
        raise ValueError("target_count must be positive")
    pts = as_points(raw_points)
    if pts.shape[0] < 2:
        raise DegenerateGeometry("need at least two points to resample")
    if closed:
        pts = np.vstack([pts, pts[:1]])
    seg = np.hypot(*np.diff(pts, axis=0).T)
    keep = np.concatenate([[True], seg > 0])
    knots = pts[keep]
    s = np.concatenate([[0.0], np.cumsum(seg[seg > 0])])
    total = s[-1]
    if total == 0:
        raise DegenerateGeometry("all points coincide (zero arclength)")
    if closed:
        targets = np.arange(target_count) * (total / target_count)
    else:
        targets = np.linspace(0.0, total, target_count)
    out = np.column_stack([np.interp(targets, s, knots[:, 0]), np.interp(targets, s, knots[:, 1])])
    out[0] = pts[0]
    if not closed and target_count > 1:
        out[-1] = pts[-1]
    return out


def signed_area(points) -> float:
    pts = as_points(points)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _lex_less(p, q) -> bool:
    return (p[1], p[0]) < (q[1], q[0])


def canonical_points(points, closed: bool) -> np.ndarray:
    """Fix start point and direction of a chain (order by y, then x)."""
    pts = np.array(as_points(points), dtype=float)
    if not closed:
        if _lex_less(pts[-1], pts[0]):
            pts = pts[::-1].copy()
        return pts
    if signed_area(pts) < 0:
        pts = pts[::-1].copy()
    start = int(np.lexsort((pts[:, 0], pts[:, 1]))[0])
    return np.roll(pts, -start, axis=0)


def canonicalize(e: RoadElement) -> RoadElement:
    return RoadElement(e.cls, canonical_points(e.points, e.is_closed), e.is_closed, e.id)


def make_element(
    element_class,
    raw_points,
    num_points: int = DEFAULT_NUM_POINTS,
    box: PerceptionBox | None = DEFAULT_BOX,
    id: str = "",
    resample_points: bool = True,
) -> RoadElement:
    """Ingest a raw chain: resample, canonicalize and range-check it.

    Elements with any point outside ``box`` are rejected, never clipped.
    """
    element_class = ElementClass(element_class)
    pts = as_points(raw_points)
    if resample_points or pts.shape[0] != num_points:
        pts = resample(pts, num_points, element_class.closed)
    pts = canonical_points(pts, element_class.closed)
    if box is not None and not box.contains(pts):
        raise OutOfPerceptionRange(f"element {id!r} leaves the perception box")
    return RoadElement(element_class, pts, element_class.closed, id)


def chamfer_matrix(a, b, chunk: int = 256) -> np.ndarray:
    """Pairwise Chamfer distances between two stacks of elements.

    ``a`` and ``b`` are ``(n, N)`` vectors or ``(n, P, 2)`` point arrays.  The
    distance is the symmetric mean of nearest-neighbour distances.
    """
    A = np.asarray(a, dtype=float)
    B = np.asarray(b, dtype=float)
    if A.ndim == 2:
        A = A.reshape(A.shape[0], -1, 2)
    if B.ndim == 2:
        B = B.reshape(B.shape[0], -1, 2)
    out = np.empty((A.shape[0], B.shape[0]))
    for lo in range(0, A.shape[0], chunk):
        a_blk = A[lo : lo + chunk]
        diff = a_blk[:, None, :, None, :] - B[None, :, None, :, :]
        d = np.hypot(diff[..., 0], diff[..., 1])  # (na, nb, Pa, Pb)
        out[lo : lo + chunk] = 0.5 * (d.min(axis=3).mean(axis=2) + d.min(axis=2).mean(axis=2))
    return out


def chamfer_distance(a, b) -> float:
    pa, pb = as_points(a), as_points(b)
    return float(chamfer_matrix(pa[None], pb[None])[0, 0])
