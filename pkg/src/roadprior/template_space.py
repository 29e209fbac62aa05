"""Low-rank shape template space built from the SVD of the element matrix.

The element matrix ``A`` holds one flattened element per column (``N x L``).
Its top-``M`` left singular vectors ``U_M`` form an orthonormal basis; an
element ``r`` is represented by the coefficients ``c = U_M^T r`` and
approximated by ``U_M c``.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    OutOfRange,
    ParseError,
    RankDeficientWarning,
    SchemaVersionMismatch,
)
from .geometry import CLASSES, ElementClass

FORMAT = "roadprior-templates"
VERSION = 1
DEFAULT_RANK = 20
ORTHONORMALITY_TOL = 1e-10
# The Gram path (eigh of A A^T) is used once L exceeds this multiple of N.
GRAM_RATIO = 4


@dataclass(eq=False)
class ElementMatrix:
    """Flattened elements as columns, with their class labels in column order."""

    data: np.ndarray
    class_labels: list = field(default_factory=list)
    mean_removed: bool = False
    mean: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[1] < 1:
            raise DimensionMismatch(f"element matrix must be N x L with L >= 1, got {self.data.shape}")
        if self.class_labels and len(self.class_labels) != self.data.shape[1]:
            raise DimensionMismatch("one class label per column required")
        self.class_labels = [ElementClass(c) for c in self.class_labels]

    @classmethod
    def from_elements(cls, elements, center: bool = False) -> "ElementMatrix":
        elements = list(elements)
        if not elements:
            raise DataError("cannot build an element matrix from zero elements")
        data = np.stack([e.vector for e in elements], axis=1)
        labels = [e.cls for e in elements]
        mean = None
        if center:
            mean = data.mean(axis=1)
            data = data - mean[:, None]
        return cls(data, labels, center, mean)

    @classmethod
    def from_records(cls, records, center: bool = False, element_class=None) -> "ElementMatrix":
        elems = [e for rec in records for e in rec.elements]
        if element_class is not None:
            elems = [e for e in elems if e.cls is ElementClass(element_class)]
        return cls.from_elements(elems, center=center)

    @property
    def N(self) -> int:
        return self.data.shape[0]

    @property
    def L(self) -> int:
        return self.data.shape[1]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.asarray(self.data.shape, dtype=np.int64).tobytes())
        h.update(self.data.tobytes())
        h.update(",".join(c.value for c in self.class_labels).encode())
        h.update(b"centered" if self.mean_removed else b"raw")
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class TemplateSpace:
    basis: np.ndarray  # N x M, orthonormal columns
    singular_values: np.ndarray  # all min(N, L) values, nonincreasing
    source_fingerprint: str = ""
    mean_removed: bool = False
    mean: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.basis.shape[0]

    @property
    def M(self) -> int:
        return self.basis.shape[1]

    @property
    def rank(self) -> int:
        s = self.singular_values
        if s.size == 0 or s[0] == 0:
            return 0
        tol = s[0] * max(self.N, s.size) * np.finfo(float).eps
        return int(np.count_nonzero(s > tol))

    def _offset(self):
        return self.mean if self.mean is not None else 0.0

    def project(self, r) -> np.ndarray:
        """Coefficients of one vector ``(N,)`` or a stack ``(K, N)``."""
        r = np.asarray(r, dtype=float)
        if r.shape[-1] != self.N:
            raise DimensionMismatch(f"expected vectors of length {self.N}, got {r.shape[-1]}")
        return (r - self._offset()) @ self.basis

    def reconstruct(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        if c.shape[-1] != self.M:
            raise DimensionMismatch(f"expected {self.M} coefficients, got {c.shape[-1]}")
        return c @ self.basis.T + self._offset()

    def explained_variance(self, m: int) -> float:
        """Fraction of the energy of ``A`` retained by the first ``m`` directions."""
        r = self.rank
        if not 1 <= m <= r:
            raise OutOfRange(f"m must lie in [1, {r}], got {m}")
        energy = self.singular_values[:r] ** 2
        return float(energy[:m].sum() / energy.sum())

    def residual_energy(self) -> float:
        """Sum of squared discarded singular values (the rank-M Frobenius error)."""
        return float(np.sum(self.singular_values[self.M :] ** 2))

    def to_dict(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "N": self.N,
            "M": self.M,
            "basis": self.basis.reshape(-1).tolist(),
            "singular_values": self.singular_values.tolist(),
            "source_fingerprint": self.source_fingerprint,
            "mean_removed": self.mean_removed,
            "mean": None if self.mean is None else self.mean.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TemplateSpace":
        if d.get("format") != FORMAT:
            raise DataError(f"not a template file (format={d.get('format')!r})")
        if d.get("version") != VERSION:
            raise SchemaVersionMismatch(f"template file version {d.get('version')}, expected {VERSION}")
        n, m = int(d["N"]), int(d["M"])
        basis = np.asarray(d["basis"], dtype=float)
        if basis.size != n * m:
            raise DimensionMismatch(f"basis has {basis.size} entries, expected {n}x{m}")
        basis = basis.reshape(n, m)
        check_orthonormal(basis)
        mean = d.get("mean")
        return cls(
            basis,
            np.asarray(d["singular_values"], dtype=float),
            d.get("source_fingerprint", ""),
            bool(d.get("mean_removed", False)),
            None if mean is None else np.asarray(mean, dtype=float),
        )


def check_orthonormal(basis: np.ndarray, tol: float = ORTHONORMALITY_TOL) -> None:
    err = np.max(np.abs(basis.T @ basis - np.eye(basis.shape[1]))) if basis.size else 0.0
    if err >= tol:
        raise DataError(f"basis is not orthonormal (max deviation {err:.3g})")


def gram_matrix(data: np.ndarray, chunk: int | None = None) -> np.ndarray:
    """``A A^T`` accumulated over column blocks of ``chunk`` elements."""
    n, L = data.shape
    if chunk is None or chunk >= L:
        return data @ data.T
    G = np.zeros((n, n))
    for lo in range(0, L, chunk):
        blk = data[:, lo : lo + chunk]
        G += blk @ blk.T
    return G


def _fix_signs(U: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def fit(matrix: ElementMatrix, M: int = DEFAULT_RANK, method: str = "auto", chunk=None) -> TemplateSpace:
    """Fit the rank-``M`` template space of ``matrix``.

    ``method`` is ``"svd"`` (thin SVD of A), ``"gram"`` (eigendecomposition of
    the ``N x N`` Gram matrix) or ``"auto"``.  Singular values on the Gram
    path are recomputed as ``||u_i^T A||`` so small ones keep full precision.
    """
    A = matrix.data
    n, L = A.shape
    if not 1 <= M <= min(n, L):
        raise OutOfRange(f"M must satisfy 1 <= M <= min(N, L) = {min(n, L)}, got M={M}")
    if method == "auto":
        method = "gram" if L > GRAM_RATIO * n else "svd"
    if method == "svd":
        U, s, _ = np.linalg.svd(A, full_matrices=False)
    elif method == "gram":
        _, U = np.linalg.eigh(gram_matrix(A, chunk))
        U = U[:, ::-1]
        s = np.linalg.norm(U.T @ A, axis=1)
        order = np.argsort(-s, kind="stable")
        U, s = U[:, order], s[order]
        k = min(n, L)
        U, s = U[:, :k], s[:k]
    else:
        raise ValueError(f"unknown method {method!r}")
    U = _fix_signs(U[:, :M])
    if s[0] == 0 or s[M - 1] / s[0] < 1e-12:
        warnings.warn(
            "sigma_M / sigma_1 below 1e-12: basis directions beyond the numerical rank are unreliable",
            RankDeficientWarning,
            stacklevel=2,
        )
    U = np.ascontiguousarray(U)
    return TemplateSpace(U, s.copy(), matrix.fingerprint(), matrix.mean_removed, matrix.mean)


def fit_per_class(records, M: int = DEFAULT_RANK, center: bool = False) -> dict:
    """One template space per element class present in ``records``."""
    out = {}
    for c in CLASSES:
        elems = [e for rec in records for e in rec.elements if e.cls is c]
        if elems:
            matrix = ElementMatrix.from_elements(elems, center=center)
            out[c] = fit(matrix, min(M, matrix.N, matrix.L))
    return out


def reconstruction_error(space: TemplateSpace, matrix: ElementMatrix) -> float:
    """Direct evaluation of sum_j ||a_j - U_M U_M^T a_j||^2 over the columns."""
    A = matrix.data
    U = space.basis
    R = A - U @ (U.T @ A)
    return float(np.sum(R * R))


def shape_space_loss(space: TemplateSpace, predicted, target) -> float:
    """L1 distance between the template coefficients of two elements."""
    return float(np.sum(np.abs(space.project(predicted) - space.project(target))))


def dominant_orientation(vector) -> float:
    """Principal-axis angle in ``[0, pi)`` of a vector read as 2-D points."""
    pts = np.asarray(vector, dtype=float).reshape(-1, 2)
    pts = pts - pts.mean(axis=0)
    w, v = np.linalg.eigh(pts.T @ pts)
    ax = v[:, np.argmax(w)]
    return float(np.arctan2(ax[1], ax[0]) % np.pi)


def save(space: TemplateSpace, path) -> None:
    Path(path).write_text(json.dumps(space.to_dict(), separators=(",", ":")) + "\n")


def load(path) -> TemplateSpace:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.lineno) from exc
    return TemplateSpace.from_dict(d)
