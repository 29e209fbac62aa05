"""Scene records, the JSON Lines element format and a synthetic scene generator.

File layout: a header line ``{"format": "prior-fusion-elements", "version": 1}``
followed by one scene per line::

    {"frame_id": "...", "source": "synthetic",
     "elements": [{"id": "...", "class": "divider", "closed": false,
                   "points": [[x, y], ...]}]}

Prediction files use the same layout with a ``confidence`` on every element.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import (
    ConfigInvalid,
    DataError,
    OutOfPerceptionRange,
    ParseError,
    SchemaVersionMismatch,
)
from .evaluation import Prediction
from .geometry import (
    DEFAULT_BOX,
    DEFAULT_NUM_POINTS,
    ElementClass,
    PerceptionBox,
    RoadElement,
    canonical_points,
    make_element,
    resample,
)

try:  # Python < 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

FORMAT = "prior-fusion-elements"
VERSION = 1
HEADER = {"format": FORMAT, "version": VERSION}


class Source(str, enum.Enum):
    SYNTHETIC = "synthetic"
    IMPORTED = "imported"


@dataclass(eq=False)
class SceneRecord:
    frame_id: str
    elements: list
    source: Source = Source.SYNTHETIC

    def same_as(self, other: "SceneRecord") -> bool:
        return (
            self.frame_id == other.frame_id
            and self.source == other.source
            and len(self.elements) == len(other.elements)
            and all(a.same_as(b) for a, b in zip(self.elements, other.elements))
        )


# ---------------------------------------------------------------- generator


def _range(value, name):
    lo, hi = value
    if lo > hi:
        raise ConfigInvalid(f"{name}: empty range [{lo}, {hi}]")
    return (lo, hi)


@dataclass(frozen=True)
class SynthConfig:
    n_frames: int = 100
    seed: int = 0
    num_points: int = DEFAULT_NUM_POINTS
    box: PerceptionBox = DEFAULT_BOX
    dividers: tuple = (1, 4)
    boundaries: tuple = (1, 3)
    crossings: tuple = (0, 2)
    divider_length: tuple = (15.0, 60.0)
    divider_slope: tuple = (-0.15, 0.15)
    divider_curvature: tuple = (-0.004, 0.004)
    lateral_divider_prob: float = 0.15
    boundary_turn_prob: float = 0.35
    boundary_radius: tuple = (5.0, 14.0)
    boundary_curvature: tuple = (-0.002, 0.002)
    crossing_length: tuple = (8.0, 14.0)
    crossing_depth: tuple = (3.0, 5.0)
    crossing_rotation: tuple = (-0.25, 0.25)
    crossing_shear: tuple = (-0.3, 0.3)
    longitudinal_crossing_prob: float = 0.4
    jitter_sigma: float = 0.05

    def __post_init__(self):
        if self.n_frames < 0:
            raise ConfigInvalid("n_frames must be >= 0")
        if self.num_points < 2:
            raise ConfigInvalid("num_points must be >= 2")
        if self.jitter_sigma < 0:
            raise ConfigInvalid("jitter_sigma must be >= 0")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (tuple, list)):
                object.__setattr__(self, f.name, _range(tuple(v), f.name))
        for name in ("dividers", "boundaries", "crossings"):
            lo, hi = getattr(self, name)
            if lo < 0 or int(lo) != lo or int(hi) != hi:
                raise ConfigInvalid(f"{name}: counts must be nonnegative integers")
        for name in ("lateral_divider_prob", "boundary_turn_prob", "longitudinal_crossing_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigInvalid(f"{name} must be a probability")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigInvalid(f"unknown synth config keys: {sorted(unknown)}")
        if "box" in d:
            b = d["box"]
            d["box"] = PerceptionBox(b["x"][0], b["x"][1], b["y"][0], b["y"][1])
        return cls(**d)

    @classmethod
    def from_toml(cls, path) -> "SynthConfig":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data.get("synth", data))


_MAX_TRIES = 200


def _divider_raw(cfg, rng):
    box = cfg.box
    lateral = rng.random() < cfg.lateral_divider_prob
    along = (box.x_min, box.x_max) if lateral else (box.y_min, box.y_max)
    across = (box.y_min, box.y_max) if lateral else (box.x_min, box.x_max)
    length = min(rng.uniform(*cfg.divider_length), along[1] - along[0])
    t0 = rng.uniform(along[0], along[1] - length)
    t = np.linspace(t0, t0 + length, 60)
    tc = t0 + length / 2
    offset = rng.uniform(across[0] + 1.0, across[1] - 1.0)
    a = rng.uniform(*cfg.divider_slope)
    b = rng.uniform(*cfg.divider_curvature)
    s = offset + a * (t - tc) + b * (t - tc) ** 2
    return np.column_stack([s, t] if not lateral else [t, s])


def _boundary_raw(cfg, rng):
    box = cfg.box
    x0 = rng.uniform(box.x_min + 1.0, box.x_max - 1.0)
    if rng.random() >= cfg.boundary_turn_prob:
        y = np.linspace(box.y_min, box.y_max, 120)
        b = rng.uniform(*cfg.boundary_curvature)
        yc = rng.uniform(box.y_min, box.y_max)
        return np.column_stack([x0 + b * (y - yc) ** 2, y])
    # straight run, quarter-circle corner, lateral run to the box edge
    radius = rng.uniform(*cfg.boundary_radius)
    y_turn = rng.uniform(box.y_min + 10.0, box.y_max - radius - 1.0)
    side = 1.0 if rng.random() < 0.5 else -1.0
    straight = np.column_stack([np.full(40, x0), np.linspace(box.y_min, y_turn, 40)])
    phi = np.linspace(0.0, np.pi / 2, 30)
    arc = np.column_stack(
        [x0 + side * radius * (1 - np.cos(phi)), y_turn + radius * np.sin(phi)]
    )
    x_end = box.x_max if side > 0 else box.x_min
    tail = np.column_stack(
        [np.linspace(arc[-1, 0], x_end, 30), np.full(30, arc[-1, 1])]
    )
    pts = np.vstack([straight, arc[1:], tail[1:]])
    return _longest_inside_run(pts, box)


def _longest_inside_run(pts, box):
    inside = (
        (pts[:, 0] >= box.x_min)
        & (pts[:, 0] <= box.x_max)
        & (pts[:, 1] >= box.y_min)
        & (pts[:, 1] <= box.y_max)
    )
    best, start, best_span = None, None, 0
    for i, ok in enumerate(np.append(inside, False)):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            if i - start > best_span:
                best, best_span = (start, i), i - start
            start = None
    if best is None or best_span < 2:
        return None
    return pts[best[0] : best[1]]


def parallelogram_corners(center, length, depth, theta, shear) -> np.ndarray:
    u = length * np.array([np.cos(theta), np.sin(theta)])
    perp = np.array([-np.sin(theta), np.cos(theta)])
    v = depth * (perp + shear * u / length)
    p0 = np.asarray(center, dtype=float) - u / 2 - v / 2
    return np.array([p0, p0 + u, p0 + u + v, p0 + v])


def _crossing_raw(cfg, rng):
    box = cfg.box
    theta = rng.uniform(*cfg.crossing_rotation)
    if rng.random() < cfg.longitudinal_crossing_prob:
        theta += np.pi / 2
    length = rng.uniform(*cfg.crossing_length)
    depth = rng.uniform(*cfg.crossing_depth)
    shear = rng.uniform(*cfg.crossing_shear)
    center = (rng.uniform(box.x_min, box.x_max), rng.uniform(box.y_min, box.y_max))
    corners = parallelogram_corners(center, length, depth, theta, shear)
    if cfg.jitter_sigma > 0:
        corners = corners + rng.normal(0.0, cfg.jitter_sigma, corners.shape)
    return corners


_BUILDERS = {
    ElementClass.DIVIDER: _divider_raw,
    ElementClass.BOUNDARY: _boundary_raw,
    ElementClass.PED_CROSSING: _crossing_raw,
}


def _sample_element(cfg, rng, cls, eid):
    for _ in range(_MAX_TRIES):
        raw = _BUILDERS[cls](cfg, rng)
        if raw is None:
            continue
        try:
            pts = resample(raw, cfg.num_points, cls.closed)
            if cls is not ElementClass.PED_CROSSING and cfg.jitter_sigma > 0:
                pts = pts + rng.normal(0.0, cfg.jitter_sigma, pts.shape)
            return make_element(cls, pts, cfg.num_points, cfg.box, eid, resample_points=False)
        except OutOfPerceptionRange:
            continue
    raise DataError(f"could not place a {cls.value} inside the perception box in {_MAX_TRIES} tries")


def generate_frame(cfg: SynthConfig, index: int) -> SceneRecord:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    frame_id = f"synth-{cfg.seed}-{index:06d}"
    elements = []
    for cls, (lo, hi) in (
        (ElementClass.PED_CROSSING, cfg.crossings),
        (ElementClass.DIVIDER, cfg.dividers),
        (ElementClass.BOUNDARY, cfg.boundaries),
    ):
        for _ in range(int(rng.integers(int(lo), int(hi) + 1))):
            elements.append(_sample_element(cfg, rng, cls, f"{frame_id}/{len(elements)}"))
    return SceneRecord(frame_id, elements, Source.SYNTHETIC)


def generate_synthetic(cfg: SynthConfig) -> list:
    """Synthetic scenes; frame ``i`` depends only on ``(cfg, i)``."""
    return [generate_frame(cfg, i) for i in range(cfg.n_frames)]


def all_elements(records) -> list:
    return [e for rec in records for e in rec.elements]


# ---------------------------------------------------------------- JSONL I/O


def _element_dict(e: RoadElement, confidence=None) -> dict:
    d = {"id": e.id, "class": e.cls.value, "closed": e.is_closed, "points": e.points.tolist()}
    if confidence is not None:
        d["confidence"] = float(confidence)
    return d


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def save_dataset(records, path) -> None:
    lines = [_dump(HEADER)]
    for rec in records:
        lines.append(
            _dump(
                {
                    "frame_id": rec.frame_id,
                    "source": Source(rec.source).value,
                    "elements": [_element_dict(e) for e in rec.elements],
                }
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _read_lines(path):
    text = Path(path).read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(f"{path}: empty file", 1)
    header = _parse_json(lines[0], 1)
    if not isinstance(header, dict) or header.get("format") != FORMAT:
        raise ParseError(f"{path}: missing {FORMAT!r} header", 1)
    if header.get("version") != VERSION:
        raise SchemaVersionMismatch(f"{path}: version {header.get('version')}, expected {VERSION}")
    for lineno, line in enumerate(lines[1:], start=2):
        if line.strip():
            yield lineno, _parse_json(line, lineno)


def _parse_json(line, lineno):
    try:
        return json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON ({exc.msg})", lineno) from exc


def _parse_element(d, lineno, num_points, box, need_confidence):
    try:
        cls = ElementClass(d["class"])
        closed = bool(d["closed"])
        pts = np.asarray(d["points"], dtype=float)
        eid = str(d.get("id", ""))
        conf = float(d["confidence"]) if need_confidence else None
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad element: {exc}", lineno) from exc
    if closed != cls.closed:
        raise ParseError(f"element {eid!r}: class {cls.value} requires closed={cls.closed}", lineno)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ParseError(f"element {eid!r}: points must be a list of [x, y] pairs", lineno)
    if pts.shape[0] == num_points:
        pts = canonical_points(pts, closed)
        if box is not None and not box.contains(pts):
            raise OutOfPerceptionRange(f"element {eid!r} leaves the perception box")
        return RoadElement(cls, pts, closed, eid), conf
    return make_element(cls, pts, num_points, box, eid), conf


def _iter_records(path, num_points, box, need_confidence):
    seen = set()
    for lineno, obj in _read_lines(path):
        try:
            frame_id = str(obj["frame_id"])
            raw_elements = obj["elements"]
            source = Source(obj.get("source", Source.IMPORTED.value))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad scene record: {exc}", lineno) from exc
        if frame_id in seen:
            raise ParseError(f"duplicate frame_id {frame_id!r}", lineno)
        seen.add(frame_id)
        parsed = []
        for d in raw_elements:
            try:
                parsed.append(_parse_element(d, lineno, num_points, box, need_confidence))
            except OutOfPerceptionRange as exc:
                log.warning("line %d: rejected %s", lineno, exc)
        yield frame_id, source, parsed


def load_dataset(path, num_points: int = DEFAULT_NUM_POINTS, box: PerceptionBox | None = DEFAULT_BOX) -> list:
    """Read scene records; elements leaving ``box`` are rejected with a warning."""
    return [
        SceneRecord(fid, [e for e, _ in parsed], src)
        for fid, src, parsed in _iter_records(path, num_points, box, False)
    ]


def save_predictions(predictions, path) -> None:
    """Write predictions grouped by frame, frames in first-seen order."""
    frames = {}
    for p in predictions:
        frames.setdefault(p.frame_id, []).append(p)
    lines = [_dump(HEADER)]
    for fid, preds in frames.items():
        lines.append(
            _dump(
                {
                    "frame_id": fid,
                    "source": Source.SYNTHETIC.value,
                    "elements": [_element_dict(p.element, p.confidence) for p in preds],
                }
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_predictions(path, num_points: int = DEFAULT_NUM_POINTS) -> list:
    out = []
    for fid, _, parsed in _iter_records(path, num_points, None, True):
        out.extend(Prediction(e, conf, fid) for e, conf in parsed)
    return out
