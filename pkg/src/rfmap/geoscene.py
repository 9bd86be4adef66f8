"""Desk-scale scenes and a first-order geometric multipath oracle.

Receivers live on a horizontal plane at ``rx_height``; walls are vertical
segments with a height, so a ray is blocked when its 2D projection crosses
a wall and its height at the crossing is at or below the wall top.
Reflections use the image method (order 1); scatterers and diffraction
corners are point interactions with a fixed extra loss.

Angles are those of arrival at the receiver: elevation is measured from
the zenith (0 deg straight up, 180 deg straight down) and azimuth is the
counter-clockwise angle from +x in ``[-180, 180]``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
INVALID_POWER_DBM = -200.0
_EPS = 1e-9


class PathType(IntEnum):
    NONE = -1
    LOS = 0
    REFLECTION = 1
    SCATTERING = 2
    DIFFRACTION = 3


TYPE_CODES = {
    PathType.LOS: "LOS",
    PathType.REFLECTION: "REFL",
    PathType.SCATTERING: "SCAT",
    PathType.DIFFRACTION: "DIFF",
    PathType.NONE: "NONE",
}
CODE_TYPES = {v: k for k, v in TYPE_CODES.items()}
PARAM_KINDS = ("power", "delay", "elevation", "azimuth")


class ParseError(ValueError):
    """Malformed dataset or scene file."""


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Wall:
    start: tuple[float, float]
    end: tuple[float, float]
    height: float
    reflection: float = 0.7


@dataclass(frozen=True)
class PointObject:
    position: tuple[float, float, float]
    loss_db: float


@dataclass(frozen=True)
class Scene:
    tx: tuple[float, float, float]
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax
    rx_height: float = 1.5
    walls: tuple[Wall, ...] = ()
    scatterers: tuple[PointObject, ...] = ()
    diffraction_edges: tuple[PointObject, ...] = ()
    f_c: float = 3.5e9
    tx_power: float = 0.0

    def __post_init__(self):
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ValueError(f"degenerate bounds {self.bounds}")
        if not (xmin <= self.tx[0] <= xmax and ymin <= self.tx[1] <= ymax):
            raise ValueError("transmitter lies outside the scene bounds")
        if self.f_c <= 0:
            raise ValueError("carrier frequency must be positive")
        for w in self.walls:
            if not 0.0 < w.reflection <= 1.0:
                raise ValueError(f"reflection coefficient {w.reflection} not in (0, 1]")
        for obj in (*self.scatterers, *self.diffraction_edges):
            if obj.loss_db < 0:
                raise ValueError("object losses must be non-negative")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    def contains(self, xy) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= xy[0] <= xmax and ymin <= xy[1] <= ymax

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        try:
            return cls(
                tx=tuple(d["tx"]),
                bounds=tuple(d["bounds"]),
                rx_height=float(d["rx_height"]),
                walls=tuple(Wall(tuple(w["start"]), tuple(w["end"]), float(w["height"]),
                                 float(w["reflection"])) for w in d["walls"]),
                scatterers=tuple(PointObject(tuple(s["position"]), float(s["loss_db"]))
                                 for s in d["scatterers"]),
                diffraction_edges=tuple(PointObject(tuple(s["position"]), float(s["loss_db"]))
                                        for s in d["diffraction_edges"]),
                f_c=float(d["f_c"]),
                tx_power=float(d["tx_power"]),
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"scene description is missing or mistyped a field: {exc}") from exc


@dataclass(frozen=True)
class PathComponent:
    power_dbm: float
    delay_ns: float
    elevation_deg: float
    azimuth_deg: float
    path_type: PathType
    valid: bool = True

    @classmethod
    def invalid(cls) -> "PathComponent":
        return cls(INVALID_POWER_DBM, 0.0, 0.0, 0.0, PathType.NONE, False)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.power_dbm, self.delay_ns, self.elevation_deg, self.azimuth_deg)


@dataclass(frozen=True)
class MultipathRecord:
    coords: tuple[float, float]
    paths: tuple[PathComponent, ...]


@dataclass
class Dataset:
    """Grid of multipath records stored column-wise.

    ``values`` has shape ``(N, L, 4)`` with the last axis ordered as
    ``PARAM_KINDS``; invalid paths carry the sentinel ``(-200, 0, 0, 0)``.
    """

    scene: Scene
    coords: np.ndarray
    values: np.ndarray
    types: np.ndarray
    valid: np.ndarray
    grid_spacing: float

    @property
    def L(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def Y(self) -> np.ndarray:
        """Flat ``(N, 4L)`` target matrix, path-major, NaN where invalid."""
        out = np.where(self.valid[..., None], self.values, np.nan)
        return out.reshape(len(self), -1)

    def record(self, i: int) -> MultipathRecord:
        paths = tuple(
            PathComponent(*map(float, self.values[i, l]), PathType(int(self.types[i, l])),
                          bool(self.valid[i, l]))
            for l in range(self.L)
        )
        return MultipathRecord((float(self.coords[i, 0]), float(self.coords[i, 1])), paths)

    @property
    def records(self) -> list[MultipathRecord]:
        return [self.record(i) for i in range(len(self))]

    @classmethod
    def from_records(cls, scene: Scene, records: Sequence[MultipathRecord],
                     grid_spacing: float) -> "Dataset":
        if not records:
            raise ValueError("no records")
        L = len(records[0].paths)
        coords = np.array([r.coords for r in records], dtype=np.float64)
        values = np.array([[p.as_tuple() for p in r.paths] for r in records], dtype=np.float64)
        types = np.array([[int(p.path_type) for p in r.paths] for r in records], dtype=np.int64)
        valid = np.array([[p.valid for p in r.paths] for r in records], dtype=bool)
        if values.shape != (len(records), L, 4):
            raise ValueError("records do not all carry L paths")
        return cls(scene, coords, values, types, valid, grid_spacing)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.scene, self.coords[idx], self.values[idx], self.types[idx],
                       self.valid[idx], self.grid_spacing)

    def equals(self, other: "Dataset") -> bool:
        return (
            self.scene == other.scene
            and self.grid_spacing == other.grid_spacing
            and np.array_equal(self.coords, other.coords)
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.types, other.types)
            and np.array_equal(self.valid, other.valid)
        )


@dataclass
class SplitSpec:
    known: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    unknown: np.ndarray
    rate: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "seed": self.seed,
            **{k: getattr(self, k).tolist() for k in ("known", "train", "val", "test", "unknown")},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        arrays = {k: np.asarray(d[k], dtype=np.int64) for k in ("known", "train", "val", "test", "unknown")}
        return cls(rate=float(d["rate"]), seed=int(d["seed"]), **arrays)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SplitSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()


# --------------------------------------------------------------------------
# Geometry helpers
# --------------------------------------------------------------------------


def free_space_path_loss(d: float, f_c: float) -> float:
    """Free-space path loss in dB at 3D distance ``d`` (m)."""
    if d <= 0:
        raise ValueError("distance must be positive")
    return (20.0 * math.log10(d) + 20.0 * math.log10(f_c)
            + 20.0 * math.log10(4.0 * math.pi / SPEED_OF_LIGHT))


def arrival_angles(rx: Sequence[float], source: Sequence[float]) -> tuple[float, float]:
    """Elevation (from zenith) and azimuth of the direction from ``rx`` to ``source``."""
    dx, dy, dz = source[0] - rx[0], source[1] - rx[1], source[2] - rx[2]
    r = math.sqrt(dx * dx + dy * dy + dz * dz)
    elevation = math.degrees(math.acos(max(-1.0, min(1.0, dz / r))))
    azimuth = math.degrees(math.atan2(dy, dx))
    return elevation, azimuth


def _segment_crossing(p, q, a, b) -> Optional[tuple[float, float]]:
    """Parameters ``(t, u)`` where segment p->q meets segment a->b, if they cross."""
    rx, ry = q[0] - p[0], q[1] - p[1]
    sx, sy = b[0] - a[0], b[1] - a[1]
    denom = rx * sy - ry * sx
    if abs(denom) < 1e-12:
        return None
    qpx, qpy = a[0] - p[0], a[1] - p[1]
    t = (qpx * sy - qpy * sx) / denom
    u = (qpx * ry - qpy * rx) / denom
    if _EPS < t < 1.0 - _EPS and -_EPS <= u <= 1.0 + _EPS:
        return t, u
    return None


def segment_blocked(scene: Scene, p: Sequence[float], q: Sequence[float],
                    skip: Optional[int] = None) -> bool:
    """True if any wall (other than index ``skip``) blocks the 3D segment p->q."""
    for i, wall in enumerate(scene.walls):
        if i == skip:
            continue
        hit = _segment_crossing(p, q, wall.start, wall.end)
        if hit is None:
            continue
        z = p[2] + hit[0] * (q[2] - p[2])
        if z <= wall.height:
            return True
    return False


def _rx3(scene: Scene, rx) -> tuple[float, float, float]:
    if not scene.contains(rx):
        raise ValueError(f"receiver {tuple(rx)} lies outside the scene bounds")
    return (float(rx[0]), float(rx[1]), scene.rx_height)


def _component(scene: Scene, rx3, last_point, length: float, extra_db: float,
               path_type: PathType) -> PathComponent:
    power = scene.tx_power - free_space_path_loss(length, scene.f_c) + extra_db
    elevation, azimuth = arrival_angles(rx3, last_point)
    return PathComponent(power, length / SPEED_OF_LIGHT * 1e9, elevation, azimuth, path_type)


# --------------------------------------------------------------------------
# Tracing
# --------------------------------------------------------------------------


def trace_los(scene: Scene, rx) -> Optional[PathComponent]:
    rx3 = _rx3(scene, rx)
    if segment_blocked(scene, scene.tx, rx3):
        return None
    return _component(scene, rx3, scene.tx, math.dist(scene.tx, rx3), 0.0, PathType.LOS)


def _mirror(point, a, b) -> tuple[float, float]:
    dx, dy = b[0] - a[0], b[1] - a[1]
    n2 = dx * dx + dy * dy
    t = ((point[0] - a[0]) * dx + (point[1] - a[1]) * dy) / n2
    fx, fy = a[0] + t * dx, a[1] + t * dy
    return 2 * fx - point[0], 2 * fy - point[1]


def reflection_point(scene: Scene, wall_index: int, rx3) -> Optional[tuple[float, float, float]]:
    """3D specular point on a wall for the tx->rx pair, or None if off-segment."""
    wall = scene.walls[wall_index]
    tx = scene.tx
    ix, iy = _mirror(tx, wall.start, wall.end)
    # the line image->rx must cross the wall line within the segment
    sx, sy = wall.end[0] - wall.start[0], wall.end[1] - wall.start[1]
    rx_, ry_ = rx3[0] - ix, rx3[1] - iy
    denom = rx_ * sy - ry_ * sx
    if abs(denom) < 1e-12:
        return None
    qpx, qpy = wall.start[0] - ix, wall.start[1] - iy
    t = (qpx * sy - qpy * sx) / denom
    u = (qpx * ry_ - qpy * rx_) / denom
    if not (_EPS < t < 1.0 - _EPS and 0.0 <= u <= 1.0):
        return None
    z = tx[2] + t * (rx3[2] - tx[2])
    if z > wall.height:
        return None
    return ix + t * rx_, iy + t * ry_, z


def trace_reflections(scene: Scene, rx, max_order: int = 1) -> list[PathComponent]:
    if max_order != 1:
        raise ValueError("only first-order reflections are traced")
    rx3 = _rx3(scene, rx)
    tx = scene.tx
    out = []
    for i, wall in enumerate(scene.walls):
        # tx and rx must be on the same side of the wall line
        sx, sy = wall.end[0] - wall.start[0], wall.end[1] - wall.start[1]
        side_tx = sx * (tx[1] - wall.start[1]) - sy * (tx[0] - wall.start[0])
        side_rx = sx * (rx3[1] - wall.start[1]) - sy * (rx3[0] - wall.start[0])
        if side_tx * side_rx <= 0:
            continue
        hit = reflection_point(scene, i, rx3)
        if hit is None:
            continue
        if segment_blocked(scene, tx, hit, skip=i) or segment_blocked(scene, hit, rx3, skip=i):
            continue
        length = math.dist(tx, hit) + math.dist(hit, rx3)
        out.append(_component(scene, rx3, hit, length, 20.0 * math.log10(wall.reflection),
                              PathType.REFLECTION))
    return out


def trace_scatter_diffract(scene: Scene, rx) -> list[PathComponent]:
    rx3 = _rx3(scene, rx)
    tx = scene.tx
    out = []
    groups = ((scene.scatterers, PathType.SCATTERING), (scene.diffraction_edges, PathType.DIFFRACTION))
    for objects, kind in groups:
        for obj in objects:
            s = obj.position
            leg1, leg2 = math.dist(tx, s), math.dist(s, rx3)
            if leg1 < _EPS or leg2 < _EPS:
                continue
            if segment_blocked(scene, tx, s) or segment_blocked(scene, s, rx3):
                continue
            out.append(_component(scene, rx3, s, leg1 + leg2, -obj.loss_db, kind))
    return out


def trace_all(scene: Scene, rx, L: int) -> MultipathRecord:
    comps = []
    los = trace_los(scene, rx)
    if los is not None:
        comps.append(los)
    comps.extend(trace_reflections(scene, rx))
    comps.extend(trace_scatter_diffract(scene, rx))
    # stable sort keeps LoS first on exact power ties
    comps.sort(key=lambda c: -c.power_dbm)
    comps = comps[:L] + [PathComponent.invalid()] * max(0, L - len(comps))
    return MultipathRecord((float(rx[0]), float(rx[1])), tuple(comps))


# --------------------------------------------------------------------------
# Scenes and datasets
# --------------------------------------------------------------------------


def synthesize_scene(seed: int, bounds=(0.0, 0.0, 64.0, 64.0), n_walls: int = 4,
                     n_scatterers: int = 2, *, f_c: float = 3.5e9, tx_height: float = 10.0,
                     rx_height: float = 1.5, scatter_loss_db: float = 10.0,
                     diffraction_loss_db: float = 15.0, tx_power: float = 0.0) -> Scene:
    """Random scene with axis-aligned walls; wall end points become diffraction corners.

    Reflection coefficients are drawn from ``[0.3, 0.8]`` so reflected power
    never exceeds 0.7 of the free-space value at the same length.
    """
    if n_walls < 0 or n_scatterers < 0:
        raise ValueError("object counts must be non-negative")
    xmin, ymin, xmax, ymax = map(float, bounds)
    if not (xmax > xmin and ymax > ymin):
        raise ValueError(f"degenerate bounds {bounds}")
    rng = np.random.default_rng(seed)
    w, h = xmax - xmin, ymax - ymin
    tx = (float(xmin + w * rng.uniform(0.3, 0.7)), float(ymin + h * rng.uniform(0.3, 0.7)),
          float(tx_height))
    clearance = 0.08 * min(w, h)

    walls = []
    while len(walls) < n_walls:
        length = rng.uniform(0.15, 0.35) * min(w, h)
        horizontal = rng.random() < 0.5
        cx = rng.uniform(xmin + 0.05 * w, xmax - 0.05 * w)
        cy = rng.uniform(ymin + 0.05 * h, ymax - 0.05 * h)
        if horizontal:
            a = (float(np.clip(cx - length / 2, xmin, xmax)), float(cy))
            b = (float(np.clip(cx + length / 2, xmin, xmax)), float(cy))
        else:
            a = (float(cx), float(np.clip(cy - length / 2, ymin, ymax)))
            b = (float(cx), float(np.clip(cy + length / 2, ymin, ymax)))
        if _point_segment_distance(tx, a, b) < clearance:
            continue
        walls.append(Wall(a, b, float(rng.uniform(0.6, 2.0) * tx_height),
                          float(rng.uniform(0.3, 0.8))))

    scatterers = tuple(
        PointObject((float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax)),
                     float(rng.uniform(1.0, 0.5 * tx_height))), float(scatter_loss_db))
        for _ in range(n_scatterers)
    )
    edges = tuple(
        PointObject((float(p[0]), float(p[1]), 0.5 * wall.height), float(diffraction_loss_db))
        for wall in walls for p in (wall.start, wall.end)
    )
    return Scene(tx=tx, bounds=(xmin, ymin, xmax, ymax), rx_height=float(rx_height),
                 walls=tuple(walls), scatterers=scatterers, diffraction_edges=edges,
                 f_c=float(f_c), tx_power=float(tx_power))


def _point_segment_distance(p, a, b) -> float:
    ax, ay = b[0] - a[0], b[1] - a[1]
    n2 = ax * ax + ay * ay
    t = 0.0 if n2 == 0 else max(0.0, min(1.0, ((p[0] - a[0]) * ax + (p[1] - a[1]) * ay) / n2))
    return math.hypot(p[0] - (a[0] + t * ax), p[1] - (a[1] + t * ay))


def grid_coords(bounds, spacing: float) -> np.ndarray:
    """Cell-centred grid: ``floor(extent / spacing)`` points per axis, offset by half a cell.

    A 64 x 64 m area at 1 m spacing yields 4096 receivers at 0.5, 1.5, ..., 63.5.
    """
    if spacing <= 0:
        raise ValueError("grid spacing must be positive")
    xmin, ymin, xmax, ymax = bounds
    nx = int(math.floor((xmax - xmin) / spacing + 1e-9))
    ny = int(math.floor((ymax - ymin) / spacing + 1e-9))
    if nx == 0 or ny == 0:
        raise ValueError("grid spacing leaves an empty grid")
    xs = xmin + (np.arange(nx) + 0.5) * spacing
    ys = ymin + (np.arange(ny) + 0.5) * spacing
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def generate_dataset(scene: Scene, grid_spacing: float = 1.0, L: int = 5) -> Dataset:
    if L < 1:
        raise ValueError("L must be at least 1")
    coords = grid_coords(scene.bounds, grid_spacing)
    records = [trace_all(scene, xy, L) for xy in coords]
    return Dataset.from_records(scene, records, float(grid_spacing))


def sample_split(dataset: Dataset | int, rate: float, seed: int) -> SplitSpec:
    """Uniform random known subset, partitioned 7 : 1.5 : 1.5 into train/val/test."""
    if not 0.0 < rate < 1.0:
        raise ValueError(f"sampling rate must lie in (0, 1), got {rate}")
    n = dataset if isinstance(dataset, int) else len(dataset)
    n_known = int(round(rate * n))
    n_train = int(round(0.7 * n_known))
    n_val = int(round(0.15 * n_known))
    if n_train == 0:
        raise ValueError(f"rate {rate} on {n} points leaves an empty training set")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    known = np.sort(perm[:n_known])
    unknown = np.sort(perm[n_known:])
    order = rng.permutation(known)
    train = np.sort(order[:n_train])
    val = np.sort(order[n_train:n_train + n_val])
    test = np.sort(order[n_train + n_val:])
    return SplitSpec(known, train, val, test, unknown, float(rate), int(seed))


def augment(coords: np.ndarray, targets: np.ndarray, rounds: int = 5, jitter_sigma: float = 0.1,
            rng: np.random.Generator | None = None, extra: Sequence[np.ndarray] = ()):
    """Stack ``rounds`` jittered clones below the originals.

    Only coordinates are perturbed; ``targets`` and any ``extra`` per-row
    arrays are repeated unchanged. Returns ``(coords, targets, *extra)``.
    """
    if jitter_sigma < 0:
        raise ValueError("jitter_sigma must be non-negative")
    rng = np.random.default_rng(0) if rng is None else rng
    coords = np.asarray(coords, dtype=np.float64)
    reps = rounds + 1
    out_coords = np.tile(coords, (reps, 1))
    if jitter_sigma > 0 and rounds > 0:
        out_coords[len(coords):] += rng.normal(0.0, jitter_sigma, size=(rounds * len(coords), 2))
    tiled = [np.tile(a, (reps,) + (1,) * (a.ndim - 1)) for a in (targets, *extra)]
    return (out_coords, *tiled)


# --------------------------------------------------------------------------
# File formats
# --------------------------------------------------------------------------


def dataset_header(L: int) -> list[str]:
    cols = ["x", "y"]
    for l in range(1, L + 1):
        cols += [f"p{l}_dbm", f"tau{l}_ns", f"theta{l}_deg", f"phi{l}_deg", f"type{l}"]
    return cols


def write_table(path, coords: np.ndarray, values: np.ndarray, types: np.ndarray) -> None:
    """Write rows in the dataset CSV schema (also used for predictions)."""
    L = values.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(dataset_header(L))
        for xy, vals, tys in zip(coords, values, types):
            row = [repr(float(xy[0])), repr(float(xy[1]))]
            for l in range(L):
                row += [repr(float(v)) for v in vals[l]]
                row.append(TYPE_CODES[PathType(int(tys[l]))])
            writer.writerow(row)


def write_dataset(dataset: Dataset, path, scene_path=None) -> None:
    write_table(path, dataset.coords, dataset.values, dataset.types)
    if scene_path is not None:
        write_scene(dataset.scene, scene_path)


def read_table(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if len(header) < 7 or (len(header) - 2) % 5 != 0 or header[:2] != ["x", "y"]:
            raise ParseError(f"{path}:1: unrecognised header")
        L = (len(header) - 2) // 5
        if header != dataset_header(L):
            raise ParseError(f"{path}:1: unrecognised header")
        coords, values, types = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                coords.append((float(row[0]), float(row[1])))
                vals, tys = [], []
                for l in range(L):
                    base = 2 + 5 * l
                    vals.append([float(v) for v in row[base:base + 4]])
                    tys.append(int(CODE_TYPES[row[base + 4]]))
            except (ValueError, KeyError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            values.append(vals)
            types.append(tys)
    if not coords:
        raise ParseError(f"{path}: no records")
    return np.array(coords), np.array(values), np.array(types, dtype=np.int64)


def read_dataset(path, scene: Scene | None = None, scene_path=None,
                 grid_spacing: float | None = None) -> Dataset:
    """Read a dataset CSV; the scene comes from ``scene`` or ``scene_path``."""
    if scene is None:
        if scene_path is None:
            raise ValueError("a scene or scene_path is required")
        scene = read_scene(scene_path)
    coords, values, types = read_table(path)
    if grid_spacing is None:
        xs = np.unique(coords[:, 0])
        grid_spacing = float(np.min(np.diff(xs))) if xs.size > 1 else 1.0
    return Dataset(scene, coords, values, types, types != PathType.NONE, float(grid_spacing))


def write_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_scene(path) -> Scene:
    try:
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    return Scene.from_dict(blob)


def write_split(split: SplitSpec, path) -> None:
    Path(path).write_text(json.dumps(split.to_dict()) + "\n", encoding="utf-8")


def read_split(path) -> SplitSpec:
    return SplitSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
