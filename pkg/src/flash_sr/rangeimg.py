"""Spherical projection between point clouds and range images, plus file I/O.

A range image stores, per (row, column) cell, the Euclidean distance to the
nearest return whose ray falls in that cell. Azimuth maps to columns (wrapping
at the 360 degree seam), elevation maps to rows across a fixed vertical field
of view. Invalid cells hold 0 with an explicit mask rather than a sentinel
range.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

FRIM_MAGIC = b"FRIM"
FRIM_VERSION = 1


@dataclass
class PointCloud:
    """Unordered set of 3D points in meters, shape (n, 3) float64."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (n, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("points contain non-finite coordinates")
        self.points = pts

    @property
    def count(self) -> int:
        return self.points.shape[0]


@dataclass
class ProjectionConfig:
    """Geometry of the sensor grid: rows x columns over a vertical FOV."""

    height: int = 64
    width: int = 1024
    theta_max: float = math.radians(2.0)
    theta_min: float = math.radians(-24.8)
    r_min: float = 0.0
    r_max: float = 80.0

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("height and width must be positive")
        if not self.theta_max > self.theta_min:
            raise ValueError("theta_max must exceed theta_min")
        if not (self.r_max > self.r_min >= 0.0):
            raise ValueError("need r_max > r_min >= 0")

    def with_height(self, height: int) -> "ProjectionConfig":
        return ProjectionConfig(height, self.width, self.theta_max,
                                self.theta_min, self.r_min, self.r_max)


@dataclass
class RangeImage:
    """H x W range values in meters; mask marks cells holding a real return."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise ValueError("values and mask must share a 2D shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _spherical_uv(points: np.ndarray, cfg: ProjectionConfig):
    """Continuous (pre-floor) image coordinates and range for each point."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    r = np.sqrt(x * x + y * y + z * z)
    azimuth = np.arctan2(y, x)
    elevation = np.arctan2(z, np.hypot(x, y))
    u = cfg.width / 2.0 - (cfg.width / (2.0 * math.pi)) * azimuth
    v = cfg.height * (cfg.theta_max - elevation) / (cfg.theta_max - cfg.theta_min)
    return u, v, r


def project(cloud: PointCloud, cfg: ProjectionConfig) -> tuple[RangeImage, int]:
    """Spherical projection; nearest return wins cell collisions.

    Returns the image and the number of points dropped for falling outside
    the vertical field of view or the [r_min, r_max] range band.
    """
    h, w = cfg.height, cfg.width
    u, v, r = _spherical_uv(cloud.points, cfg)
    ui = np.floor(u).astype(np.int64) % w
    vi = np.floor(v).astype(np.int64)
    keep = (vi >= 0) & (vi < h) & (r >= cfg.r_min) & (r <= cfg.r_max)
    dropped = int(cloud.count - keep.sum())

    flat = np.full(h * w, np.inf)
    np.minimum.at(flat, vi[keep] * w + ui[keep], r[keep])
    mask = np.isfinite(flat).reshape(h, w)
    values = np.where(mask, flat.reshape(h, w), 0.0)
    return RangeImage(values, mask), dropped


def unproject(img: RangeImage, cfg: ProjectionConfig) -> PointCloud:
    """Emit one point per valid cell along the cell-center ray."""
    if img.shape != (cfg.height, cfg.width):
        raise ValueError(f"image shape {img.shape} does not match config "
                         f"({cfg.height}, {cfg.width})")
    vv, uu = np.nonzero(img.mask)
    r = img.values[vv, uu]
    azimuth = (cfg.width / 2.0 - (uu + 0.5)) * (2.0 * math.pi / cfg.width)
    elevation = cfg.theta_max - (vv + 0.5) * (cfg.theta_max - cfg.theta_min) / cfg.height
    ce = np.cos(elevation)
    pts = np.stack([r * ce * np.cos(azimuth),
                    r * ce * np.sin(azimuth),
                    r * np.sin(elevation)], axis=1)
    return PointCloud(pts)


def log_transform(img: RangeImage) -> RangeImage:
    """Compress ranges r -> ln(r + 1) on valid cells; invalid cells stay 0."""
    vals = img.values[img.mask]
    if vals.size and vals.min() < 0.0:
        raise ValueError("negative range encountered; input is corrupt")
    out = np.where(img.mask, np.log1p(img.values), 0.0)
    return RangeImage(out, img.mask.copy())


def inverse_log_transform(img: RangeImage) -> RangeImage:
    """Invert the log compression: y -> exp(y) - 1 on valid cells."""
    out = np.where(img.mask, np.expm1(img.values), 0.0)
    return RangeImage(out, img.mask.copy())


def downsample_rows(img: RangeImage, factor: int) -> RangeImage:
    """Keep rows with index divisible by factor, simulating a sparser sensor."""
    h = img.shape[0]
    if factor < 1 or h % factor != 0:
        raise ValueError(f"height {h} not divisible by factor {factor}")
    return RangeImage(img.values[::factor].copy(), img.mask[::factor].copy())


def read_velodyne_bin(path: str) -> PointCloud:
    """Parse packed little-endian float32 (x, y, z, intensity) records."""
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 4 != 0:
        raise ValueError(f"{path}: truncated record (got {raw.size} floats)")
    return PointCloud(raw.reshape(-1, 4)[:, :3].astype(np.float64))


def write_rangeimage(img: RangeImage, path: str) -> None:
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(FRIM_MAGIC)
        f.write(struct.pack("<HII", FRIM_VERSION, h, w))
        f.write(img.values.astype("<f4").tobytes())
        f.write(img.mask.astype(np.uint8).tobytes())


def read_rangeimage(path: str) -> RangeImage:
    with open(path, "rb") as f:
        blob = f.read()
    header = 4 + struct.calcsize("<HII")
    if len(blob) < header:
        raise ValueError(f"{path}: truncated header")
    if blob[:4] != FRIM_MAGIC:
        raise ValueError(f"{path}: bad magic {blob[:4]!r}")
    version, h, w = struct.unpack_from("<HII", blob, 4)
    if version != FRIM_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    expect = header + h * w * 4 + h * w
    if len(blob) != expect:
        raise ValueError(f"{path}: size {len(blob)} does not match "
                         f"{h}x{w} payload ({expect})")
    values = np.frombuffer(blob, dtype="<f4", count=h * w, offset=header)
    mask = np.frombuffer(blob, dtype=np.uint8, count=h * w, offset=header + h * w * 4)
    return RangeImage(values.reshape(h, w).astype(np.float64),
                      mask.reshape(h, w) != 0)


def write_ply(cloud: PointCloud, path: str) -> None:
    """ASCII vertex-only PLY."""
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {cloud.count}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("end_header\n")
        for x, y, z in cloud.points:
            f.write(f"{x:.9g} {y:.9g} {z:.9g}\n")


def read_ply(path: str) -> PointCloud:
    """Parse an ASCII PLY whose vertex element starts with x, y, z floats."""
    with open(path) as f:
        lines = [ln.strip() for ln in f]
    if not lines or lines[0] != "ply":
        raise ValueError(f"{path}: not a PLY file")
    count = None
    props: list[str] = []
    body_at = None
    in_vertex = False
    for i, ln in enumerate(lines[1:], start=1):
        if ln.startswith("comment") or not ln:
            continue
        if ln.startswith("format"):
            if "ascii" not in ln:
                raise ValueError(f"{path}: only ascii PLY is supported")
        elif ln.startswith("element"):
            parts = ln.split()
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif ln.startswith("property"):
            if in_vertex:
                props.append(ln.split()[-1])
        elif ln == "end_header":
            body_at = i + 1
            break
    if count is None or body_at is None:
        raise ValueError(f"{path}: malformed PLY header")
    if props[:3] != ["x", "y", "z"]:
        raise ValueError(f"{path}: vertex element must start with x, y, z")
    rows = [ln for ln in lines[body_at:] if ln]
    if len(rows) < count:
        raise ValueError(f"{path}: expected {count} vertices, found {len(rows)}")
    pts = np.array([[float(v) for v in ln.split()[:3]] for ln in rows[:count]],
                   dtype=np.float64).reshape(count, 3)
    return PointCloud(pts)
