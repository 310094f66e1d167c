"""Pinhole camera models, rigid transforms and 12-bit depth quantization.

Conventions used throughout the pipeline:
  - camera frame: x right, y down, z forward (optical axis), right-handed
  - world frame: same handedness; the default rig lives in a y-down world,
    so "up" is -y and the stage floor sits at y = 0
  - pixels: row-major, origin at the top-left, integer coordinates are the
    sample points (no half-pixel offset)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DEPTH_LEVELS = 4096
HOLE_CODE = 0  # depth code reserved for "invalid / no data"


class CalibrationError(ValueError):
    """Malformed calibration document; message names the offending camera."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        # even dimensions: 2x2 cells must tile exactly for 4:2:0 packing
        if self.width < 2 or self.width % 2 != 0 or self.height < 2 or self.height % 2 != 0:
            raise ValueError(f"image size must be even and >= 2, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )


def _as_rotation(m) -> np.ndarray:
    r = np.asarray(m, dtype=np.float64).reshape(3, 3)
    if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
        raise ValueError("rotation must be orthonormal with determinant +1")
    r = r.copy()
    r.flags.writeable = False
    return r


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform: p_cam = rotation @ p_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map world points (..., 3) into the camera frame."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "CameraPose":
        return CameraPose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "CameraPose") -> "CameraPose":
        """Pose applying `other` first, then `self`."""
        return CameraPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def optical_axis(self) -> np.ndarray:
        """Unit viewing direction (camera +z) in world coordinates."""
        return self.rotation[2].copy()

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )


@dataclass(frozen=True)
class CameraModel:
    id: int
    intrinsics: CameraIntrinsics
    pose: CameraPose


def look_at(eye, target, down=(0.0, 1.0, 0.0)) -> CameraPose:
    """Pose of a camera at `eye` looking at `target`, image-down along `down`."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    nz = np.linalg.norm(z)
    if nz < 1e-12:
        raise ValueError("eye and target coincide")
    z = z / nz
    x = np.cross(np.asarray(down, dtype=np.float64), z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        # viewing direction parallel to the down hint; pick an arbitrary right
        x = np.cross((0.0, 0.0, 1.0), z)
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    return CameraPose(r, -r @ eye)


def project(point, cam: CameraModel):
    """Project world point(s) into pixel coordinates.

    Returns (u, v, z) where z is camera-space depth in meters. z <= 0 or
    coordinates outside the image signal out-of-frustum; no error is raised.
    """
    p = cam.pose.transform(point)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    k = cam.intrinsics
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * x / z + k.cx
        v = k.fy * y / z + k.cy
    if np.ndim(z) == 0:
        return float(u), float(v), float(z)
    return u, v, z


def unproject(u, v, z, cam: CameraModel):
    """Inverse of `project` for in-frustum points; rejects z <= 0."""
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= 0):
        raise ValueError("unproject requires positive camera-space depth")
    k = cam.intrinsics
    x = (np.asarray(u, dtype=np.float64) - k.cx) / k.fx * z
    y = (np.asarray(v, dtype=np.float64) - k.cy) / k.fy * z
    p_cam = np.stack([x, y, z], axis=-1)
    inv = cam.pose.inverse()
    out = inv.transform(p_cam)
    return out


@dataclass(frozen=True)
class DepthQuantizer:
    """Linear-in-disparity 12-bit depth quantizer.

    Codes 1..4095 span [z_near, z_far] with code 4095 at z_near (maximum
    disparity); code 0 is the hole sentinel for invalid or out-of-range depth.
    """

    z_near: float
    z_far: float
    levels: int = field(default=DEPTH_LEVELS)

    def __post_init__(self):
        if not (0 < self.z_near < self.z_far):
            raise ValueError(f"need 0 < z_near < z_far, got {self.z_near}, {self.z_far}")
        if self.levels != DEPTH_LEVELS:
            raise ValueError("quantizer is fixed at 4096 levels (12 bits)")

    @property
    def _disp_span(self) -> float:
        return 1.0 / self.z_near - 1.0 / self.z_far

    def quantize(self, z):
        """Depth in meters -> code in [0, 4095]; out-of-range or non-finite -> 0."""
        z = np.asarray(z, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = (1.0 / z - 1.0 / self.z_far) / self._disp_span
            code = np.rint(frac * (self.levels - 1))
        code = np.clip(code, 1, self.levels - 1)
        valid = np.isfinite(z) & (z >= self.z_near) & (z <= self.z_far)
        code = np.where(valid, code, 0).astype(np.uint16)
        return int(code) if code.ndim == 0 else code

    def dequantize(self, code):
        """Code -> depth in meters. Scalar code 0 raises; in arrays it maps to NaN."""
        c = np.asarray(code)
        if np.any(c > self.levels - 1):
            raise ValueError("depth code exceeds 4095")
        scalar = c.ndim == 0
        if scalar and int(c) == HOLE_CODE:
            raise ValueError("code 0 is the hole sentinel and has no depth")
        disp = c.astype(np.float64) / (self.levels - 1) * self._disp_span + 1.0 / self.z_far
        with np.errstate(divide="ignore"):
            z = 1.0 / disp
        z = np.where(c == HOLE_CODE, np.nan, z)
        return float(z) if scalar else z

    @property
    def step_at_far(self) -> float:
        """Largest quantization step in meters (at z_far); a coarse error unit."""
        return self.dequantize(1) - self.dequantize(2)


def _parse_intrinsics(doc: dict) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=float(doc["fx"]),
        fy=float(doc["fy"]),
        cx=float(doc["cx"]),
        cy=float(doc["cy"]),
        width=int(doc["width"]),
        height=int(doc["height"]),
    )


def _parse_pose(doc: dict) -> CameraPose:
    rot = [float(x) for x in doc["rotation"]]
    if len(rot) != 9:
        raise ValueError(f"pose rotation needs 9 entries, got {len(rot)}")
    tr = [float(x) for x in doc["translation"]]
    if len(tr) != 3:
        raise ValueError(f"pose translation needs 3 entries, got {len(tr)}")
    return CameraPose(np.array(rot).reshape(3, 3), np.array(tr))


def load_calibration(path) -> tuple[list[CameraModel], DepthQuantizer]:
    """Load a rig calibration JSON document.

    Layout (all required):
      {"depth_quantizer": {"z_near": m, "z_far": m},
       "cameras": [{"id": i,
                    "intrinsics": {fx, fy, cx, cy, width, height},
                    "pose": {"rotation": [9 row-major], "translation": [3]}}, ...]}
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CalibrationError(f"cannot read calibration {path}: {e}") from e
    try:
        dq = doc["depth_quantizer"]
        quantizer = DepthQuantizer(z_near=float(dq["z_near"]), z_far=float(dq["z_far"]))
    except (KeyError, TypeError, ValueError) as e:
        raise CalibrationError(f"bad depth_quantizer section: {e}") from e
    cameras: list[CameraModel] = []
    seen: set[int] = set()
    for idx, cam_doc in enumerate(doc.get("cameras", [])):
        cam_id = cam_doc.get("id", f"<entry {idx}>")
        try:
            cam = CameraModel(
                id=int(cam_doc["id"]),
                intrinsics=_parse_intrinsics(cam_doc["intrinsics"]),
                pose=_parse_pose(cam_doc["pose"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise CalibrationError(f"camera {cam_id}: {e}") from e
        if cam.id in seen:
            raise CalibrationError(f"camera {cam.id}: duplicate id")
        seen.add(cam.id)
        cameras.append(cam)
    if not cameras:
        raise CalibrationError(f"no cameras in calibration {path}")
    return cameras, quantizer


def save_calibration(path, cameras: Sequence[CameraModel], quantizer: DepthQuantizer) -> None:
    doc = {
        "depth_quantizer": {"z_near": quantizer.z_near, "z_far": quantizer.z_far},
        "cameras": [
            {
                "id": c.id,
                "intrinsics": {
                    "fx": c.intrinsics.fx,
                    "fy": c.intrinsics.fy,
                    "cx": c.intrinsics.cx,
                    "cy": c.intrinsics.cy,
                    "width": c.intrinsics.width,
                    "height": c.intrinsics.height,
                },
                "pose": {
                    "rotation": [float(x) for x in c.pose.rotation.reshape(-1)],
                    "translation": [float(x) for x in c.pose.translation],
                },
            }
            for c in cameras
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2))


def rotation_angle_between(a: np.ndarray, b: np.ndarray) -> float:
    """Angle in radians between two unit vectors, clamped for numeric safety."""
    d = float(np.clip(np.dot(a, b), -1.0, 1.0))
    return math.acos(d)
