"""Deterministic synthetic multi-camera scene.

An analytic ray caster renders ground-truth color, depth and foreground
masks per camera. It doubles as the capture source for the live pipeline
and as the verification oracle for the warping code, so it deliberately
shares no code with the DIBR path.

The world is y-down (up is -y). The default stage floor lies at y = 0 and
the default rig is a nine-camera, 120-degree arc of radius 4 m around the
stage center, half a meter above the floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .depth_codec import (
    DepthCodecError,
    DepthMap,
    I420Frame,
    pack_depth,
    read_packed_frame,
    read_pbm_mask,
    write_packed_frame,
    write_pbm_mask,
)
from .geometry import (
    CameraIntrinsics,
    CameraModel,
    DepthQuantizer,
    load_calibration,
    look_at,
    save_calibration,
)

_EPS = 1e-6


class SceneCoverageError(RuntimeError):
    """A camera ray escaped the scene; backgrounds must be watertight."""


class DatasetError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# textures


@dataclass(frozen=True)
class Texture:
    """Solid color, or a 3-D checker of two colors when color_b is set."""

    color_a: tuple[float, float, float]
    color_b: tuple[float, float, float] | None = None
    cell: float = 0.5
    phase: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def sample(self, points: np.ndarray) -> np.ndarray:
        a = np.asarray(self.color_a, dtype=np.float64)
        if self.color_b is None:
            return np.broadcast_to(a, points.shape[:-1] + (3,)).copy()
        b = np.asarray(self.color_b, dtype=np.float64)
        cells = np.floor((points + np.asarray(self.phase)) / self.cell).astype(np.int64)
        parity = (cells.sum(axis=-1) & 1).astype(bool)
        return np.where(parity[..., None], b, a)


def checker(color_a, color_b, cell: float, seed: int) -> Texture:
    """Checker texture with a seed-derived phase so texel edges avoid geometry."""
    rng = np.random.default_rng(seed)
    phase = tuple(float(x) for x in rng.uniform(0.05, cell * 0.95, 3))
    return Texture(tuple(color_a), tuple(color_b), cell, phase)


# ---------------------------------------------------------------------------
# motion and primitives


@dataclass(frozen=True)
class Motion:
    """Bounded translation over time: none, a horizontal orbit, or a sinusoidal line."""

    kind: str = "static"  # static | orbit | line
    amplitude: float = 0.0
    rate_hz: float = 0.0
    phase: float = 0.0
    direction: tuple[float, float, float] = (1.0, 0.0, 0.0)

    def offset(self, t_us: int) -> np.ndarray:
        if self.kind == "static":
            return np.zeros(3)
        a = 2.0 * math.pi * (self.rate_hz * t_us * 1e-6 + self.phase)
        if self.kind == "orbit":
            return np.array([self.amplitude * math.cos(a), 0.0, self.amplitude * math.sin(a)])
        if self.kind == "line":
            d = np.asarray(self.direction, dtype=np.float64)
            return d * (self.amplitude * math.sin(a))
        raise ValueError(f"unknown motion kind {self.kind!r}")


STATIC = Motion()


@dataclass(frozen=True)
class RectPlane:
    """Finite axis-aligned rectangle; `axis` is the normal axis (0=x, 1=y, 2=z)."""

    axis: int
    level: float
    lo: tuple[float, float]  # bounds along the two remaining axes, ascending order
    hi: tuple[float, float]
    texture: Texture

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, t_us: int) -> np.ndarray:
        a = self.axis
        others = [i for i in range(3) if i != a]
        da = dirs[..., a]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (self.level - origin[a]) / da
            p0 = origin[others[0]] + t * dirs[..., others[0]]
            p1 = origin[others[1]] + t * dirs[..., others[1]]
            ok = (
                (np.abs(da) > _EPS)
                & (t > _EPS)
                & (p0 >= self.lo[0])
                & (p0 <= self.hi[0])
                & (p1 >= self.lo[1])
                & (p1 <= self.hi[1])
            )
        return np.where(ok, t, np.inf)


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float
    texture: Texture
    motion: Motion = STATIC

    def center_at(self, t_us: int) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64) + self.motion.offset(t_us)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, t_us: int) -> np.ndarray:
        c = self.center_at(t_us)
        m = origin - c
        aa = np.sum(dirs * dirs, axis=-1)
        bb = 2.0 * np.sum(dirs * m, axis=-1)
        cc = float(np.dot(m, m) - self.radius * self.radius)
        disc = bb * bb - 4.0 * aa * cc
        with np.errstate(invalid="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            t_near = (-bb - sq) / (2.0 * aa)
            t_far = (-bb + sq) / (2.0 * aa)
        t = np.where(t_near > _EPS, t_near, t_far)
        ok = (disc >= 0.0) & (t > _EPS)
        return np.where(ok, t, np.inf)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its low and high corners."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    texture: Texture
    motion: Motion = STATIC

    def intersect(self, origin: np.ndarray, dirs: np.ndarray, t_us: int) -> np.ndarray:
        off = self.motion.offset(t_us)
        lo = np.asarray(self.lo) + off
        hi = np.asarray(self.hi) + off
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
        t0 = (lo - origin) * inv
        t1 = (hi - origin) * inv
        t_near = np.minimum(t0, t1).max(axis=-1)
        t_far = np.maximum(t0, t1).min(axis=-1)
        ok = (t_near <= t_far) & (t_far > _EPS) & (t_near > _EPS)
        return np.where(ok, t_near, np.inf)


@dataclass(frozen=True)
class Scene:
    background: tuple = ()
    foreground: tuple = ()

    def background_only(self) -> "Scene":
        return Scene(background=self.background, foreground=())


# ---------------------------------------------------------------------------
# color conversion (BT.601 full range)


def rgb_to_i420(rgb: np.ndarray) -> I420Frame:
    r = rgb[..., 0].astype(np.float64)
    g = rgb[..., 1].astype(np.float64)
    b = rgb[..., 2].astype(np.float64)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    u = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    v = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    h, w = y.shape
    u_half = u.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    v_half = v.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    to8 = lambda p: np.clip(np.rint(p), 0, 255).astype(np.uint8)
    return I420Frame(to8(y), to8(u_half), to8(v_half))


def i420_to_rgb(frame: I420Frame) -> np.ndarray:
    y = frame.y.astype(np.float64)
    u = np.repeat(np.repeat(frame.u, 2, axis=0), 2, axis=1).astype(np.float64) - 128.0
    v = np.repeat(np.repeat(frame.v, 2, axis=0), 2, axis=1).astype(np.float64) - 128.0
    r = y + 1.402 * v
    g = y - 0.344136 * u - 0.714136 * v
    b = y + 1.772 * u
    rgb = np.stack([r, g, b], axis=-1)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# rendering


def _camera_rays(cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """World-space ray origin and per-pixel directions with unit camera-z."""
    k = cam.intrinsics
    us = np.arange(k.width, dtype=np.float64)
    vs = np.arange(k.height, dtype=np.float64)
    xg = (us[None, :] - k.cx) / k.fx
    yg = (vs[:, None] - k.cy) / k.fy
    dirs_cam = np.empty((k.height, k.width, 3))
    dirs_cam[..., 0] = xg
    dirs_cam[..., 1] = yg
    dirs_cam[..., 2] = 1.0
    # d_world = R^T d_cam; with unit camera-z the ray parameter equals depth
    dirs_world = dirs_cam @ cam.pose.rotation
    return cam.pose.center, dirs_world


def _composite(
    scene: Scene,
    origin: np.ndarray,
    dirs: np.ndarray,
    t_us: int,
    depth: np.ndarray,
    rgb: np.ndarray,
    fg: np.ndarray,
) -> None:
    """Accumulate nearest-hit color/depth/foreground into the given buffers."""
    for group, is_fg in ((scene.background, False), (scene.foreground, True)):
        for prim in group:
            t = prim.intersect(origin, dirs, t_us)
            win = t < depth
            if not win.any():
                continue
            pts = origin + t[win, None] * dirs[win]
            rgb[win] = prim.texture.sample(pts)
            depth[win] = t[win]
            if is_fg:
                fg[win] = True
            else:
                fg[win] = False


def trace(scene: Scene, cam: CameraModel, t_us: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Ray-cast to (rgb float array, depth meters, foreground mask)."""
    origin, dirs = _camera_rays(cam)
    h, w = dirs.shape[:2]
    depth = np.full((h, w), np.inf)
    rgb = np.zeros((h, w, 3))
    fg = np.zeros((h, w), dtype=bool)
    _composite(scene, origin, dirs, t_us, depth, rgb, fg)
    if np.isinf(depth).any():
        raise SceneCoverageError(f"camera {cam.id}: {int(np.isinf(depth).sum())} rays missed the scene")
    return rgb, depth, fg


def render(
    scene: Scene, cam: CameraModel, t_us: int, quantizer: DepthQuantizer
) -> tuple[I420Frame, DepthMap, np.ndarray]:
    """Full render: I420 color, quantized depth and the foreground mask."""
    rgb, depth, fg = trace(scene, cam, t_us)
    return rgb_to_i420(rgb), DepthMap(quantizer.quantize(depth)), fg


class CaptureSimulator:
    """Per-camera renderer that caches the static background.

    Only pixels inside the projected bounds of foreground primitives are
    re-cast each tick, which keeps simulated 30 fps capture affordable on a
    CPU. Output is bit-identical to `render` (tested), because the cached
    values and the re-cast values go through the same arithmetic.
    """

    def __init__(self, scene: Scene, cam: CameraModel, quantizer: DepthQuantizer):
        self.scene = scene
        self.cam = cam
        self.quantizer = quantizer
        self._origin, self._dirs = _camera_rays(cam)
        h, w = self._dirs.shape[:2]
        self._bg_depth = np.full((h, w), np.inf)
        self._bg_rgb = np.zeros((h, w, 3))
        self._bg_fg = np.zeros((h, w), dtype=bool)
        _composite(scene.background_only(), self._origin, self._dirs, 0, self._bg_depth, self._bg_rgb, self._bg_fg)
        if np.isinf(self._bg_depth).any():
            raise SceneCoverageError(f"camera {cam.id}: background does not cover the frustum")

    def _roi(self, prim, t_us: int) -> tuple[slice, slice] | None:
        """Conservative pixel bounding box of a foreground primitive."""
        k = self.cam.intrinsics
        if isinstance(prim, Sphere):
            c = prim.center_at(t_us)
            corners = c[None, :] + prim.radius * np.array(
                [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=np.float64
            )
        elif isinstance(prim, Box):
            off = prim.motion.offset(t_us)
            lo = np.asarray(prim.lo) + off
            hi = np.asarray(prim.hi) + off
            corners = np.array(
                [[(lo, hi)[sx][0], (lo, hi)[sy][1], (lo, hi)[sz][2]] for sx in (0, 1) for sy in (0, 1) for sz in (0, 1)]
            )
        else:
            return (slice(0, k.height), slice(0, k.width))
        p = self.cam.pose.transform(corners)
        if np.any(p[:, 2] < 0.05):
            return (slice(0, k.height), slice(0, k.width))
        u = k.fx * p[:, 0] / p[:, 2] + k.cx
        v = k.fy * p[:, 1] / p[:, 2] + k.cy
        u0 = max(0, int(np.floor(u.min())) - 2)
        u1 = min(k.width, int(np.ceil(u.max())) + 3)
        v0 = max(0, int(np.floor(v.min())) - 2)
        v1 = min(k.height, int(np.ceil(v.max())) + 3)
        if u0 >= u1 or v0 >= v1:
            return None
        return (slice(v0, v1), slice(u0, u1))

    def render(self, t_us: int) -> tuple[I420Frame, DepthMap, np.ndarray]:
        depth = self._bg_depth.copy()
        rgb = self._bg_rgb.copy()
        fg = np.zeros_like(self._bg_fg)
        for prim in self.scene.foreground:
            roi = self._roi(prim, t_us)
            if roi is None:
                continue
            dirs = self._dirs[roi]
            t = prim.intersect(self._origin, dirs, t_us)
            win = t < depth[roi]
            if win.any():
                pts = self._origin + t[win, None] * dirs[win]
                rgb[roi][win] = prim.texture.sample(pts)  # slice views write through
                depth[roi][win] = t[win]
                fg[roi][win] = True
        return rgb_to_i420(rgb), DepthMap(self.quantizer.quantize(depth)), fg


# ---------------------------------------------------------------------------
# default rig and scenes


DEFAULT_WIDTH = 640
DEFAULT_HEIGHT = 360
DEFAULT_Z_NEAR = 0.5
DEFAULT_Z_FAR = 12.0
RIG_CAMERA_COUNT = 9
RIG_RADIUS_M = 4.0
RIG_ARC_DEG = 120.0
RIG_HEIGHT_ABOVE_FLOOR_M = 0.5
STAGE_TARGET = (0.0, -RIG_HEIGHT_ABOVE_FLOOR_M, 0.0)


def default_quantizer() -> DepthQuantizer:
    return DepthQuantizer(DEFAULT_Z_NEAR, DEFAULT_Z_FAR)


def default_rig(width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT) -> list[CameraModel]:
    """Nine cameras on a 120-degree arc of radius 4 m aimed at the stage center."""
    fx = (width / 2.0) / math.tan(math.radians(30.0))  # 60-degree horizontal FOV
    intr = CameraIntrinsics(fx=fx, fy=fx, cx=width / 2.0, cy=height / 2.0, width=width, height=height)
    cams = []
    for i in range(RIG_CAMERA_COUNT):
        phi = math.radians(-RIG_ARC_DEG / 2.0 + i * RIG_ARC_DEG / (RIG_CAMERA_COUNT - 1))
        eye = (RIG_RADIUS_M * math.sin(phi), -RIG_HEIGHT_ABOVE_FLOOR_M, -RIG_RADIUS_M * math.cos(phi))
        cams.append(CameraModel(id=i, intrinsics=intr, pose=look_at(eye, STAGE_TARGET)))
    return cams


def arc_pose(
    rig: list[CameraModel],
    s: float,
    height_offset: float = 0.0,
    lookat_offset=(0.0, 0.0, 0.0),
    cam_id: int = 0xFFFF,
) -> CameraModel:
    """Virtual camera on the rig arc: s in [0, 1] interpolates camera centers
    piecewise-linearly; the view target stays on the stage center plus offset."""
    if not rig:
        raise ValueError("empty rig")
    s = min(max(float(s), 0.0), 1.0)
    centers = [c.pose.center for c in sorted(rig, key=lambda c: c.id)]
    if len(centers) == 1:
        eye = centers[0].copy()
    else:
        x = s * (len(centers) - 1)
        i = min(int(x), len(centers) - 2)
        f = x - i
        eye = (1.0 - f) * centers[i] + f * centers[i + 1]
    eye = eye + np.array([0.0, -height_offset, 0.0])  # up is -y
    target = np.asarray(STAGE_TARGET) + np.asarray(lookat_offset, dtype=np.float64)
    intr = sorted(rig, key=lambda c: c.id)[0].intrinsics
    return CameraModel(id=cam_id, intrinsics=intr, pose=look_at(eye, target))


def _room() -> tuple:
    half = 5.0
    depth_y = -3.0  # ceiling height (y-down world)
    m = 0.05  # planes overlap at the seams so corner rays cannot slip through
    # checker contrast is kept moderate: enough texture to expose warp errors,
    # not so much that sub-pixel resampling noise swamps color comparisons
    floor = RectPlane(1, 0.0, (-half - m, -half - m), (half + m, half + m), checker((104, 121, 100), (134, 153, 130), 1.12, seed=11))
    ceiling = RectPlane(1, depth_y, (-half - m, -half - m), (half + m, half + m), Texture((205, 205, 208)))
    wall_tex = checker((129, 133, 160), (157, 161, 186), 1.4, seed=23)
    walls = (
        RectPlane(2, half, (-half - m, depth_y - m), (half + m, m), wall_tex),
        RectPlane(2, -half, (-half - m, depth_y - m), (half + m, m), wall_tex),
        RectPlane(0, half, (depth_y - m, -half - m), (m, half + m), wall_tex),
        RectPlane(0, -half, (depth_y - m, -half - m), (m, half + m), wall_tex),
    )
    return (floor, ceiling) + walls


def build_scene(name: str) -> Scene:
    """Named scenes: 'default' (room + moving props) and 'empty' (room only)."""
    room = _room()
    if name == "empty":
        return Scene(background=room)
    if name == "default":
        sphere = Sphere(
            center=(0.0, -0.85, 0.0),
            radius=0.35,
            texture=checker((205, 111, 111), (229, 177, 177), 0.3, seed=37),
            motion=Motion(kind="orbit", amplitude=0.6, rate_hz=0.06),
        )
        box = Box(
            lo=(-1.05, -0.75, -0.25),
            hi=(-0.55, -0.25, 0.25),
            texture=checker((108, 136, 205), (166, 184, 229), 0.26, seed=53),
            motion=Motion(kind="line", amplitude=0.25, rate_hz=0.05, direction=(0.0, 0.0, 1.0), phase=0.25),
        )
        return Scene(background=room, foreground=(sphere, box))
    raise ValueError(f"unknown scene {name!r} (known: default, empty)")


# ---------------------------------------------------------------------------
# datasets


def save_dataset(
    path,
    rig: list[CameraModel],
    quantizer: DepthQuantizer,
    frames: dict[int, dict[int, tuple[I420Frame, DepthMap, np.ndarray]]],
    period_us: int | None = None,
) -> None:
    """Write a dataset directory: calibration.json plus per-camera frame files."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    save_calibration(root / "calibration.json", rig, quantizer)
    if period_us is not None:
        (root / "meta.json").write_text(f'{{"period_us": {period_us}}}\n')
    for cam_id, ticks in frames.items():
        cam_dir = root / f"cam{cam_id}"
        cam_dir.mkdir(exist_ok=True)
        for tick, (color, depth, mask) in ticks.items():
            (cam_dir / f"color_{tick}.i420").write_bytes(color.to_bytes())
            write_packed_frame(cam_dir / f"depth_{tick}.fvvd", pack_depth(depth), frame_index=tick)
            write_pbm_mask(cam_dir / f"mask_{tick}.pbm", mask)


def load_dataset(path):
    """Load (rig, quantizer, frames) from a dataset directory.

    frames maps camera id -> tick -> (I420Frame, DepthMap, mask). Every
    validation failure names the camera (and tick) involved.
    """
    from .geometry import CalibrationError
    from .depth_codec import unpack_depth

    root = Path(path)
    calib = root / "calibration.json"
    if not calib.is_file():
        raise DatasetError(f"no calibration file at {calib}")
    try:
        rig, quantizer = load_calibration(calib)
    except CalibrationError as e:
        raise DatasetError(str(e)) from e

    frames: dict[int, dict[int, tuple[I420Frame, DepthMap, np.ndarray]]] = {}
    for cam in rig:
        cam_dir = root / f"cam{cam.id}"
        if not cam_dir.is_dir():
            raise DatasetError(f"camera {cam.id}: missing frame directory {cam_dir}")
        ticks = sorted(
            int(p.stem.split("_", 1)[1]) for p in cam_dir.glob("color_*.i420")
        )
        if not ticks:
            raise DatasetError(f"camera {cam.id}: no frames in {cam_dir}")
        w, h = cam.intrinsics.width, cam.intrinsics.height
        per_tick: dict[int, tuple[I420Frame, DepthMap, np.ndarray]] = {}
        for tick in ticks:
            try:
                color = I420Frame.from_bytes((cam_dir / f"color_{tick}.i420").read_bytes(), w, h)
                packed, _ = read_packed_frame(cam_dir / f"depth_{tick}.fvvd")
                mask = read_pbm_mask(cam_dir / f"mask_{tick}.pbm")
            except (OSError, DepthCodecError) as e:
                raise DatasetError(f"camera {cam.id}, tick {tick}: {e}") from e
            if packed.width != w or packed.height != h or mask.shape != (h, w):
                raise DatasetError(
                    f"camera {cam.id}, tick {tick}: frame dimensions do not match calibration ({w}x{h})"
                )
            per_tick[tick] = (color, unpack_depth(packed), mask)
        frames[cam.id] = per_tick

    counts = {cid: len(t) for cid, t in frames.items()}
    if len(set(counts.values())) > 1:
        detail = ", ".join(f"cam{c}={n}" for c, n in sorted(counts.items()))
        raise DatasetError(f"per-camera frame counts differ: {detail}")
    return rig, quantizer, frames


def render_dataset_to(
    path,
    scene: Scene,
    rig: list[CameraModel],
    quantizer: DepthQuantizer,
    ticks: int,
    period_us: int = 33_333,
) -> None:
    """Render `ticks` frames per camera straight to a dataset directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    save_calibration(root / "calibration.json", rig, quantizer)
    (root / "meta.json").write_text(f'{{"period_us": {period_us}}}\n')
    for cam in rig:
        sim = CaptureSimulator(scene, cam, quantizer)
        cam_dir = root / f"cam{cam.id}"
        cam_dir.mkdir(exist_ok=True)
        for tick in range(ticks):
            color, depth, mask = sim.render(tick * period_us)
            (cam_dir / f"color_{tick}.i420").write_bytes(color.to_bytes())
            write_packed_frame(cam_dir / f"depth_{tick}.fvvd", pack_depth(depth), frame_index=tick)
            write_pbm_mask(cam_dir / f"mask_{tick}.pbm", mask)
