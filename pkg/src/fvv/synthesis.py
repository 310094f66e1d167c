"""Layered DIBR view synthesis.

Reference views are forward-warped into the virtual camera with a z-buffer,
blended with distance-based weights, and composited foreground-over-
background before scanline hole filling. Warping runs in the I420 domain:
luma at full resolution, chroma at half resolution keyed off the winning
luma pixel, so no 4:4:4 round trip is needed.

Splatting is two-pass: every source pixel lands on its nearest destination
pixel first; when crack suppression is on, the surrounding 2x2 pixel
neighborhood competes only for destinations that the first pass left empty.
That closes resampling cracks without dilating silhouettes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .depth_codec import (
    DepthMap,
    I420Frame,
    pack_depth,
    read_packed_frame,
    unpack_depth,
    write_packed_frame,
)
from .geometry import CameraModel, DepthQuantizer, load_calibration, save_calibration
from .selection import ViewState, camera_distance
from .sync import FrameSet, TimedFrame

DEFAULT_BLEND_EPSILON_M = 0.05
WEIGHT_BIAS = 0.01  # keeps the 1/distance blend weight finite at distance 0


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthesisConfig:
    blend_epsilon_m: float = DEFAULT_BLEND_EPSILON_M
    splat_2x2: bool = True
    axis_weight: float = 1.0  # only used when blend distances are not supplied


@dataclass(frozen=True)
class BackgroundModel:
    """Dense static depth per camera, computed offline."""

    depth_maps: dict[int, DepthMap]

    def __post_init__(self):
        for cam_id, dm in self.depth_maps.items():
            if np.any(dm.codes == 0):
                raise SynthesisError(f"background model for camera {cam_id} has invalid pixels")

    def for_camera(self, cam_id: int) -> DepthMap:
        try:
            return self.depth_maps[cam_id]
        except KeyError:
            raise SynthesisError(f"no background model for camera {cam_id}") from None


@dataclass
class WarpedView:
    """One reference view reprojected into the virtual camera."""

    y: np.ndarray  # (h, w) uint8
    u: np.ndarray  # (h/2, w/2) uint8
    v: np.ndarray
    depth: np.ndarray  # (h, w) float32 meters, inf where invalid
    valid: np.ndarray  # (h, w) bool
    source_camera: int | None = None

    def color(self) -> I420Frame:
        return I420Frame(self.y, self.u, self.v)


def _block_any(mask: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    return mask.reshape(h // 2, 2, w // 2, 2).any(axis=(1, 3))


def full_depth(frame: TimedFrame, bg: BackgroundModel) -> DepthMap:
    """Merge transmitted foreground depth with the static background model."""
    fg_codes = unpack_depth(frame.foreground_depth).codes
    bg_codes = bg.for_camera(frame.camera_id).codes
    if fg_codes.shape != bg_codes.shape:
        raise SynthesisError(
            f"camera {frame.camera_id}: foreground depth {fg_codes.shape} vs background {bg_codes.shape}"
        )
    mask = np.asarray(frame.foreground_mask, dtype=bool)
    return DepthMap(np.where(mask, fg_codes, bg_codes))


def _winner_scatter(iv, iu, z, shape):
    """Scatter with z-buffer; returns (zbuf, winner source index or -1)."""
    h, w = shape
    zbuf = np.full((h, w), np.inf, dtype=np.float64)
    np.minimum.at(zbuf, (iv, iu), z)
    src_idx = np.arange(z.size, dtype=np.int64)
    cand = z == zbuf[iv, iu]
    widx = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(widx, (iv[cand], iu[cand]), src_idx[cand])
    winner = np.where(np.isinf(zbuf), -1, widx)
    return zbuf, winner


def forward_warp(
    src_color: I420Frame,
    src_depth_m: np.ndarray,
    src_valid: np.ndarray,
    src_cam: CameraModel,
    dst_cam: CameraModel,
    splat_2x2: bool = True,
) -> WarpedView:
    """Splat every valid source pixel into the destination camera.

    src_depth_m is per-pixel camera-space depth in meters; src_valid masks
    pixels that carry data. Nearer destination depth wins; destinations no
    source pixel reaches stay invalid.
    """
    sk = src_cam.intrinsics
    dk = dst_cam.intrinsics
    h, w = src_depth_m.shape
    if (src_color.height, src_color.width) != (h, w):
        raise SynthesisError(f"color {src_color.width}x{src_color.height} vs depth {w}x{h}")

    valid = np.asarray(src_valid, dtype=bool) & np.isfinite(src_depth_m) & (src_depth_m > 0)
    sv, su = np.nonzero(valid)
    z = src_depth_m[sv, su].astype(np.float64)

    # unproject + both rigid transforms folded into one affine map
    p_src = np.empty((z.size, 3))
    p_src[:, 0] = (su - sk.cx) / sk.fx * z
    p_src[:, 1] = (sv - sk.cy) / sk.fy * z
    p_src[:, 2] = z
    m = dst_cam.pose.rotation @ src_cam.pose.rotation.T
    c = dst_cam.pose.translation - m @ src_cam.pose.translation
    pd = p_src @ m.T + c
    zd = pd[:, 2]
    front = zd > 1e-9
    su, sv, z, pd, zd = su[front], sv[front], z[front], pd[front], zd[front]
    ud = dk.fx * pd[:, 0] / zd + dk.cx
    vd = dk.fy * pd[:, 1] / zd + dk.cy

    out_y = np.zeros((dk.height, dk.width), dtype=np.uint8)
    out_depth = np.full((dk.height, dk.width), np.inf, dtype=np.float64)
    winner = np.full((dk.height, dk.width), -1, dtype=np.int64)

    iu = np.rint(ud).astype(np.int64)
    iv = np.rint(vd).astype(np.int64)
    inb = (iu >= 0) & (iu < dk.width) & (iv >= 0) & (iv < dk.height)
    src_lin = sv * w + su  # linear index into the source image
    if inb.any():
        zbuf, widx = _winner_scatter(iv[inb], iu[inb], zd[inb], (dk.height, dk.width))
        hit = widx >= 0
        out_depth[hit] = zbuf[hit]
        winner[hit] = src_lin[inb][widx[hit]]

    if splat_2x2:
        # crack suppression: neighborhood splats fight only over pixels the
        # primary pass left empty; one z-buffer across all four offsets
        fu = np.floor(ud).astype(np.int64)
        fv = np.floor(vd).astype(np.int64)
        hole = winner < 0
        cu, cv, cz, clin = [], [], [], []
        for du, dv in ((0, 0), (1, 0), (0, 1), (1, 1)):
            nu = fu + du
            nv = fv + dv
            nin = (nu >= 0) & (nu < dk.width) & (nv >= 0) & (nv < dk.height)
            nin[nin] = hole[nv[nin], nu[nin]]
            if nin.any():
                cu.append(nu[nin])
                cv.append(nv[nin])
                cz.append(zd[nin])
                clin.append(src_lin[nin])
        if cu:
            nu = np.concatenate(cu)
            nv = np.concatenate(cv)
            nz = np.concatenate(cz)
            nlin = np.concatenate(clin)
            zbuf2, widx2 = _winner_scatter(nv, nu, nz, (dk.height, dk.width))
            fill = widx2 >= 0
            out_depth[fill] = zbuf2[fill]
            winner[fill] = nlin[widx2[fill]]

    valid_dst = winner >= 0
    wl = winner[valid_dst]
    out_y[valid_dst] = src_color.y.reshape(-1)[wl]

    # chroma: each half-res cell takes the chroma of its first valid luma pixel
    out_u = np.full((dk.height // 2, dk.width // 2), 128, dtype=np.uint8)
    out_v = np.full_like(out_u, 128)
    blocks = winner.reshape(dk.height // 2, 2, dk.width // 2, 2).transpose(0, 2, 1, 3).reshape(
        dk.height // 2, dk.width // 2, 4
    )
    has = blocks >= 0
    cell_valid = has.any(axis=-1)
    first = has.argmax(axis=-1)
    sel = np.take_along_axis(blocks, first[..., None], axis=-1)[..., 0]
    src_rows = sel[cell_valid] // w
    src_cols = sel[cell_valid] % w
    out_u[cell_valid] = src_color.u[src_rows >> 1, src_cols >> 1]
    out_v[cell_valid] = src_color.v[src_rows >> 1, src_cols >> 1]

    return WarpedView(
        y=out_y,
        u=out_u,
        v=out_v,
        depth=out_depth,
        valid=valid_dst,
        source_camera=src_cam.id,
    )


def blend(
    warps: list[WarpedView],
    distances: list[float],
    depth_consistency_m: float = DEFAULT_BLEND_EPSILON_M,
) -> WarpedView:
    """Mix warped views per pixel with inverse-distance weights.

    Contributions deeper than the nearest contribution by more than the
    consistency margin are discarded (they are occluded in the virtual view);
    the rest average with weights 1/(distance + 0.01), normalized.
    """
    if len(warps) != len(distances) or not warps:
        raise ValueError("need one distance per warped view")
    h, w = warps[0].depth.shape
    for wv in warps:
        if wv.depth.shape != (h, w):
            raise ValueError("warped views must share dimensions")

    depth = np.stack([np.where(wv.valid, wv.depth, np.inf) for wv in warps])
    valid = np.stack([wv.valid for wv in warps])
    zmin = depth.min(axis=0)
    surviving = valid & (depth <= zmin + depth_consistency_m)

    weights = np.asarray([1.0 / (d + WEIGHT_BIAS) for d in distances])[:, None, None]
    wmap = np.where(surviving, weights, 0.0)
    wsum = wmap.sum(axis=0)
    any_valid = wsum > 0
    denom = np.where(any_valid, wsum, 1.0)

    ys = np.stack([wv.y.astype(np.float64) for wv in warps])
    out_y = np.zeros((h, w), dtype=np.uint8)
    out_y[any_valid] = np.clip(np.rint((wmap * ys).sum(axis=0)[any_valid] / denom[any_valid]), 0, 255).astype(np.uint8)
    out_depth = np.full((h, w), np.inf)
    out_depth[any_valid] = (wmap * np.where(surviving, depth, 0.0)).sum(axis=0)[any_valid] / denom[any_valid]

    # chroma at half resolution: a view contributes where any of its 2x2 lumas survived
    surv_half = np.stack([_block_any(s) for s in surviving])
    wmap_h = np.where(surv_half, weights, 0.0)
    wsum_h = wmap_h.sum(axis=0)
    any_h = wsum_h > 0
    denom_h = np.where(any_h, wsum_h, 1.0)
    us = np.stack([wv.u.astype(np.float64) for wv in warps])
    vs = np.stack([wv.v.astype(np.float64) for wv in warps])
    out_u = np.full((h // 2, w // 2), 128, dtype=np.uint8)
    out_v = np.full_like(out_u, 128)
    out_u[any_h] = np.clip(np.rint((wmap_h * us).sum(axis=0)[any_h] / denom_h[any_h]), 0, 255).astype(np.uint8)
    out_v[any_h] = np.clip(np.rint((wmap_h * vs).sum(axis=0)[any_h] / denom_h[any_h]), 0, 255).astype(np.uint8)

    return WarpedView(y=out_y, u=out_u, v=out_v, depth=out_depth, valid=any_valid, source_camera=None)


def _fill_rows(plane: np.ndarray, depth: np.ndarray, valid: np.ndarray) -> None:
    """Scanline hole fill in place: each run copies the farther-depth side."""
    h, w = plane.shape
    for r in range(h):
        vrow = valid[r]
        if vrow.all():
            continue
        if not vrow.any():
            continue  # fully empty rows are handled by the vertical pass
        idx = np.nonzero(vrow)[0]
        # leading and trailing runs have one side only
        first, last = idx[0], idx[-1]
        if first > 0:
            plane[r, :first] = plane[r, first]
            depth[r, :first] = depth[r, first]
        if last < w - 1:
            plane[r, last + 1 :] = plane[r, last]
            depth[r, last + 1 :] = depth[r, last]
        gaps = np.nonzero(np.diff(idx) > 1)[0]
        for g in gaps:
            a, b = idx[g], idx[g + 1]
            # disocclusions expose background: copy the farther side
            src = a if depth[r, a] >= depth[r, b] else b
            plane[r, a + 1 : b] = plane[r, src]
            depth[r, a + 1 : b] = depth[r, src]
        valid[r] = True


def _fill_empty_rows(plane: np.ndarray, depth: np.ndarray, valid: np.ndarray, fallback: int) -> None:
    row_has = valid.any(axis=1)
    if row_has.all():
        return
    filled = np.nonzero(row_has)[0]
    if filled.size == 0:
        plane[:] = fallback
        depth[:] = np.inf
        valid[:] = True
        return
    for r in np.nonzero(~row_has)[0]:
        nearest = filled[np.argmin(np.abs(filled - r))]
        plane[r] = plane[nearest]
        depth[r] = depth[nearest]
    valid[:] = True


def hole_fill(view: WarpedView) -> I420Frame:
    """Produce a total I420 frame from a partially valid warped view."""
    y = view.y.copy()
    d = view.depth.copy()
    val = view.valid.copy()
    _fill_rows(y, d, val)
    _fill_empty_rows(y, d, val, fallback=128)

    cvalid = _block_any(view.valid)
    # half-res depth for side decisions: first valid pixel of each 2x2 block
    db = np.where(view.valid, view.depth, np.inf).reshape(
        view.depth.shape[0] // 2, 2, view.depth.shape[1] // 2, 2
    ).transpose(0, 2, 1, 3).reshape(cvalid.shape + (4,))
    dh = db.min(axis=-1)
    u = view.u.copy()
    v = view.v.copy()
    cval_u = cvalid.copy()
    dh_u = dh.copy()
    _fill_rows(u, dh_u, cval_u)
    _fill_empty_rows(u, dh_u, cval_u, fallback=128)
    cval_v = cvalid.copy()
    dh_v = dh.copy()
    _fill_rows(v, dh_v, cval_v)
    _fill_empty_rows(v, dh_v, cval_v, fallback=128)
    return I420Frame(y, u, v)


def composite_layers(foreground: WarpedView, background: WarpedView) -> WarpedView:
    """Painter's-order composition: foreground wins wherever it is valid."""
    fgv = foreground.valid
    y = np.where(fgv, foreground.y, background.y)
    depth = np.where(fgv, foreground.depth, background.depth)
    valid = fgv | background.valid
    fgc = _block_any(fgv)
    u = np.where(fgc, foreground.u, background.u)
    v = np.where(fgc, foreground.v, background.v)
    return WarpedView(y=y, u=u, v=v, depth=depth, valid=valid, source_camera=None)


@dataclass(frozen=True)
class LayeredFrame:
    background_layer: WarpedView
    foreground_layer: WarpedView
    final: I420Frame


def synthesize(
    frame_set: FrameSet,
    view: ViewState,
    rig: dict[int, CameraModel],
    bg: BackgroundModel,
    quantizer: DepthQuantizer,
    config: SynthesisConfig = SynthesisConfig(),
    distances: list[float] | None = None,
    stage_us: dict | None = None,
) -> LayeredFrame:
    """Render the virtual view for one frame set.

    Pure in all inputs: the same set, view state, background model and
    config always produce the same LayeredFrame. When `stage_us` is given it
    receives wall-clock microseconds for the warp, blend and composite
    stages (composite includes hole filling).
    """
    t_begin = time.monotonic_ns()
    if distances is None:
        distances = [
            camera_distance(view.virtual, rig[cid], config.axis_weight) for cid in view.active
        ]
    bg_warps: list[WarpedView] = []
    fg_warps: list[WarpedView] = []
    for cid in view.active:
        entry = frame_set.frames.get(cid)
        if entry is None:
            raise SynthesisError(f"frame set at tick {frame_set.tick_ts} is missing active camera {cid}")
        if cid not in rig:
            raise SynthesisError(f"no calibration for camera {cid}")
        frame = entry.frame
        cam = rig[cid]
        mask = np.asarray(frame.foreground_mask, dtype=bool)

        # foreground-covered pixels carry object color, not background color;
        # warping them at background depth would paint the object onto the walls
        bg_codes = bg.for_camera(cid)
        bg_depth = quantizer.dequantize(bg_codes.codes)
        bg_warps.append(
            forward_warp(
                frame.color, bg_depth, (bg_codes.codes != 0) & ~mask, cam, view.virtual, config.splat_2x2
            )
        )

        fg_codes = unpack_depth(frame.foreground_depth).codes
        fg_depth = quantizer.dequantize(fg_codes)
        fg_warps.append(
            forward_warp(frame.color, fg_depth, mask & (fg_codes != 0), cam, view.virtual, config.splat_2x2)
        )

    t_warped = time.monotonic_ns()
    background_layer = blend(bg_warps, distances, config.blend_epsilon_m)
    foreground_layer = blend(fg_warps, distances, config.blend_epsilon_m)
    t_blended = time.monotonic_ns()
    final = hole_fill(composite_layers(foreground_layer, background_layer))
    if stage_us is not None:
        stage_us["warp"] = (t_warped - t_begin) // 1000
        stage_us["blend"] = (t_blended - t_warped) // 1000
        stage_us["composite"] = (time.monotonic_ns() - t_blended) // 1000
    return LayeredFrame(
        background_layer=background_layer,
        foreground_layer=foreground_layer,
        final=final,
    )


def build_background_model(
    rig: list[CameraModel],
    render_depth,
) -> BackgroundModel:
    """Build the offline model by rendering the empty scene per camera.

    `render_depth(cam)` must return a dense DepthMap of the static scene
    (scene_sim provides it; datasets load one from disk instead).
    """
    maps: dict[int, DepthMap] = {}
    for cam in rig:
        dm = render_depth(cam)
        if dm is None:
            raise SynthesisError(f"no background data for camera {cam.id}")
        maps[cam.id] = dm
    return BackgroundModel(maps)


def save_background_model(path, model: BackgroundModel, rig: list[CameraModel], quantizer: DepthQuantizer) -> None:
    """Write the model as per-camera packed-depth dumps plus the calibration."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    save_calibration(root / "calibration.json", rig, quantizer)
    for cam_id, dm in model.depth_maps.items():
        write_packed_frame(root / f"background_cam{cam_id}.fvvd", pack_depth(dm), frame_index=0)


def load_background_model(path) -> tuple[BackgroundModel, list[CameraModel], DepthQuantizer]:
    root = Path(path)
    calib = root / "calibration.json"
    if not calib.is_file():
        raise SynthesisError(f"no calibration file in background model directory {root}")
    rig, quantizer = load_calibration(calib)
    maps: dict[int, DepthMap] = {}
    for cam in rig:
        f = root / f"background_cam{cam.id}.fvvd"
        if not f.is_file():
            raise SynthesisError(f"background model missing camera {cam.id} ({f})")
        packed, _ = read_packed_frame(f)
        maps[cam.id] = unpack_depth(packed)
    return BackgroundModel(maps), rig, quantizer
