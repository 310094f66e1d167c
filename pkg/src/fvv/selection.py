"""Dynamic choice of active (3) and subscribed (5) reference cameras.

The proximity metric is Euclidean distance between camera centers plus a
weighted angle between optical axes; the angular term keeps converging
arc rigs from preferring a camera that is near in space but points the
wrong way. A hysteresis margin keeps the active set stable while the
viewpoint dithers near a selection boundary, easing handovers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraModel, rotation_angle_between

ACTIVE_COUNT = 3
SUBSCRIBED_COUNT = 5
DEFAULT_AXIS_WEIGHT = 1.0  # meters per radian
DEFAULT_HYSTERESIS = 0.1


@dataclass(frozen=True)
class ViewState:
    """Virtual camera plus the reference-camera sets derived from it."""

    virtual: CameraModel
    active: tuple[int, ...]
    subscribed: frozenset[int]
    last_update_ts: int = 0

    def __post_init__(self):
        active = tuple(int(c) for c in self.active)
        subscribed = frozenset(int(c) for c in self.subscribed)
        if len(set(active)) != len(active):
            raise ValueError(f"active set has duplicates: {active}")
        if not set(active) <= subscribed:
            raise ValueError(f"active {active} not within subscribed {sorted(subscribed)}")
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "subscribed", subscribed)


def camera_distance(virtual: CameraModel, ref: CameraModel, axis_weight: float = DEFAULT_AXIS_WEIGHT) -> float:
    """Center distance in meters plus axis_weight times the axis angle in radians."""
    d = float(np.linalg.norm(virtual.pose.center - ref.pose.center))
    theta = rotation_angle_between(virtual.pose.optical_axis, ref.pose.optical_axis)
    return d + axis_weight * theta


def select(
    virtual: CameraModel,
    rig: list[CameraModel],
    prev: ViewState | None = None,
    hysteresis: float = DEFAULT_HYSTERESIS,
    axis_weight: float = DEFAULT_AXIS_WEIGHT,
    ts: int = 0,
) -> ViewState:
    """Pick the active and subscribed camera sets for a virtual viewpoint.

    Without history the active set is simply the 3 nearest cameras (ties by
    lower id). With history, an incumbent active camera is only evicted by a
    challenger whose distance undercuts it by more than `hysteresis`.
    Subscribed is the 5 nearest unioned with active, trimmed from the far end.
    """
    if not rig:
        raise ValueError("rig must contain at least one camera")
    dist = {cam.id: camera_distance(virtual, cam, axis_weight) for cam in rig}
    order = sorted(dist, key=lambda c: (dist[c], c))
    n_active = min(ACTIVE_COUNT, len(order))

    incumbents = [c for c in (prev.active if prev is not None else ()) if c in dist]
    if not incumbents:
        active = order[:n_active]
    else:
        active_set = set(incumbents[:n_active])
        challengers = [c for c in order if c not in active_set]
        # fill vacancies with the nearest challengers
        while len(active_set) < n_active and challengers:
            active_set.add(challengers.pop(0))
        # an incumbent falls only to a challenger better by more than the margin
        while challengers:
            worst = max(active_set, key=lambda c: (dist[c], c))
            best = challengers[0]
            if dist[best] < dist[worst] - hysteresis:
                active_set.remove(worst)
                active_set.add(challengers.pop(0))
            else:
                break
        active = sorted(active_set, key=lambda c: (dist[c], c))

    n_sub = min(SUBSCRIBED_COUNT, len(order))
    subscribed = set(order[:n_sub]) | set(active)
    removable = sorted(
        (c for c in subscribed if c not in active),
        key=lambda c: (dist[c], c),
        reverse=True,
    )
    while len(subscribed) > n_sub and removable:
        subscribed.remove(removable.pop(0))

    return ViewState(
        virtual=virtual,
        active=tuple(active),
        subscribed=frozenset(subscribed),
        last_update_ts=ts,
    )
