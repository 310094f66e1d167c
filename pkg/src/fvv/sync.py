"""Software frame synchronization.

Two pieces: clock-offset estimation from a two-way timestamp exchange
(the shared-clock source is modeled, not a real IEEE 1588 stack), and an
assembler that groups per-camera timestamped frames into frame sets
aligned to a fixed tick grid.

All timestamps are integer microseconds on the shared clock unless a name
says otherwise.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .depth_codec import I420Frame, PackedDepthFrame

DEFAULT_PERIOD_US = 33_333  # 30 fps
DEFAULT_MAX_STALENESS = 5
MAX_DRIFT_PPM = 200.0  # typical crystal bound; simulations stay within it


class ClockSyncError(ValueError):
    pass


class StreamLostError(RuntimeError):
    """A camera exceeded the staleness budget and must be treated as lost."""

    def __init__(self, camera_id: int, tick_ts: int):
        super().__init__(f"camera {camera_id} lost at tick {tick_ts} (staleness budget exhausted)")
        self.camera_id = camera_id
        self.tick_ts = tick_ts


def estimate_offset(t1: int, t2: int, t3: int, t4: int) -> tuple[float, float]:
    """Two-way exchange -> (clock offset, one-way path delay), microseconds.

    t1: client send, t2: server receive, t3: server send, t4: client receive.
    offset is server minus client; exact when the path delay is symmetric.
    """
    if t4 < t1:
        raise ClockSyncError(f"client clock ran backwards across the exchange (t1={t1}, t4={t4})")
    offset = ((t2 - t1) + (t3 - t4)) / 2
    delay = ((t4 - t1) - (t3 - t2)) / 2
    if delay < 0:
        raise ClockSyncError(f"negative path delay ({delay} us): asymmetry too large or malformed exchange")
    return offset, delay


@dataclass(frozen=True)
class ClockModel:
    """Simulated node clock.

    `offset_us` is the correction the node must ADD to its local clock to
    recover shared time (the quantity `estimate_offset` returns), so
    local = true - offset + accumulated drift.
    """

    offset_us: int
    drift_ppm: float = 0.0
    epoch_us: int = 0

    def __post_init__(self):
        if abs(self.drift_ppm) > MAX_DRIFT_PPM:
            raise ValueError(f"|drift| must be <= {MAX_DRIFT_PPM} ppm, got {self.drift_ppm}")

    def local_time(self, true_us: int) -> int:
        drift = (true_us - self.epoch_us) * self.drift_ppm * 1e-6
        return int(round(true_us - self.offset_us + drift))


def two_way_exchange(
    client: ClockModel,
    t_true: int,
    delay_fwd_us: int,
    delay_rev_us: int,
    server_proc_us: int = 0,
) -> tuple[int, int, int, int]:
    """Simulate one probe/reply exchange; the server holds the true clock.

    Returns the four timestamps as the endpoints would record them.
    """
    t1 = client.local_time(t_true)
    t2 = t_true + delay_fwd_us
    t3 = t2 + server_proc_us
    t4 = client.local_time(t3 + delay_rev_us)
    return t1, t2, t3, t4


@dataclass(frozen=True)
class TimedFrame:
    """One camera frame already corrected to the shared clock."""

    camera_id: int
    capture_ts: int
    color: I420Frame
    foreground_depth: PackedDepthFrame
    foreground_mask: object  # (h, w) bool array

    def __post_init__(self):
        if self.color.width != self.foreground_depth.width or self.color.height != self.foreground_depth.height:
            raise ValueError(
                f"camera {self.camera_id}: color {self.color.width}x{self.color.height} "
                f"vs depth {self.foreground_depth.width}x{self.foreground_depth.height}"
            )


@dataclass(frozen=True)
class FrameEntry:
    frame: TimedFrame
    staleness: int = 0


@dataclass(frozen=True)
class FrameSet:
    """One synchronized multi-camera group aligned to a tick."""

    tick_ts: int
    frames: Mapping[int, FrameEntry]

    def is_fresh(self) -> bool:
        return all(e.staleness == 0 for e in self.frames.values())

    def max_staleness(self) -> int:
        return max(e.staleness for e in self.frames.values())


class FrameAssembler:
    """Groups per-camera frame streams into FrameSets on a fixed tick grid.

    Ticks are spaced `period_us` apart. The phase is `anchor_ts` when given,
    otherwise the capture timestamp of the earliest first frame seen. Per tick
    and camera the nearest frame within `tolerance_us` is picked (equidistant
    frames resolve to the earlier one); with no candidate the camera's last
    emitted frame is repeated with its staleness incremented. No set is
    emitted until every camera has either a pickable frame or emission
    history, so leading ticks may be skipped but emitted ticks always advance
    by exactly one period.
    """

    def __init__(
        self,
        camera_ids: Iterable[int],
        period_us: int = DEFAULT_PERIOD_US,
        tolerance_us: int | None = None,
        max_staleness: int = DEFAULT_MAX_STALENESS,
        anchor_ts: int | None = None,
    ):
        if period_us <= 0:
            raise ValueError("period must be positive")
        if tolerance_us is None:
            tolerance_us = period_us // 2
        if not (0 < tolerance_us <= period_us / 2):
            raise ValueError(f"tolerance must be in (0, period/2], got {tolerance_us}")
        self.period_us = period_us
        self.tolerance_us = tolerance_us
        self.max_staleness = max_staleness
        self._anchor = anchor_ts
        self._queues: dict[int, deque[TimedFrame]] = {int(c): deque() for c in camera_ids}
        if not self._queues:
            raise ValueError("assembler needs at least one camera")
        self._last_seen_ts: dict[int, int] = {}
        self._last_emitted: dict[int, FrameEntry] = {}
        self._closed: set[int] = set()
        self._next_tick: int | None = anchor_ts
        self._emitted_any = False

    @property
    def camera_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self._queues))

    def push(self, frame: TimedFrame) -> None:
        q = self._queues.get(frame.camera_id)
        if q is None:
            raise KeyError(f"camera {frame.camera_id} is not part of this assembler")
        last = self._last_seen_ts.get(frame.camera_id)
        if last is not None and frame.capture_ts < last:
            raise ValueError(
                f"camera {frame.camera_id}: timestamps must be non-decreasing "
                f"({frame.capture_ts} after {last})"
            )
        self._last_seen_ts[frame.camera_id] = frame.capture_ts
        q.append(frame)
        if self._anchor is None and not self._emitted_any:
            # phase-lock to the earliest stream: the smallest first-frame ts wins
            if self._next_tick is None or frame.capture_ts < self._next_tick:
                self._next_tick = frame.capture_ts

    def close(self, camera_id: int | None = None) -> None:
        """Mark stream end; closed cameras never block tick finalization."""
        if camera_id is None:
            self._closed.update(self._queues)
        else:
            self._closed.add(camera_id)

    def _tick_decidable(self, tick: int, force: bool) -> bool:
        if force:
            return True
        horizon = tick + self.tolerance_us
        for cid in self._queues:
            if cid in self._closed:
                continue
            last = self._last_seen_ts.get(cid)
            if last is None or last < horizon:
                return False
        return True

    def _probe(self, cid: int, tick: int) -> TimedFrame | None:
        """Best candidate for a tick without consuming it from the queue."""
        q = self._queues[cid]
        lo = tick - self.tolerance_us
        hi = tick + self.tolerance_us
        # frames older than the window can never serve a later tick either
        while q and q[0].capture_ts < lo:
            q.popleft()
        best = None
        best_d = None
        for f in q:
            if f.capture_ts > hi:
                break
            d = abs(f.capture_ts - tick)
            if best is None or d < best_d:  # strict: equidistant keeps the earlier
                best, best_d = f, d
        return best

    def _consume_through(self, cid: int, ts: int) -> None:
        q = self._queues[cid]
        while q and q[0].capture_ts <= ts:
            q.popleft()

    def ready(self, now_ts: int | None = None) -> list[FrameSet]:
        """Emit every decidable FrameSet, in tick order.

        `now_ts` optionally force-finalizes ticks whose window closed before
        `now_ts` even if some stream is silent (live operation); offline
        callers leave it None and `close()` streams instead.
        """
        out: list[FrameSet] = []
        while self._next_tick is not None:
            if len(self._closed) == len(self._queues) and all(
                len(q) == 0 for q in self._queues.values()
            ):
                break  # nothing left that could ever yield a fresh pick
            tick = self._next_tick
            force = now_ts is not None and now_ts >= tick + self.tolerance_us
            if not self._tick_decidable(tick, force):
                break
            picks = {cid: self._probe(cid, tick) for cid in self._queues}
            if not self._emitted_any and any(
                p is None and cid not in self._last_emitted for cid, p in picks.items()
            ):
                # waiting for first coverage: skip this tick without emitting
                self._next_tick = tick + self.period_us
                continue
            entries: dict[int, FrameEntry] = {}
            for cid, pick in sorted(picks.items()):
                if pick is not None:
                    entries[cid] = FrameEntry(pick, 0)
                    self._consume_through(cid, pick.capture_ts)
                else:
                    prev = self._last_emitted[cid]
                    staleness = prev.staleness + 1
                    if staleness > self.max_staleness:
                        raise StreamLostError(cid, tick)
                    entries[cid] = FrameEntry(prev.frame, staleness)
            fs = FrameSet(tick_ts=tick, frames=entries)
            self._last_emitted.update(entries)
            self._emitted_any = True
            self._next_tick = tick + self.period_us
            out.append(fs)
        return out


def assemble(
    streams: Mapping[int, Sequence[TimedFrame]],
    period_us: int = DEFAULT_PERIOD_US,
    tolerance_us: int | None = None,
    max_staleness: int = DEFAULT_MAX_STALENESS,
    anchor_ts: int | None = None,
) -> list[FrameSet]:
    """Offline assembly of complete per-camera frame lists into FrameSets."""
    asm = FrameAssembler(
        streams.keys(),
        period_us=period_us,
        tolerance_us=tolerance_us,
        max_staleness=max_staleness,
        anchor_ts=anchor_ts,
    )
    for cid, frames in streams.items():
        for f in frames:
            if f.camera_id != cid:
                raise ValueError(f"stream {cid} contains a frame from camera {f.camera_id}")
            asm.push(f)
    asm.close()
    return asm.ready()
