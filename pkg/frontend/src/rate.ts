// Viewpoint send gate: caps the message rate and swallows sub-dead-zone
// jitter, whatever the input event rate is.

export interface PoseSample {
  rotation: number[];
  translation: number[];
}

export class ViewpointGate {
  private lastSentMs = -Infinity;
  private lastPose: PoseSample | null = null;
  private pending: PoseSample | null = null;

  constructor(
    private readonly maxHz: number = 30,
    private readonly deadZone: number = 1e-4
  ) {}

  private moved(p: PoseSample): boolean {
    if (this.lastPose === null) return true;
    let d = 0;
    for (let i = 0; i < 3; i++) {
      d = Math.max(d, Math.abs(p.translation[i] - this.lastPose.translation[i]));
    }
    for (let i = 0; i < 9; i++) {
      d = Math.max(d, Math.abs(p.rotation[i] - this.lastPose.rotation[i]));
    }
    return d > this.deadZone;
  }

  /** Returns the pose to send now, or null (rate-limited or inside the dead zone). */
  offer(pose: PoseSample, nowMs: number): PoseSample | null {
    if (!this.moved(pose)) {
      return null;
    }
    const minIntervalMs = 1000 / this.maxHz;
    if (nowMs - this.lastSentMs < minIntervalMs) {
      this.pending = pose;
      return null;
    }
    this.lastSentMs = nowMs;
    this.lastPose = pose;
    this.pending = null;
    return pose;
  }

  /** The most recent suppressed pose becomes sendable once the window opens. */
  drainPending(nowMs: number): PoseSample | null {
    if (this.pending === null) return null;
    return this.offer(this.pending, nowMs);
  }
}
