// WebSocket session against the edge server's bridge. The socket factory and
// clock are injectable so the session logic runs under test without a
// browser or a server.

import { MediaFrame, RigCamera, makeViewpoint, parseMediaFrame } from "./protocol.js";
import { ViewpointGate } from "./rate.js";
import { ViewerState } from "./state.js";
import { poseFromControls, Vec3 } from "./pose.js";

export const HEARTBEAT_TIMEOUT_MS = 5000;

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export interface ClientOptions {
  socketFactory: (url: string) => SocketLike;
  now: () => number; // milliseconds
  setInterval: (fn: () => void, ms: number) => unknown;
  clearInterval: (handle: unknown) => void;
  onFrame?: (frame: MediaFrame) => void;
  onError?: (code: number, text: string) => void;
  maxViewpointHz?: number;
}

export class ViewerClient {
  readonly state = new ViewerState();
  private socket: SocketLike | null = null;
  private gate: ViewpointGate;
  private lastInboundMs = -Infinity;
  private watchdog: unknown = null;
  private heartbeatSentAtMs = new Map<number, number>();
  readonly sentViewpoints: Array<{ atMs: number }> = [];

  constructor(private readonly url: string, private readonly opts: ClientOptions) {
    this.gate = new ViewpointGate(opts.maxViewpointHz ?? 30);
  }

  connect(): void {
    this.state.setStatus("connecting");
    const sock = this.opts.socketFactory(this.url);
    this.socket = sock;
    sock.onopen = () => {
      this.lastInboundMs = this.opts.now();
      this.state.setStatus("connected");
      this.sendJson({ type: "rig_request" });
    };
    sock.onmessage = (ev) => this.handleMessage(ev.data);
    sock.onclose = () => this.state.setStatus("disconnected");
    sock.onerror = () => this.state.setStatus("disconnected");
    this.watchdog = this.opts.setInterval(() => this.checkLiveness(), 500);
  }

  close(): void {
    if (this.watchdog !== null) {
      this.opts.clearInterval(this.watchdog);
      this.watchdog = null;
    }
    this.socket?.close();
    this.state.setStatus("disconnected");
  }

  private checkLiveness(): void {
    if (this.state.status === "connected" && this.opts.now() - this.lastInboundMs > HEARTBEAT_TIMEOUT_MS) {
      this.state.setStatus("disconnected");
    }
    // measure control round trip with our own heartbeat
    if (this.state.status === "connected") {
      const ts = Math.round(this.opts.now() * 1000);
      this.heartbeatSentAtMs.set(ts, this.opts.now());
      this.sendJson({ type: "heartbeat", ts });
    }
  }

  private handleMessage(data: unknown): void {
    this.lastInboundMs = this.opts.now();
    if (this.state.status !== "connected") {
      this.state.setStatus("connected");
    }
    if (typeof data === "string") {
      this.handleControl(JSON.parse(data));
      return;
    }
    if (data instanceof ArrayBuffer) {
      const frame = parseMediaFrame(data);
      this.state.noteFrame(this.opts.now());
      this.opts.onFrame?.(frame);
    }
  }

  private handleControl(msg: Record<string, unknown>): void {
    switch (msg.type) {
      case "rig":
        this.state.setRig(msg.cameras as RigCamera[]);
        break;
      case "selection_report":
        this.state.applySelectionReport({
          active: msg.active as number[],
          subscribed: msg.subscribed as number[],
        });
        break;
      case "heartbeat": {
        const sent = this.heartbeatSentAtMs.get(msg.ts as number);
        if (sent !== undefined) {
          this.heartbeatSentAtMs.delete(msg.ts as number);
          this.state.noteRtt(Math.round((this.opts.now() - sent) * 1000));
        }
        break;
      }
      case "error":
        this.opts.onError?.(msg.code as number, msg.text as string);
        break;
    }
  }

  private sendJson(msg: unknown): void {
    try {
      this.socket?.send(JSON.stringify(msg));
    } catch {
      this.state.setStatus("disconnected");
    }
  }

  /** Move the arc controls; actual sends are rate-limited and dead-zoned. */
  updateControls(s: number, heightOffset: number, lookatOffset: Vec3): void {
    this.state.arcS = s;
    this.state.heightOffset = heightOffset;
    this.state.lookatOffsetX = lookatOffset[0];
    this.state.lookatOffsetZ = lookatOffset[2];
    if (this.state.rig.length === 0) return;
    const { pose, intrinsics } = poseFromControls(s, heightOffset, lookatOffset, this.state.rig);
    this.offerPose(pose.rotation, pose.translation, intrinsics);
  }

  /** Expert mode bypass: raw world-to-camera pose. */
  updateRawPose(rotation: number[], translation: number[], intrinsics: number[]): void {
    this.offerPose(rotation, translation, intrinsics);
  }

  private offerPose(rotation: number[], translation: number[], intrinsics: number[]): void {
    const nowMs = this.opts.now();
    const ready = this.gate.offer({ rotation, translation: [...translation] }, nowMs);
    if (ready === null) return;
    this.sentViewpoints.push({ atMs: nowMs });
    this.sendJson(makeViewpoint(ready.rotation, ready.translation, intrinsics, nowMs * 1000));
  }

  /** Flush a rate-limited pose once the send window reopens. */
  tick(): void {
    const nowMs = this.opts.now();
    const ready = this.gate.drainPending(nowMs);
    if (ready !== null && this.state.rig.length > 0) {
      const { intrinsics } = poseFromControls(this.state.arcS, this.state.heightOffset, [
        this.state.lookatOffsetX,
        0,
        this.state.lookatOffsetZ,
      ], this.state.rig);
      this.sentViewpoints.push({ atMs: nowMs });
      this.sendJson(makeViewpoint(ready.rotation, ready.translation, intrinsics, nowMs * 1000));
    }
  }
}
