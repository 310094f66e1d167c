// Session-level checks: the arc sweep rate cap, selection display fidelity
// and the disconnect badge, all on fake sockets and a fake clock.

import { beforeEach, describe, expect, it } from "vitest";

import { HEARTBEAT_TIMEOUT_MS, SocketLike, ViewerClient } from "../src/client.js";
import { lookAt, Vec3 } from "../src/pose.js";
import type { RigCamera } from "../src/protocol.js";

class FakeClock {
  ms = 0;
  private timers: Array<{ fn: () => void; interval: number; next: number }> = [];

  now = () => this.ms;

  setInterval = (fn: () => void, interval: number) => {
    const t = { fn, interval, next: this.ms + interval };
    this.timers.push(t);
    return t;
  };

  clearInterval = (handle: unknown) => {
    this.timers = this.timers.filter((t) => t !== handle);
  };

  advance(ms: number) {
    const end = this.ms + ms;
    for (;;) {
      const due = this.timers.filter((t) => t.next <= end).sort((a, b) => a.next - b.next)[0];
      if (!due) break;
      this.ms = due.next;
      due.next += due.interval;
      due.fn();
    }
    this.ms = end;
  }
}

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closed = false;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onopen: (() => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;

  send(data: string) {
    this.sent.push(data);
  }

  close() {
    this.closed = true;
  }

  serverSays(msg: unknown) {
    this.onmessage?.({ data: JSON.stringify(msg) });
  }
}

function arcRig(): RigCamera[] {
  const cams: RigCamera[] = [];
  for (let i = 0; i < 9; i++) {
    const phi = ((-60 + 15 * i) * Math.PI) / 180;
    const eye: Vec3 = [4 * Math.sin(phi), -0.5, -4 * Math.cos(phi)];
    const pose = lookAt(eye, [0, -0.5, 0]);
    cams.push({
      id: i,
      intrinsics: [554.3, 554.3, 320, 180, 640, 360],
      pose: [...pose.rotation, ...pose.translation],
      center: [...eye],
    });
  }
  return cams;
}

let clock: FakeClock;
let socket: FakeSocket;
let client: ViewerClient;
let errors: Array<[number, string]>;

beforeEach(() => {
  clock = new FakeClock();
  socket = new FakeSocket();
  errors = [];
  client = new ViewerClient("ws://test/", {
    socketFactory: () => socket,
    now: clock.now,
    setInterval: clock.setInterval,
    clearInterval: clock.clearInterval,
    onError: (code, text) => errors.push([code, text]),
  });
  client.connect();
  socket.onopen?.();
  socket.serverSays({ type: "rig", cameras: arcRig() });
});

function sentViewpoints(): Array<{ pose: number[]; client_ts: number }> {
  return socket.sent.map((s) => JSON.parse(s)).filter((m) => m.type === "viewpoint");
}

describe("arc sweep", () => {
  it("emits viewpoint messages at no more than 30 Hz", () => {
    // a 4-second sweep with input events every 4 ms (250 Hz)
    const sweepMs = 4000;
    for (let t = 0; t <= sweepMs; t += 4) {
      client.updateControls(t / sweepMs, 0, [0, 0, 0]);
      clock.advance(4);
    }
    const n = sentViewpoints().length;
    expect(n).toBeGreaterThan(30); // the sweep does flow
    expect(n).toBeLessThanOrEqual(Math.ceil((sweepMs / 1000) * 30) + 1);
  });

  it("keeps sending nothing when the pose sits inside the dead zone", () => {
    client.updateControls(0.5, 0, [0, 0, 0]);
    const before = sentViewpoints().length;
    for (let i = 0; i < 50; i++) {
      clock.advance(50);
      client.updateControls(0.5, 0, [0, 0, 0]);
    }
    expect(sentViewpoints().length).toBe(before);
  });
});

describe("selection display", () => {
  it("shows exactly the reported sets for a whole sweep", () => {
    const log: Array<{ active: number[]; subscribed: number[] }> = [];
    for (let step = 0; step < 9; step++) {
      const report = {
        type: "selection_report",
        active: [step, Math.max(step - 1, 0), Math.min(step + 1, 8)],
        subscribed: [0, 1, 2, 3, 4].map((k) => Math.min(Math.max(step - 2 + k, 0), 8)),
      };
      socket.serverSays(report);
      log.push({ active: report.active, subscribed: report.subscribed });
      const shown = client.state.displayedSelection();
      expect(shown.active).toEqual(log[log.length - 1].active);
      expect(shown.subscribed).toEqual(log[log.length - 1].subscribed);
    }
  });

  it("fabricates nothing before the first report", () => {
    expect(client.state.displayedSelection()).toEqual({ active: [], subscribed: [] });
    client.updateControls(0.9, 0, [0, 0, 0]); // moving the controls changes nothing
    expect(client.state.displayedSelection()).toEqual({ active: [], subscribed: [] });
  });
});

describe("connection badge", () => {
  it("flips to disconnected within 5 s of server silence", () => {
    expect(client.state.status).toBe("connected");
    socket.serverSays({ type: "heartbeat", ts: 1 });
    clock.advance(HEARTBEAT_TIMEOUT_MS + 600); // watchdog polls twice a second
    expect(client.state.status).toBe("disconnected");
  });

  it("stays connected while heartbeats keep arriving", () => {
    for (let i = 0; i < 20; i++) {
      clock.advance(1000);
      socket.serverSays({ type: "heartbeat", ts: i });
    }
    expect(client.state.status).toBe("connected");
  });

  it("reports the socket closing immediately", () => {
    socket.onclose?.();
    expect(client.state.status).toBe("disconnected");
  });
});

describe("errors", () => {
  it("surfaces the viewer-slot-taken error verbatim", () => {
    socket.serverSays({ type: "error", code: 1, text: "viewer slot taken" });
    expect(errors).toEqual([[1, "viewer slot taken"]]);
  });
});

describe("round trip measurement", () => {
  it("computes rtt from echoed heartbeats", () => {
    clock.advance(500); // first watchdog tick sends a heartbeat
    const beat = socket.sent.map((s) => JSON.parse(s)).find((m) => m.type === "heartbeat");
    expect(beat).toBeTruthy();
    clock.ms += 7; // 7 ms later the echo arrives
    socket.serverSays({ type: "heartbeat", ts: beat.ts });
    expect(client.state.controlRttUs).toBe(7000);
  });
});
