import { describe, expect, it } from "vitest";

import { ViewpointGate } from "../src/rate.js";

const IDENT = [1, 0, 0, 0, 1, 0, 0, 0, 1];

function poseAt(x: number) {
  return { rotation: IDENT, translation: [x, 0, 0] };
}

describe("ViewpointGate", () => {
  it("caps sends at the configured rate however fast input arrives", () => {
    const gate = new ViewpointGate(30);
    let sent = 0;
    // 1000 input events over one second
    for (let i = 0; i < 1000; i++) {
      const nowMs = i;
      if (gate.offer(poseAt(i * 0.01), nowMs) !== null) sent++;
    }
    expect(sent).toBeLessThanOrEqual(31);
    expect(sent).toBeGreaterThanOrEqual(29);
  });

  it("suppresses movement inside the dead zone", () => {
    const gate = new ViewpointGate(30, 1e-3);
    expect(gate.offer(poseAt(0), 0)).not.toBeNull();
    expect(gate.offer(poseAt(0.0005), 100)).toBeNull();
    expect(gate.offer(poseAt(0.5), 200)).not.toBeNull();
  });

  it("keeps the newest suppressed pose for the next window", () => {
    const gate = new ViewpointGate(10); // 100 ms window
    expect(gate.offer(poseAt(0), 0)).not.toBeNull();
    expect(gate.offer(poseAt(1), 10)).toBeNull();
    expect(gate.offer(poseAt(2), 20)).toBeNull();
    const drained = gate.drainPending(150);
    expect(drained).not.toBeNull();
    expect(drained!.translation[0]).toBe(2);
    expect(gate.drainPending(300)).toBeNull(); // nothing pending anymore
  });
});
