import { describe, expect, it } from "vitest";

import { layoutSchematic } from "../src/schematic.js";
import type { RigCamera } from "../src/protocol.js";

function flatRig(xs: number[]): RigCamera[] {
  return xs.map((x, i) => ({
    id: i,
    intrinsics: [],
    pose: [1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0],
    center: [x, -0.5, -4],
  }));
}

describe("layoutSchematic", () => {
  it("assigns roles from the selection", () => {
    const pts = layoutSchematic(
      flatRig([0, 1, 2, 3, 4]),
      { active: [1, 2], subscribed: [0, 1, 2, 3] },
      200,
      100
    );
    expect(pts.map((p) => p.role)).toEqual([
      "subscribed",
      "active",
      "active",
      "subscribed",
      "idle",
    ]);
  });

  it("keeps points inside the canvas and preserves x order", () => {
    const pts = layoutSchematic(flatRig([-4, -1, 0, 2, 4]), { active: [], subscribed: [] }, 300, 150);
    for (const p of pts) {
      expect(p.x).toBeGreaterThanOrEqual(0);
      expect(p.x).toBeLessThanOrEqual(300);
      expect(p.y).toBeGreaterThanOrEqual(0);
      expect(p.y).toBeLessThanOrEqual(150);
    }
    const xs = pts.map((p) => p.x);
    expect([...xs].sort((a, b) => a - b)).toEqual(xs);
  });

  it("handles an empty rig", () => {
    expect(layoutSchematic([], { active: [], subscribed: [] }, 100, 100)).toEqual([]);
  });
});
