// Rig schematic: top-down plot of camera positions with the active and
// subscribed sets highlighted. Layout math is pure so tests can check it.

import type { RigCamera, SelectionReport } from "./protocol.js";

export interface SchematicPoint {
  id: number;
  x: number; // canvas coordinates
  y: number;
  role: "active" | "subscribed" | "idle";
}

export function layoutSchematic(
  cameras: RigCamera[],
  selection: SelectionReport,
  width: number,
  height: number,
  margin = 20
): SchematicPoint[] {
  if (cameras.length === 0) return [];
  const xs = cameras.map((c) => c.center[0]);
  const zs = cameras.map((c) => c.center[2]);
  const minX = Math.min(...xs, 0);
  const maxX = Math.max(...xs, 0);
  const minZ = Math.min(...zs, 0);
  const maxZ = Math.max(...zs, 0);
  const spanX = Math.max(maxX - minX, 1e-6);
  const spanZ = Math.max(maxZ - minZ, 1e-6);
  const scale = Math.min((width - 2 * margin) / spanX, (height - 2 * margin) / spanZ);
  const active = new Set(selection.active);
  const subscribed = new Set(selection.subscribed);
  return cameras.map((c) => ({
    id: c.id,
    x: margin + (c.center[0] - minX) * scale,
    // world +z runs away from the default arc; put the stage at the top
    y: height - margin - (c.center[2] - minZ) * scale,
    role: active.has(c.id) ? "active" : subscribed.has(c.id) ? "subscribed" : "idle",
  }));
}

const ROLE_COLORS: Record<SchematicPoint["role"], string> = {
  active: "#e1483c",
  subscribed: "#e8b339",
  idle: "#5a6672",
};

export function drawSchematic(
  ctx: CanvasRenderingContext2D,
  cameras: RigCamera[],
  selection: SelectionReport,
  viewerXZ: [number, number] | null
): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  const pts = layoutSchematic(cameras, selection, width, height);
  for (const p of pts) {
    ctx.beginPath();
    ctx.arc(p.x, p.y, p.role === "active" ? 7 : 5, 0, Math.PI * 2);
    ctx.fillStyle = ROLE_COLORS[p.role];
    ctx.fill();
    ctx.fillStyle = "#cfd8e3";
    ctx.font = "10px sans-serif";
    ctx.fillText(String(p.id), p.x - 3, p.y - 10);
  }
  if (viewerXZ && cameras.length > 0) {
    // reuse the camera layout transform for the viewer marker
    const probe: RigCamera = { id: -1, intrinsics: [], pose: [], center: [viewerXZ[0], 0, viewerXZ[1]] };
    const [vp] = layoutSchematic([probe, ...cameras], { active: [], subscribed: [] }, width, height);
    ctx.beginPath();
    ctx.moveTo(vp.x, vp.y - 8);
    ctx.lineTo(vp.x - 6, vp.y + 6);
    ctx.lineTo(vp.x + 6, vp.y + 6);
    ctx.closePath();
    ctx.fillStyle = "#4da3ff";
    ctx.fill();
  }
}
