// Virtual-camera pose math, mirroring the server's conventions:
// camera frame x right / y down / z forward, world y-down (up is -y).

import type { RigCamera } from "./protocol.js";

export type Vec3 = [number, number, number];

export function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function add(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

export function scale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function norm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

export function normalize(a: Vec3): Vec3 {
  const n = norm(a);
  if (n < 1e-12) throw new Error("zero-length vector");
  return scale(a, 1 / n);
}

export interface Pose {
  rotation: number[]; // 9 entries row-major, world-to-camera
  translation: Vec3;
}

/** World-to-camera pose looking from eye at target, image-down along world down (+y). */
export function lookAt(eye: Vec3, target: Vec3, down: Vec3 = [0, 1, 0]): Pose {
  const z = normalize(sub(target, eye));
  let x = cross(down, z);
  if (norm(x) < 1e-9) {
    x = cross([0, 0, 1], z);
  }
  x = normalize(x);
  const y = cross(z, x);
  const r = [...x, ...y, ...z];
  const t: Vec3 = [
    -(r[0] * eye[0] + r[1] * eye[1] + r[2] * eye[2]),
    -(r[3] * eye[0] + r[4] * eye[1] + r[5] * eye[2]),
    -(r[6] * eye[0] + r[7] * eye[1] + r[8] * eye[2]),
  ];
  return { rotation: r, translation: t };
}

/** Optical axis (camera +z) in world coordinates: third row of the rotation. */
export function opticalAxis(pose: number[]): Vec3 {
  return [pose[6], pose[7], pose[8]];
}

/**
 * Least-squares intersection point of the cameras' optical axes; on an
 * inward-looking arc this recovers the stage center the rig was aimed at.
 */
export function stageTarget(cameras: RigCamera[]): Vec3 {
  // solve (sum_i (I - d d^T)) x = sum_i (I - d d^T) c_i
  const a = [0, 0, 0, 0, 0, 0, 0, 0, 0];
  const b: Vec3 = [0, 0, 0];
  for (const cam of cameras) {
    const d = normalize(opticalAxis(cam.pose));
    const c = cam.center as Vec3;
    for (let i = 0; i < 3; i++) {
      for (let j = 0; j < 3; j++) {
        const m = (i === j ? 1 : 0) - d[i] * d[j];
        a[3 * i + j] += m;
        b[i] += m * c[j];
      }
    }
  }
  return solve3(a, b);
}

function solve3(a: number[], b: Vec3): Vec3 {
  // Gaussian elimination with partial pivoting on a 3x3 system
  const m = [
    [a[0], a[1], a[2], b[0]],
    [a[3], a[4], a[5], b[1]],
    [a[6], a[7], a[8], b[2]],
  ];
  for (let col = 0; col < 3; col++) {
    let piv = col;
    for (let r = col + 1; r < 3; r++) {
      if (Math.abs(m[r][col]) > Math.abs(m[piv][col])) piv = r;
    }
    if (Math.abs(m[piv][col]) < 1e-12) throw new Error("degenerate rig geometry");
    [m[col], m[piv]] = [m[piv], m[col]];
    for (let r = 0; r < 3; r++) {
      if (r === col) continue;
      const f = m[r][col] / m[col][col];
      for (let c = col; c < 4; c++) m[r][c] -= f * m[col][c];
    }
  }
  return [m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]];
}

export interface ControlsPose {
  pose: Pose;
  intrinsics: number[];
  eye: Vec3;
}

/**
 * Interpolate the virtual camera along the rig arc.
 *
 * s in [0, 1] runs piecewise-linearly through the camera centers in id
 * order; the camera keeps looking at the rig's stage target plus an offset,
 * from a height offset above the arc (up is -y).
 */
export function poseFromControls(
  s: number,
  heightOffset: number,
  lookatOffset: Vec3,
  cameras: RigCamera[]
): ControlsPose {
  if (cameras.length === 0) throw new Error("rig is empty");
  const sorted = [...cameras].sort((p, q) => p.id - q.id);
  const centers = sorted.map((c) => c.center as Vec3);
  const sc = Math.min(Math.max(s, 0), 1);
  let eye: Vec3;
  if (centers.length === 1) {
    eye = [...centers[0]] as Vec3;
  } else {
    const x = sc * (centers.length - 1);
    const i = Math.min(Math.floor(x), centers.length - 2);
    const f = x - i;
    eye = add(scale(centers[i], 1 - f), scale(centers[i + 1], f));
  }
  eye = add(eye, [0, -heightOffset, 0]);
  const target = add(stageTarget(sorted), lookatOffset);
  return {
    pose: lookAt(eye, target),
    intrinsics: [...sorted[0].intrinsics],
    eye,
  };
}
