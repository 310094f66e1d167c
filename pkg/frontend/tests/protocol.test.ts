import { describe, expect, it } from "vitest";

import {
  FLAG_PNG,
  MEDIA_HEADER_SIZE,
  MSG_COLOR,
  VIRTUAL_CAMERA_ID,
  makeViewpoint,
  parseMediaFrame,
} from "../src/protocol.js";

function buildFrame(
  msgType: number,
  cameraId: number,
  captureTs: bigint,
  width: number,
  height: number,
  flags: number,
  payload: Uint8Array
): ArrayBuffer {
  const buf = new ArrayBuffer(MEDIA_HEADER_SIZE + payload.length);
  const view = new DataView(buf);
  view.setUint8(0, 0x46); // F
  view.setUint8(1, 0x56); // V
  view.setUint8(2, 0x56); // V
  view.setUint8(3, 0x4d); // M
  view.setUint8(4, 1); // version
  view.setUint8(5, msgType);
  view.setUint16(6, cameraId, true);
  view.setBigUint64(8, captureTs, true);
  view.setUint16(16, width, true);
  view.setUint16(18, height, true);
  view.setUint16(20, flags, true);
  view.setUint32(22, payload.length, true);
  new Uint8Array(buf, MEDIA_HEADER_SIZE).set(payload);
  return buf;
}

describe("parseMediaFrame", () => {
  it("decodes header fields and payload", () => {
    const payload = new Uint8Array([1, 2, 3, 4, 5]);
    const buf = buildFrame(MSG_COLOR, VIRTUAL_CAMERA_ID, 123456789n, 640, 360, FLAG_PNG, payload);
    const frame = parseMediaFrame(buf);
    expect(frame.msgType).toBe(MSG_COLOR);
    expect(frame.cameraId).toBe(VIRTUAL_CAMERA_ID);
    expect(frame.captureTs).toBe(123456789);
    expect(frame.width).toBe(640);
    expect(frame.height).toBe(360);
    expect(frame.flags & FLAG_PNG).toBeTruthy();
    expect(Array.from(frame.payload)).toEqual([1, 2, 3, 4, 5]);
  });

  it("rejects a bad magic", () => {
    const buf = buildFrame(MSG_COLOR, 0, 0n, 2, 2, 0, new Uint8Array(6));
    new DataView(buf).setUint8(0, 0x58);
    expect(() => parseMediaFrame(buf)).toThrow(/magic/);
  });

  it("rejects unknown versions", () => {
    const buf = buildFrame(MSG_COLOR, 0, 0n, 2, 2, 0, new Uint8Array(6));
    new DataView(buf).setUint8(4, 9);
    expect(() => parseMediaFrame(buf)).toThrow(/version/);
  });

  it("rejects truncated payloads", () => {
    const buf = buildFrame(MSG_COLOR, 0, 0n, 2, 2, 0, new Uint8Array(6));
    expect(() => parseMediaFrame(buf.slice(0, MEDIA_HEADER_SIZE + 3))).toThrow(/truncated/);
  });
});

describe("makeViewpoint", () => {
  it("builds the control document the server expects", () => {
    const msg = makeViewpoint(
      [1, 0, 0, 0, 1, 0, 0, 0, 1],
      [0.5, -0.5, -4],
      [554, 554, 320, 180, 640, 360],
      1234.6
    );
    expect(msg.type).toBe("viewpoint");
    expect(msg.pose).toHaveLength(12);
    expect(msg.intrinsics).toHaveLength(6);
    expect(msg.client_ts).toBe(1235);
  });

  it("validates lengths", () => {
    expect(() => makeViewpoint([1], [0, 0, 0], [0, 0, 0, 0, 0, 0], 0)).toThrow();
  });
});
