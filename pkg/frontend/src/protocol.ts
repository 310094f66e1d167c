// Wire protocol shared with the edge server's websocket bridge:
// text frames carry control JSON, binary frames carry one media message.

export const MEDIA_MAGIC = 0x4d565646; // "FVVM" read as little-endian u32
export const MEDIA_HEADER_SIZE = 26;
export const MSG_COLOR = 1;
export const FLAG_DEFLATE = 0x0001;
export const FLAG_PNG = 0x0002;
export const VIRTUAL_CAMERA_ID = 0xffff;

export interface MediaFrame {
  msgType: number;
  cameraId: number;
  captureTs: number; // microseconds; safe in a double for any realistic run
  width: number;
  height: number;
  flags: number;
  payload: Uint8Array;
}

export function parseMediaFrame(buf: ArrayBuffer): MediaFrame {
  if (buf.byteLength < MEDIA_HEADER_SIZE) {
    throw new Error(`media frame too short: ${buf.byteLength} bytes`);
  }
  const view = new DataView(buf);
  if (view.getUint32(0, true) !== MEDIA_MAGIC) {
    throw new Error("bad media magic");
  }
  const version = view.getUint8(4);
  if (version !== 1) {
    throw new Error(`unsupported media version ${version}`);
  }
  const payloadLen = view.getUint32(22, true);
  if (buf.byteLength < MEDIA_HEADER_SIZE + payloadLen) {
    throw new Error("truncated media payload");
  }
  return {
    msgType: view.getUint8(5),
    cameraId: view.getUint16(6, true),
    captureTs: Number(view.getBigUint64(8, true)),
    width: view.getUint16(16, true),
    height: view.getUint16(18, true),
    flags: view.getUint16(20, true),
    payload: new Uint8Array(buf, MEDIA_HEADER_SIZE, payloadLen),
  };
}

export interface RigCamera {
  id: number;
  intrinsics: number[]; // fx fy cx cy width height
  pose: number[]; // 9 rotation row-major + 3 translation
  center: number[]; // camera center in world meters
}

export interface SelectionReport {
  active: number[];
  subscribed: number[];
}

export interface ViewpointMessage {
  type: "viewpoint";
  pose: number[];
  intrinsics: number[];
  client_ts: number;
}

export function makeViewpoint(
  rotation: number[],
  translation: number[],
  intrinsics: number[],
  clientTs: number
): ViewpointMessage {
  if (rotation.length !== 9 || translation.length !== 3 || intrinsics.length !== 6) {
    throw new Error("viewpoint needs 9+3 pose floats and 6 intrinsics floats");
  }
  return {
    type: "viewpoint",
    pose: [...rotation, ...translation],
    intrinsics: [...intrinsics],
    client_ts: Math.round(clientTs),
  };
}
