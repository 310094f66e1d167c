// DOM glue: wires the sliders, canvases and status line to a ViewerClient.

import { ViewerClient } from "./client.js";
import { FLAG_PNG, MediaFrame } from "./protocol.js";
import { drawSchematic } from "./schematic.js";

const params = new URLSearchParams(location.search);
const server = params.get("server") ?? `${location.hostname || "127.0.0.1"}:9502`;
const expert = params.get("expert") === "1";

const video = document.getElementById("video") as HTMLCanvasElement;
const videoCtx = video.getContext("2d")!;
const schematic = document.getElementById("schematic") as HTMLCanvasElement;
const schematicCtx = schematic.getContext("2d")!;
const statusEl = document.getElementById("status")!;
const statsEl = document.getElementById("stats")!;
const selectionEl = document.getElementById("selection")!;
const errorEl = document.getElementById("error")!;

const arcSlider = document.getElementById("arc") as HTMLInputElement;
const heightSlider = document.getElementById("height") as HTMLInputElement;
const lookxSlider = document.getElementById("lookx") as HTMLInputElement;
const expertBox = document.getElementById("expert-box") as HTMLElement;
const expertPose = document.getElementById("expert-pose") as HTMLTextAreaElement;
if (expert) expertBox.style.display = "block";

let lastFrameUrl: string | null = null;

function showFrame(frame: MediaFrame): void {
  if (!(frame.flags & FLAG_PNG)) return; // raw I420 mode is for benchmarks
  const blob = new Blob([frame.payload.slice()], { type: "image/png" });
  const url = URL.createObjectURL(blob);
  const img = new Image();
  img.onload = () => {
    video.width = img.width;
    video.height = img.height;
    videoCtx.drawImage(img, 0, 0);
    if (lastFrameUrl) URL.revokeObjectURL(lastFrameUrl);
    lastFrameUrl = url;
  };
  img.src = url;
}

const client = new ViewerClient(`ws://${server}/`, {
  socketFactory: (url) => {
    const ws = new WebSocket(url);
    ws.binaryType = "arraybuffer";
    return ws as unknown as import("./client.js").SocketLike;
  },
  now: () => performance.now(),
  setInterval: (fn, ms) => window.setInterval(fn, ms),
  clearInterval: (h) => window.clearInterval(h as number),
  onFrame: showFrame,
  onError: (code, text) => {
    errorEl.textContent = `server error ${code}: ${text}`;
  },
});

function currentControls(): [number, number, [number, number, number]] {
  return [
    parseFloat(arcSlider.value),
    parseFloat(heightSlider.value),
    [parseFloat(lookxSlider.value), 0, 0],
  ];
}

function pushControls(): void {
  if (expert && expertPose.value.trim()) {
    try {
      const vals = expertPose.value.trim().split(/[\s,]+/).map(Number);
      if (vals.length === 18 && vals.every((v) => Number.isFinite(v))) {
        client.updateRawPose(vals.slice(0, 9), vals.slice(9, 12), vals.slice(12));
        errorEl.textContent = "";
      } else {
        errorEl.textContent = "expert pose needs 18 numbers (9 R, 3 t, 6 intrinsics)";
      }
    } catch {
      errorEl.textContent = "cannot parse expert pose";
    }
    return;
  }
  const [s, h, look] = currentControls();
  client.updateControls(s, h, look);
}

for (const el of [arcSlider, heightSlider, lookxSlider]) {
  el.addEventListener("input", pushControls);
}
expertPose?.addEventListener("change", pushControls);

function render(): void {
  statusEl.textContent = client.state.status;
  statusEl.className = `badge ${client.state.status}`;
  const sel = client.state.displayedSelection();
  selectionEl.textContent = sel.active.length
    ? `active [${sel.active.join(", ")}]  subscribed {${sel.subscribed.join(", ")}}`
    : "no selection yet";
  statsEl.textContent =
    `fps ${client.state.displayFps.toFixed(1)}  rtt ${(client.state.controlRttUs / 1000).toFixed(1)} ms`;
  drawSchematic(schematicCtx, client.state.rig, sel, null);
}

client.state.onChange(render);
window.setInterval(() => {
  client.tick(); // flush rate-limited pose updates
  render();
}, 100);

client.connect();
render();
