// Viewer-side state. Selection sets shown in the UI come exclusively from
// server SelectionReport messages; nothing here guesses them locally.

import type { RigCamera, SelectionReport } from "./protocol.js";

export type ConnectionStatus = "connecting" | "connected" | "disconnected";

export class ViewerState {
  status: ConnectionStatus = "connecting";
  rig: RigCamera[] = [];
  lastReport: SelectionReport | null = null;
  arcS = 0.5;
  heightOffset = 0;
  lookatOffsetX = 0;
  lookatOffsetZ = 0;
  expertMode = false;
  displayFps = 0;
  controlRttUs = 0;

  private frameTimesMs: number[] = [];
  private listeners: Array<() => void> = [];

  onChange(fn: () => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  setStatus(status: ConnectionStatus): void {
    if (this.status !== status) {
      this.status = status;
      this.emit();
    }
  }

  setRig(cameras: RigCamera[]): void {
    this.rig = cameras;
    this.emit();
  }

  applySelectionReport(report: SelectionReport): void {
    this.lastReport = { active: [...report.active], subscribed: [...report.subscribed] };
    this.emit();
  }

  /** Active/subscribed sets as shown to the user; empty until a report arrives. */
  displayedSelection(): SelectionReport {
    if (!this.lastReport) return { active: [], subscribed: [] };
    return this.lastReport;
  }

  noteFrame(nowMs: number): void {
    this.frameTimesMs.push(nowMs);
    while (this.frameTimesMs.length > 0 && this.frameTimesMs[0] < nowMs - 2000) {
      this.frameTimesMs.shift();
    }
    this.displayFps = this.frameTimesMs.length / 2;
    this.emit();
  }

  noteRtt(us: number): void {
    this.controlRttUs = us;
    this.emit();
  }
}
