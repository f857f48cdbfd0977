/**
 * Pointer-to-message state machine for handle drags. Guarantees the wire
 * ordering the service expects, assign then moves then release, and rate
 * limits moves so a high-frequency pointer does not flood the input queue.
 */

import { ControlMessage } from "./protocol";

export type SendFn = (msg: ControlMessage) => void;

type Target = [number, number, number];

export class HandleDrag {
  private readonly send: SendFn;
  private readonly minMoveIntervalMs: number;
  private readonly now: () => number;

  private vertex: number | null = null;
  private lastMoveAt = -Infinity;
  private pending: Target | null = null;

  constructor(send: SendFn, minMoveIntervalMs = 1000 / 60, now: () => number = () => performance.now()) {
    this.send = send;
    this.minMoveIntervalMs = minMoveIntervalMs;
    this.now = now;
  }

  /** Global vertex id of the active drag, or null when idle. */
  get active(): number | null {
    return this.vertex;
  }

  /** Start a drag; the assign pins the handle at the grab point. */
  begin(vertex: number, grabPoint: Target): void {
    if (this.vertex !== null) return;   // one handle per pointer session
    this.vertex = vertex;
    this.lastMoveAt = -Infinity;
    this.pending = null;
    this.send({ type: "assign", vertex, target: grabPoint });
  }

  /**
   * Update the drag target. Sends immediately when the rate limit allows,
   * otherwise remembers the newest target so no pointer position is lost;
   * the stashed target goes out with the next eligible move or the release.
   */
  move(target: Target): void {
    if (this.vertex === null) return;
    const t = this.now();
    if (t - this.lastMoveAt >= this.minMoveIntervalMs) {
      this.lastMoveAt = t;
      this.pending = null;
      this.send({ type: "move", vertex: this.vertex, target });
    } else {
      this.pending = target;
    }
  }

  /** Finish the drag, flushing any throttled move first. */
  end(): void {
    if (this.vertex === null) return;
    if (this.pending !== null) {
      this.send({ type: "move", vertex: this.vertex, target: this.pending });
      this.pending = null;
    }
    this.send({ type: "release", vertex: this.vertex });
    this.vertex = null;
  }
}
