/**
 * WebSocket session against the simulation service, with automatic
 * reconnection. The socket constructor is injectable so tests can drive the
 * class from node with the `ws` package.
 */

import {
  ControlMessage,
  InitMessage,
  parseServerText,
  ProtocolError,
  VersionMismatchError
} from "./protocol";

export type ConnectionStatus =
  | "connecting"
  | "open"
  | "reconnecting"
  | "failed"
  | "version-mismatch"
  | "closed";

export interface SessionEvents {
  onInit: (init: InitMessage) => void;
  onFrame: (data: ArrayBuffer) => void;
  onServerError: (message: string) => void;
  onPong: (rttMs: number) => void;
  onStatus: (status: ConnectionStatus) => void;
}

/** The subset of the browser WebSocket surface the session relies on. */
export interface SocketLike {
  binaryType: string;
  onopen: ((ev: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev: unknown) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  readyState: number;
  send(data: string): void;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ConnectionOptions {
  socketFactory?: SocketFactory;
  initialBackoffMs?: number;
  maxBackoffMs?: number;
  now?: () => number;
}

const SOCKET_OPEN = 1;

export class ServiceConnection {
  readonly url: string;
  status: ConnectionStatus = "closed";

  private readonly events: SessionEvents;
  private readonly makeSocket: SocketFactory;
  private readonly initialBackoffMs: number;
  private readonly maxBackoffMs: number;
  private readonly now: () => number;

  private socket: SocketLike | null = null;
  private backoffMs: number;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private everOpened = false;
  private stopped = true;

  constructor(url: string, events: SessionEvents, options: ConnectionOptions = {}) {
    this.url = url;
    this.events = events;
    this.makeSocket = options.socketFactory
      ?? ((u) => new WebSocket(u) as unknown as SocketLike);
    this.initialBackoffMs = options.initialBackoffMs ?? 1000;
    this.maxBackoffMs = options.maxBackoffMs ?? 10000;
    this.backoffMs = this.initialBackoffMs;
    this.now = options.now ?? (() => performance.now());
  }

  connect(): void {
    this.stopped = false;
    this.open();
  }

  close(): void {
    this.stopped = true;
    this.cancelRetry();
    this.teardownSocket();
    this.setStatus("closed");
  }

  /** Skip the remaining backoff and try again immediately. */
  retryNow(): void {
    if (this.stopped || this.socket) return;
    this.cancelRetry();
    this.open();
  }

  send(msg: ControlMessage): boolean {
    if (!this.socket || this.socket.readyState !== SOCKET_OPEN) return false;
    this.socket.send(JSON.stringify(msg));
    return true;
  }

  /** Measure round-trip latency; the reply lands in onPong. */
  sendPing(): boolean {
    return this.send({ type: "ping", t: this.now() });
  }

  private open(): void {
    this.setStatus(this.everOpened ? "reconnecting" : "connecting");
    let socket: SocketLike;
    try {
      socket = this.makeSocket(this.url);
    } catch {
      this.scheduleRetry();
      return;
    }
    this.socket = socket;
    socket.binaryType = "arraybuffer";
    socket.onopen = () => {
      this.everOpened = true;
      this.backoffMs = this.initialBackoffMs;
      this.setStatus("open");
    };
    socket.onmessage = (ev) => this.handleMessage(ev.data);
    socket.onerror = () => {
      // the close handler owns recovery; browsers fire both on failure
    };
    socket.onclose = () => {
      if (this.socket !== socket) return;
      this.socket = null;
      if (this.stopped || this.status === "version-mismatch") return;
      this.scheduleRetry();
    };
  }

  private handleMessage(data: unknown): void {
    if (typeof data !== "string") {
      if (data instanceof ArrayBuffer) this.events.onFrame(data);
      return;
    }
    let msg;
    try {
      msg = parseServerText(data);
    } catch (err) {
      if (err instanceof VersionMismatchError) {
        this.setStatus("version-mismatch");
        this.teardownSocket();
        return;
      }
      if (err instanceof ProtocolError) {
        this.events.onServerError(err.message);
        return;
      }
      throw err;
    }
    switch (msg.type) {
      case "init":
        this.events.onInit(msg);
        break;
      case "pong":
        this.events.onPong(this.now() - msg.t);
        break;
      case "error":
        this.events.onServerError(msg.message);
        break;
    }
  }

  private scheduleRetry(): void {
    this.setStatus(this.everOpened ? "reconnecting" : "failed");
    this.cancelRetry();
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      if (!this.stopped) this.open();
    }, this.backoffMs);
    this.backoffMs = Math.min(this.backoffMs * 2, this.maxBackoffMs);
  }

  private cancelRetry(): void {
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
  }

  private teardownSocket(): void {
    const socket = this.socket;
    if (!socket) return;
    this.socket = null;
    socket.onopen = null;
    socket.onmessage = null;
    socket.onclose = null;
    socket.onerror = null;
    try {
      socket.close();
    } catch {
      // already dead
    }
  }

  private setStatus(status: ConnectionStatus): void {
    if (this.status === status) return;
    this.status = status;
    this.events.onStatus(status);
  }
}
