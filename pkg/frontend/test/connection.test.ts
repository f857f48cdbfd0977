import { afterEach, describe, expect, it } from "vitest";
import { AddressInfo, createServer } from "node:net";
import { WebSocket as NodeWebSocket, WebSocketServer } from "ws";
import { ConnectionStatus, ServiceConnection, SocketLike } from "../src/connection";
import { InitMessage } from "../src/protocol";
import { encodeFrame, makeInit } from "./helpers";

const nodeSocketFactory = (url: string) => new NodeWebSocket(url) as unknown as SocketLike;

interface Recorded {
  inits: InitMessage[];
  frames: ArrayBuffer[];
  errors: string[];
  pongs: number[];
  statuses: ConnectionStatus[];
}

function record(): Recorded {
  return { inits: [], frames: [], errors: [], pongs: [], statuses: [] };
}

function makeConnection(url: string, seen: Recorded, backoffMs = 25): ServiceConnection {
  return new ServiceConnection(url, {
    onInit: (m) => seen.inits.push(m),
    onFrame: (d) => seen.frames.push(d),
    onServerError: (m) => seen.errors.push(m),
    onPong: (ms) => seen.pongs.push(ms),
    onStatus: (s) => seen.statuses.push(s)
  }, { socketFactory: nodeSocketFactory, initialBackoffMs: backoffMs, maxBackoffMs: 4 * backoffMs });
}

async function until(cond: () => boolean, label: string, timeoutMs = 4000): Promise<void> {
  const t0 = Date.now();
  while (!cond()) {
    if (Date.now() - t0 > timeoutMs) throw new Error(`timed out waiting for ${label}`);
    await new Promise((r) => setTimeout(r, 5));
  }
}

function listen(onConnection: (sock: NodeWebSocket) => void, port = 0): Promise<WebSocketServer> {
  const wss = new WebSocketServer({ host: "127.0.0.1", port });
  wss.on("connection", onConnection);
  return new Promise((resolve, reject) => {
    wss.once("listening", () => resolve(wss));
    wss.once("error", reject);
  });
}

function portOf(wss: WebSocketServer): number {
  return (wss.address() as AddressInfo).port;
}

/** Reserve an ephemeral port that nothing is listening on yet. */
async function freePort(): Promise<number> {
  return new Promise((resolve) => {
    const srv = createServer();
    srv.listen(0, "127.0.0.1", () => {
      const port = (srv.address() as AddressInfo).port;
      srv.close(() => resolve(port));
    });
  });
}

const cleanups: Array<() => void> = [];
afterEach(() => {
  while (cleanups.length) cleanups.pop()!();
});

describe("ServiceConnection", () => {
  it("delivers init, frames, pongs and service errors", async () => {
    const seen = record();
    const pings: unknown[] = [];
    const wss = await listen((sock) => {
      sock.send(JSON.stringify(makeInit()));
      sock.send(encodeFrame(1n, 0, new Float32Array(4), new Float32Array(12)));
      sock.on("message", (data, isBinary) => {
        if (isBinary) return;
        const msg = JSON.parse(data.toString());
        pings.push(msg);
        sock.send(JSON.stringify({ type: "pong", t: msg.t }));
        sock.send(JSON.stringify({ type: "error", message: "observed by the client" }));
      });
    });
    const conn = makeConnection(`ws://127.0.0.1:${portOf(wss)}`, seen);
    cleanups.push(() => conn.close(), () => wss.close());

    conn.connect();
    await until(() => seen.frames.length > 0, "first frame");
    expect(seen.statuses[0]).toBe("connecting");
    expect(seen.statuses).toContain("open");
    expect(seen.inits).toHaveLength(1);
    expect(seen.inits[0].labels).toEqual(["tip", "mid"]);
    expect(seen.frames[0].byteLength).toBe(10 + 4 * (4 + 12));

    expect(conn.sendPing()).toBe(true);
    await until(() => seen.pongs.length > 0 && seen.errors.length > 0, "pong and error");
    expect(seen.pongs[0]).toBeGreaterThanOrEqual(0);
    expect(pings[0]).toMatchObject({ type: "ping" });
    expect(seen.errors[0]).toBe("observed by the client");
  });

  it("reconnects after a drop and replays the handshake", async () => {
    const seen = record();
    let connections = 0;
    const wss = await listen((sock) => {
      connections += 1;
      sock.send(JSON.stringify(makeInit()));
      if (connections === 1) setTimeout(() => sock.close(), 20);
    });
    const conn = makeConnection(`ws://127.0.0.1:${portOf(wss)}`, seen);
    cleanups.push(() => conn.close(), () => wss.close());

    conn.connect();
    await until(() => seen.inits.length >= 2, "second handshake");
    expect(connections).toBeGreaterThanOrEqual(2);
    expect(seen.statuses).toContain("reconnecting");
    const lastOpen = seen.statuses.lastIndexOf("open");
    expect(lastOpen).toBeGreaterThan(seen.statuses.indexOf("reconnecting"));
  });

  it("keeps retrying while the service is down, then picks it up", async () => {
    const seen = record();
    const port = await freePort();
    const conn = makeConnection(`ws://127.0.0.1:${port}`, seen);
    cleanups.push(() => conn.close());

    conn.connect();
    await until(() => seen.statuses.includes("failed"), "initial failure");
    expect(conn.send({ type: "release", vertex: 0 })).toBe(false);

    const wss = await listen((sock) => sock.send(JSON.stringify(makeInit())), port);
    cleanups.push(() => wss.close());
    await until(() => seen.inits.length > 0, "late handshake");
    expect(seen.statuses[seen.statuses.length - 1]).toBe("open");
  });

  it("treats a protocol version mismatch as terminal", async () => {
    const seen = record();
    let connections = 0;
    const wss = await listen((sock) => {
      connections += 1;
      sock.send(JSON.stringify(makeInit({ version: 2 })));
    });
    const conn = makeConnection(`ws://127.0.0.1:${portOf(wss)}`, seen);
    cleanups.push(() => conn.close(), () => wss.close());

    conn.connect();
    await until(() => seen.statuses.includes("version-mismatch"), "mismatch status");
    await new Promise((r) => setTimeout(r, 150));   // several backoff periods
    expect(connections).toBe(1);
    expect(seen.inits).toHaveLength(0);
    expect(conn.status).toBe("version-mismatch");
  });

  it("surfaces malformed server text without dropping the session", async () => {
    const seen = record();
    const wss = await listen((sock) => {
      sock.send("definitely not json");
      sock.send(JSON.stringify(makeInit()));
    });
    const conn = makeConnection(`ws://127.0.0.1:${portOf(wss)}`, seen);
    cleanups.push(() => conn.close(), () => wss.close());

    conn.connect();
    await until(() => seen.inits.length > 0, "handshake after garbage");
    expect(seen.errors.some((e) => /JSON/.test(e))).toBe(true);
    expect(conn.status).toBe("open");
  });

  it("retryNow skips the remaining backoff", async () => {
    const seen = record();
    const port = await freePort();
    // backoff far longer than the test; only an explicit retry can connect
    const conn = makeConnection(`ws://127.0.0.1:${port}`, seen, 60_000);
    cleanups.push(() => conn.close());

    conn.connect();
    await until(() => seen.statuses.includes("failed"), "initial failure");
    const wss = await listen((sock) => sock.send(JSON.stringify(makeInit())), port);
    cleanups.push(() => wss.close());

    conn.retryNow();
    await until(() => seen.inits.length > 0, "handshake after manual retry");
    expect(conn.status).toBe("open");
  });
});
