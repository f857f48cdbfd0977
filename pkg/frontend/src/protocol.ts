/**
 * Wire protocol for the live simulation service.
 *
 * Control traffic is JSON text in both directions. Frames are binary with a
 * fixed little-endian layout: u64 frame id, u16 active component index, then
 * the reduced coordinates of the active component and the surface vertex
 * positions, all f32.
 */

export const PROTOCOL_VERSION = 1;
export const FRAME_HEADER_BYTES = 10;

export class ProtocolError extends Error {}

/** The service advertises a protocol version this client does not speak. */
export class VersionMismatchError extends ProtocolError {
  constructor(public readonly serverVersion: number) {
    super(`service speaks protocol version ${serverVersion}, this client speaks ${PROTOCOL_VERSION}`);
  }
}

export interface InitMessage {
  type: "init";
  version: number;
  /** Global mesh ids of the surface vertices, in surface-local order. */
  surface_vertices: number[];
  /** Surface triangles indexing into surface-local vertices. */
  triangles: number[][];
  /** Rest positions of the surface vertices, xyz interleaved. */
  rest_positions: number[];
  labels: string[];
  dims: number[];
  active: number;
}

export type ControlMessage =
  | { type: "assign"; vertex: number; target: [number, number, number] }
  | { type: "move"; vertex: number; target: [number, number, number] }
  | { type: "release"; vertex: number }
  | { type: "ping"; t: number };

export type ServerText =
  | InitMessage
  | { type: "pong"; t: number }
  | { type: "error"; message: string };

function expectArray(msg: Record<string, unknown>, field: string): unknown[] {
  const value = msg[field];
  if (!Array.isArray(value)) {
    throw new ProtocolError(`init message is missing '${field}'`);
  }
  return value;
}

/**
 * Parse and validate the init message that opens every connection.
 * Throws VersionMismatchError before any other check so the caller can show
 * the dedicated mismatch screen rather than a generic protocol error.
 */
export function parseInit(msg: Record<string, unknown>): InitMessage {
  if (msg.type !== "init") {
    throw new ProtocolError(`expected an init message, got ${JSON.stringify(msg.type)}`);
  }
  if (msg.version !== PROTOCOL_VERSION) {
    throw new VersionMismatchError(typeof msg.version === "number" ? msg.version : NaN);
  }
  const surface = expectArray(msg, "surface_vertices");
  const triangles = expectArray(msg, "triangles");
  const rest = expectArray(msg, "rest_positions");
  const labels = expectArray(msg, "labels");
  const dims = expectArray(msg, "dims");
  if (rest.length !== 3 * surface.length) {
    throw new ProtocolError(
      `rest_positions has ${rest.length} floats for ${surface.length} surface vertices`);
  }
  for (const tri of triangles) {
    if (!Array.isArray(tri) || tri.length !== 3) {
      throw new ProtocolError("triangles must be index triples");
    }
    for (const idx of tri) {
      if (typeof idx !== "number" || idx < 0 || idx >= surface.length) {
        throw new ProtocolError(`triangle index ${idx} outside the surface vertex range`);
      }
    }
  }
  if (labels.length !== dims.length) {
    throw new ProtocolError(`${labels.length} labels for ${dims.length} components`);
  }
  if (dims.some((d) => typeof d !== "number" || !Number.isInteger(d) || d <= 0)) {
    throw new ProtocolError("component dims must be positive integers");
  }
  const active = msg.active;
  if (typeof active !== "number" || active < 0 || active >= dims.length) {
    throw new ProtocolError(`active component ${active} out of range`);
  }
  return msg as unknown as InitMessage;
}

export function parseServerText(text: string): ServerText {
  let msg: unknown;
  try {
    msg = JSON.parse(text);
  } catch {
    throw new ProtocolError("service sent text that is not valid JSON");
  }
  if (typeof msg !== "object" || msg === null || Array.isArray(msg)) {
    throw new ProtocolError("service sent a non-object message");
  }
  const record = msg as Record<string, unknown>;
  switch (record.type) {
    case "init":
      return parseInit(record);
    case "pong":
      if (typeof record.t !== "number") throw new ProtocolError("pong without a 't' field");
      return { type: "pong", t: record.t };
    case "error":
      return { type: "error", message: String(record.message ?? "unspecified service error") };
    default:
      throw new ProtocolError(`unknown server message type ${JSON.stringify(record.type)}`);
  }
}

/**
 * Persistent decode targets for binary frames. `positions` doubles as the
 * render buffer: the viewer wraps the same Float32Array in its geometry, so
 * decoding a frame writes vertex data straight into what gets drawn.
 */
export interface FrameBuffers {
  reduced: Float32Array;
  positions: Float32Array;
  /** How many leading entries of `reduced` the last frame filled. */
  reducedLength: number;
  frameId: bigint;
  active: number;
}

export function allocFrameBuffers(init: InitMessage): FrameBuffers {
  const maxDim = init.dims.reduce((a, b) => Math.max(a, b), 1);
  return {
    reduced: new Float32Array(maxDim),
    positions: new Float32Array(3 * init.surface_vertices.length),
    reducedLength: 0,
    frameId: 0n,
    active: init.active
  };
}

// The f32 payload starts after a 10 byte header, so it is never 4-byte
// aligned and cannot be viewed as a Float32Array directly. On little-endian
// platforms (every browser target that matters) a raw byte copy into the
// preallocated targets is correct and is a single memmove; the DataView walk
// below only exists for big-endian hosts.
const HOST_IS_LITTLE_ENDIAN = new Uint8Array(new Uint16Array([1]).buffer)[0] === 1;

/**
 * Decode one binary frame into `out` without allocating. The frame length is
 * checked against the dims table, so a truncated or oversized payload is
 * rejected instead of silently misreading vertex data.
 */
export function decodeFrame(data: ArrayBuffer, out: FrameBuffers, dims: number[]): void {
  if (data.byteLength < FRAME_HEADER_BYTES) {
    throw new ProtocolError(`frame of ${data.byteLength} bytes is shorter than its header`);
  }
  const view = new DataView(data);
  const frameId = view.getBigUint64(0, true);
  const active = view.getUint16(8, true);
  if (active >= dims.length) {
    throw new ProtocolError(`frame names component ${active}, scene has ${dims.length}`);
  }
  const m = dims[active];
  const expected = FRAME_HEADER_BYTES + 4 * (m + out.positions.length);
  if (data.byteLength !== expected) {
    throw new ProtocolError(`frame is ${data.byteLength} bytes, expected ${expected}`);
  }
  const splitAt = FRAME_HEADER_BYTES + 4 * m;
  if (HOST_IS_LITTLE_ENDIAN) {
    const bytes = new Uint8Array(data);
    new Uint8Array(out.reduced.buffer, out.reduced.byteOffset, 4 * m)
      .set(bytes.subarray(FRAME_HEADER_BYTES, splitAt));
    new Uint8Array(out.positions.buffer, out.positions.byteOffset, 4 * out.positions.length)
      .set(bytes.subarray(splitAt));
  } else {
    for (let i = 0; i < m; i++) {
      out.reduced[i] = view.getFloat32(FRAME_HEADER_BYTES + 4 * i, true);
    }
    for (let i = 0; i < out.positions.length; i++) {
      out.positions[i] = view.getFloat32(splitAt + 4 * i, true);
    }
  }
  out.reducedLength = m;
  out.frameId = frameId;
  out.active = active;
}
