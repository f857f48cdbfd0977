import { FRAME_HEADER_BYTES, InitMessage } from "../src/protocol";

/**
 * Encode a binary frame with explicit DataView writes. This mirrors the
 * service's layout independently of the decoder's byte-copy path, so the
 * round-trip tests check the two against each other.
 */
export function encodeFrame(
  frameId: bigint,
  active: number,
  reduced: ArrayLike<number>,
  positions: ArrayLike<number>
): ArrayBuffer {
  const buf = new ArrayBuffer(FRAME_HEADER_BYTES + 4 * (reduced.length + positions.length));
  const view = new DataView(buf);
  view.setBigUint64(0, frameId, true);
  view.setUint16(8, active, true);
  let off = FRAME_HEADER_BYTES;
  for (let i = 0; i < reduced.length; i++, off += 4) view.setFloat32(off, reduced[i], true);
  for (let i = 0; i < positions.length; i++, off += 4) view.setFloat32(off, positions[i], true);
  return buf;
}

/** A small two-component init message, overridable per test. */
export function makeInit(overrides: Partial<Record<keyof InitMessage, unknown>> = {}): Record<string, unknown> {
  return {
    type: "init",
    version: 1,
    surface_vertices: [0, 2, 5, 7],
    triangles: [[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]],
    rest_positions: [0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1],
    labels: ["tip", "mid"],
    dims: [4, 6],
    active: 0,
    ...overrides
  };
}

/** Deterministic PRNG (mulberry32) for reproducible test data. */
export function mulberry32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x6d2b79f5) >>> 0;
    let z = state;
    z = Math.imul(z ^ (z >>> 15), z | 1);
    z ^= z + Math.imul(z ^ (z >>> 7), z | 61);
    return ((z ^ (z >>> 14)) >>> 0) / 4294967296;
  };
}

export function randomFloats(count: number, rand: () => number, scale = 1): Float32Array {
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) out[i] = (rand() * 2 - 1) * scale;
  return out;
}
