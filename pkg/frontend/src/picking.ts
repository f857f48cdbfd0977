/**
 * Screen-space vertex picking and drag-plane mapping. Pure math over the
 * camera matrices, shared by the browser wiring and the node tests.
 */

import * as THREE from "three";

export const PICK_RADIUS_PX = 12;

export interface PickHit {
  /** Surface-local vertex index. */
  index: number;
  distancePx: number;
  point: THREE.Vector3;
}

const scratch = new THREE.Vector3();

/**
 * Find the surface vertex nearest to a pointer position, or null when
 * nothing projects within the pick radius. Vertices outside the clip volume
 * are skipped so geometry behind the camera can never be grabbed. Among
 * near-equal screen distances the vertex closer to the camera wins, which
 * resolves front and back faces of thin parts the intuitive way.
 */
export function pickVertex(
  positions: Float32Array,
  camera: THREE.Camera,
  width: number,
  height: number,
  px: number,
  py: number,
  radiusPx: number = PICK_RADIUS_PX
): PickHit | null {
  let bestIndex = -1;
  let bestD = radiusPx;
  let bestDepth = Infinity;
  let bestX = 0, bestY = 0, bestZ = 0;
  const count = positions.length / 3;
  for (let i = 0; i < count; i++) {
    const x = positions[3 * i];
    const y = positions[3 * i + 1];
    const z = positions[3 * i + 2];
    scratch.set(x, y, z).project(camera);
    if (scratch.z < -1 || scratch.z > 1) continue;
    const sx = (scratch.x + 1) * 0.5 * width;
    const sy = (1 - scratch.y) * 0.5 * height;
    const d = Math.hypot(sx - px, sy - py);
    if (d < bestD - 1e-6 || (d <= bestD + 1e-6 && scratch.z < bestDepth)) {
      if (d > radiusPx) continue;
      bestIndex = i;
      bestD = d;
      bestDepth = scratch.z;
      bestX = x; bestY = y; bestZ = z;
    }
  }
  if (bestIndex < 0) return null;
  return {
    index: bestIndex,
    distancePx: bestD,
    point: new THREE.Vector3(bestX, bestY, bestZ)
  };
}

/**
 * Map a pointer position onto the camera-parallel plane through the grab
 * point. The dragged handle therefore stays under the cursor at the depth
 * where it was picked up.
 */
export function dragTarget(
  camera: THREE.Camera,
  width: number,
  height: number,
  px: number,
  py: number,
  grab: THREE.Vector3,
  out: THREE.Vector3 = new THREE.Vector3()
): THREE.Vector3 {
  const ndcX = (px / width) * 2 - 1;
  const ndcY = 1 - (py / height) * 2;
  const origin = new THREE.Vector3().setFromMatrixPosition(camera.matrixWorld);
  const direction = new THREE.Vector3(ndcX, ndcY, 0.5).unproject(camera).sub(origin).normalize();
  const normal = camera.getWorldDirection(new THREE.Vector3());
  const denom = normal.dot(direction);
  if (Math.abs(denom) < 1e-12) return out.copy(grab);
  const t = normal.dot(scratch.subVectors(grab, origin)) / denom;
  return out.copy(direction).multiplyScalar(t).add(origin);
}
