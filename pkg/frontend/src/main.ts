/**
 * Entry point: wires the service connection, the renderer, the overlay and
 * the pointer interaction together. All simulation state lives on the
 * server; this side only decodes frames and emits handle messages.
 */

import * as THREE from "three";
import { ServiceConnection } from "./connection";
import { HandleDrag } from "./drag";
import { OverlayPanel } from "./overlay";
import { dragTarget, pickVertex } from "./picking";
import { allocFrameBuffers, decodeFrame, FrameBuffers, InitMessage } from "./protocol";
import { SurfaceViewer } from "./viewer";

const PING_INTERVAL_MS = 2000;

const params = new URLSearchParams(window.location.search);
const serviceUrl = params.get("url") ?? "ws://127.0.0.1:8765";
const sceneName = params.get("scene");

let init: InitMessage | null = null;
let buffers: FrameBuffers | null = null;
let fpsEma = 0;

const overlay = new OverlayPanel(() => connection.retryNow());
overlay.setSceneName(sceneName);

const viewer = new SurfaceViewer(document.getElementById("viewer")!, (dtMs) => {
  if (dtMs > 0) fpsEma = fpsEma * 0.9 + (1000 / dtMs) * 0.1;
  overlay.setFps(fpsEma);
});

const connection = new ServiceConnection(serviceUrl, {
  onInit(msg) {
    init = msg;
    buffers = allocFrameBuffers(msg);
    viewer.setTopology(msg, buffers.positions);
    overlay.setLabels(msg.labels);
    overlay.setActive(msg.active);
  },
  onFrame(data) {
    if (!init || !buffers) return;    // frame raced ahead of init, drop it
    decodeFrame(data, buffers, init.dims);
    viewer.commitFrame();
    overlay.setActive(buffers.active);
    overlay.setReduced(buffers.reduced, buffers.reducedLength);
  },
  onServerError(message) {
    console.warn("service:", message);
  },
  onPong(rttMs) {
    overlay.setLatency(rttMs);
  },
  onStatus(status) {
    switch (status) {
      case "open":
        overlay.hideBanner();
        break;
      case "connecting":
        overlay.showBanner(`connecting to ${serviceUrl}`, false);
        break;
      case "reconnecting":
        overlay.showBanner("connection lost, reconnecting", true);
        break;
      case "failed":
        overlay.showBanner(`cannot reach ${serviceUrl}, retrying`, true);
        break;
      case "version-mismatch":
        overlay.showBlocker(
          "The service speaks a different protocol version than this client. "
          + "Update whichever side is older and reload.");
        break;
      case "closed":
        break;
    }
  }
});

const drag = new HandleDrag((msg) => connection.send(msg));
const grabPoint = new THREE.Vector3();
const dragPoint = new THREE.Vector3();

function pointerPx(ev: PointerEvent): { x: number; y: number; w: number; h: number } {
  const rect = viewer.canvas.getBoundingClientRect();
  return { x: ev.clientX - rect.left, y: ev.clientY - rect.top, w: rect.width, h: rect.height };
}

viewer.canvas.addEventListener("pointerdown", (ev) => {
  if (ev.button !== 0 || !init || !buffers) return;
  const p = pointerPx(ev);
  const hit = pickVertex(buffers.positions, viewer.camera, p.w, p.h, p.x, p.y);
  if (!hit) return;                   // background press, leave it to the camera
  grabPoint.copy(hit.point);
  drag.begin(init.surface_vertices[hit.index], [grabPoint.x, grabPoint.y, grabPoint.z]);
  viewer.controls.enabled = false;    // a grabbed handle must not orbit the camera
  viewer.canvas.setPointerCapture(ev.pointerId);
  viewer.setMarker(grabPoint);
});

viewer.canvas.addEventListener("pointermove", (ev) => {
  if (drag.active === null) return;
  const p = pointerPx(ev);
  dragTarget(viewer.camera, p.w, p.h, p.x, p.y, grabPoint, dragPoint);
  drag.move([dragPoint.x, dragPoint.y, dragPoint.z]);
  viewer.setMarker(dragPoint);
});

function finishDrag(ev: PointerEvent): void {
  if (drag.active === null) return;
  drag.end();
  viewer.controls.enabled = true;
  viewer.setMarker(null);
  if (viewer.canvas.hasPointerCapture(ev.pointerId)) {
    viewer.canvas.releasePointerCapture(ev.pointerId);
  }
}
viewer.canvas.addEventListener("pointerup", finishDrag);
viewer.canvas.addEventListener("pointercancel", finishDrag);

setInterval(() => connection.sendPing(), PING_INTERVAL_MS);
connection.connect();
viewer.start();
