"""Real-time session host.

Owns the fixed-rate simulation loop, accepts interactive handle events over
a WebSocket, selects the mixture component per force observation, and
streams binary frames to connected viewers. All simulation state mutation
happens on the loop thread; connection handlers only enqueue events, and
frame delivery to congested clients is dropped so the loop never blocks.
"""

from __future__ import annotations

import json
import queue
import struct
import threading
import time
import traceback
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import sim
from .config import Scene
from .errors import InputError
from .mixture import ForceObservation, SubspaceSelector

PROTOCOL_VERSION = 1
INPUT_QUEUE_LIMIT = 1024
CLIENT_QUEUE_LIMIT = 8      # outgoing frames buffered per client before dropping


@dataclass
class SessionState:
    """Simulation-side session bookkeeping (no networking)."""

    active: int
    state: sim.ReducedState
    frame_id: int = 0
    handles: dict = field(default_factory=dict)   # vertex -> target displacement (3,)

    def advance(self, new_state: sim.ReducedState):
        self.state = new_state
        self.frame_id += 1


class _Client:
    """Writer-side view of one connection: a bounded frame queue drained by
    a dedicated sender thread, so slow readers cost dropped frames, not lag."""

    def __init__(self, conn):
        self.conn = conn
        self.frames = queue.Queue(maxsize=CLIENT_QUEUE_LIMIT)
        self.dropped = 0
        self.alive = True
        self.thread = threading.Thread(target=self._drain, daemon=True)
        self.thread.start()

    def _drain(self):
        while True:
            payload = self.frames.get()
            if payload is None:
                return
            try:
                self.conn.send(payload)
            except Exception:
                self.alive = False
                return

    def offer(self, payload: bytes):
        if not self.alive:
            return
        try:
            self.frames.put_nowait(payload)
        except queue.Full:
            self.dropped += 1

    def close(self):
        self.alive = False
        try:
            self.frames.put_nowait(None)
        except queue.Full:
            pass


class SimulationService:
    """Fixed-rate reduced simulation behind a WebSocket endpoint.

    Protocol (version 1). Control messages are JSON text; frames are binary:
    little-endian u64 frame id, u16 active component, m f32 reduced
    coordinates, then 3 per surface vertex f32 world positions.
    """

    def __init__(self, scene: Scene, subspaces, host=None, port=None):
        if len(subspaces) != scene.mixture.num_components:
            raise InputError("need one subspace per mixture component")
        cfg = scene.config
        self.scene = scene
        self.subspaces = list(subspaces)
        self.host = cfg.service.host if host is None else host
        self.port = cfg.service.port if port is None else port
        self.frame_period = 1.0 / cfg.service.frame_rate
        self.handle_strength = cfg.service.handle_strength
        self.selector = SubspaceSelector(
            scene.mixture.with_subspaces(self.subspaces),
            margin=cfg.hysteresis.margin, patience=cfg.hysteresis.patience,
            enabled=cfg.hysteresis.enabled)
        self.reduced = [sim.reduce_operators(scene.ops, s, damping=cfg.simulation.damping)
                        for s in self.subspaces]
        g = np.asarray(cfg.simulation.gravity)
        self.gravity = ((scene.ops.mass.reshape(-1, 3) * g[None, :]).ravel()
                        if g.any() else None)

        surf = scene.mesh.surface
        self.surface_vertices = np.unique(surf)
        remap = np.full(scene.mesh.num_vertices, -1, dtype=np.int64)
        remap[self.surface_vertices] = np.arange(self.surface_vertices.size)
        self.surface_triangles = remap[surf]
        self.rest = scene.mesh.vertices

        self.session = SessionState(active=self.selector.current,
                                    state=sim.rest_state(self.selector.subspace))
        self.inputs = deque(maxlen=INPUT_QUEUE_LIMIT)    # drop-oldest beyond limit
        # protocol-order view of assigned handles, updated as messages arrive;
        # the authoritative dict lives in the session and mutates on the loop
        self._assigned = set()
        self._clients = []
        self._clients_lock = threading.Lock()
        self._stop = threading.Event()
        self._server = None
        self._threads = []
        self.last_frame = None
        self.last_error = None
        self.step_intervals = deque(maxlen=600)          # loop-cadence diagnostics

    # -- lifecycle -----------------------------------------------------------

    def start(self):
        """Bind the socket and launch the loop + server threads."""
        from websockets.sync.server import serve
        self._server = serve(self._handle_connection, self.host, self.port)
        self.port = self._server.socket.getsockname()[1]
        t_server = threading.Thread(target=self._server.serve_forever, daemon=True)
        t_loop = threading.Thread(target=self._run_loop, daemon=True)
        self._threads = [t_server, t_loop]
        for t in self._threads:
            t.start()
        return self

    def stop(self):
        self._stop.set()
        if self._server is not None:
            self._server.shutdown()
        with self._clients_lock:
            for c in self._clients:
                c.close()
            self._clients.clear()
        for t in self._threads:
            t.join(timeout=2.0)

    def run_forever(self):
        self.start()
        try:
            while not self._stop.is_set():
                time.sleep(0.2)
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    # -- networking ----------------------------------------------------------

    def _init_message(self) -> str:
        return json.dumps({
            "type": "init",
            "version": PROTOCOL_VERSION,
            "surface_vertices": self.surface_vertices.tolist(),
            "triangles": self.surface_triangles.tolist(),
            "rest_positions": self.rest[self.surface_vertices].ravel().tolist(),
            "labels": [p.label for p in self.scene.priors],
            "dims": [s.dim for s in self.subspaces],
            "active": self.session.active,
            "frame_rate": 1.0 / self.frame_period,
            "handle_strength": self.handle_strength,
        })

    @staticmethod
    def _error_message(text: str) -> str:
        return json.dumps({"type": "error", "message": text})

    def _handle_connection(self, conn):
        client = _Client(conn)
        try:
            conn.send(self._init_message())
            with self._clients_lock:
                self._clients.append(client)
            for raw in conn:
                reply = self._handle_message(raw)
                if reply is not None:
                    try:
                        conn.send(reply)
                    except Exception:
                        break
        except Exception:
            pass
        finally:
            client.close()
            with self._clients_lock:
                if client in self._clients:
                    self._clients.remove(client)

    def _handle_message(self, raw):
        """Parse one client message; enqueue valid events, report bad ones."""
        if isinstance(raw, bytes):
            return self._error_message("binary messages are not part of the protocol")
        try:
            msg = json.loads(raw)
        except json.JSONDecodeError:
            return self._error_message("message is not valid JSON")
        if not isinstance(msg, dict) or "type" not in msg:
            return self._error_message("message needs a 'type' field")
        kind = msg["type"]
        if kind == "ping":
            return json.dumps({"type": "pong", "t": msg.get("t")})
        if kind not in ("assign", "move", "release"):
            return self._error_message(f"unknown message type {kind!r}")
        try:
            vertex = int(msg["vertex"])
        except (KeyError, TypeError, ValueError):
            return self._error_message(f"{kind} needs an integer 'vertex'")
        if not (0 <= vertex < self.scene.mesh.num_vertices):
            return self._error_message(f"vertex {vertex} out of range")
        target = None
        if kind in ("assign", "move"):
            try:
                target = np.asarray(msg["target"], dtype=float)
            except (KeyError, TypeError, ValueError):
                return self._error_message(f"{kind} needs a 'target' position")
            if target.shape != (3,) or not np.isfinite(target).all():
                return self._error_message("target must be a finite 3-vector")
        if kind in ("move", "release") and vertex not in self._assigned:
            return self._error_message(f"{kind} of unassigned handle {vertex}")
        if kind == "assign":
            self._assigned.add(vertex)
        elif kind == "release":
            self._assigned.discard(vertex)
        self.inputs.append((kind, vertex, target))
        return None

    # -- simulation loop -----------------------------------------------------

    def _drain_inputs(self):
        handles = self.session.handles
        while self.inputs:
            kind, vertex, target = self.inputs.popleft()
            if kind == "release":
                handles.pop(vertex, None)
            else:
                # targets arrive in world space; store as displacement targets
                handles[vertex] = target - self.rest[vertex]

    def _handle_force(self, u: np.ndarray):
        """Spring pull toward each handle target, also the force observation."""
        ops = self.scene.ops
        f = np.zeros(ops.num_coords)
        for v, disp_target in self.session.handles.items():
            f[3 * v:3 * v + 3] = (self.handle_strength * ops.scalar_mass[v]
                                  * (disp_target - u[3 * v:3 * v + 3]))
        return f

    def _tick(self):
        self._drain_inputs()
        sess = self.session
        u = sess.state.subspace.reconstruct(sess.state.z)
        f = self._handle_force(u)
        if self.gravity is not None:
            f = f + self.gravity
        if sess.handles and self.selector.mix.num_components > 1:
            support = np.asarray(sorted(sess.handles), dtype=np.int64)
            active = self.selector.observe(ForceObservation.from_force(f, support))
            if active != sess.active:
                sess.state = sim.transfer_state(sess.state, self.subspaces[active])
                sess.active = active
        load = sim.ExternalLoad.from_vector(f)
        new_state = sim.dynamic_step(self.reduced[sess.active], self.subspaces[sess.active],
                                     sess.state, load, h=self.frame_period)
        sess.advance(new_state)
        self.last_frame = self._frame_payload()
        self._broadcast(self.last_frame)

    def _frame_payload(self) -> bytes:
        sess = self.session
        u = sess.state.subspace.reconstruct(sess.state.z).reshape(-1, 3)
        positions = (self.rest + u)[self.surface_vertices].astype("<f4")
        header = struct.pack("<QH", sess.frame_id, sess.active)
        return header + sess.state.z.astype("<f4").tobytes() + positions.tobytes()

    def _broadcast(self, payload: bytes):
        with self._clients_lock:
            clients = list(self._clients)
        for c in clients:
            c.offer(payload)

    def _run_loop(self):
        period = self.frame_period
        next_tick = time.monotonic() + period
        last = None
        while not self._stop.is_set():
            wait = next_tick - time.monotonic()
            if wait > 0.002:
                # timed waits wake late on a loaded host; stop short and spin
                self._stop.wait(wait - 0.002)
                continue
            while time.monotonic() < next_tick:
                if self._stop.is_set():
                    return
            start = time.monotonic()
            try:
                self._tick()
            except Exception as exc:
                # a loop crash would silently freeze every client; report and halt
                self.last_error = exc
                traceback.print_exc()
                self._stop.set()
                return
            if last is not None:
                self.step_intervals.append(start - last)
            last = start
            if time.monotonic() - next_tick > 4 * period:
                # fell far behind: skip the missed frames instead of spiraling
                next_tick = time.monotonic() + period
            else:
                next_tick += period
