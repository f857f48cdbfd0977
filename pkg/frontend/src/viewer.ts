/**
 * three.js rendering of the simulated surface. The position attribute wraps
 * the same Float32Array the frame decoder writes into, so presenting a new
 * frame is a flag flip plus GPU upload, with normals refreshed every couple
 * of frames to keep per-frame cost bounded.
 */

import * as THREE from "three";
import { OrbitControls } from "three/addons/controls/OrbitControls.js";
import { InitMessage } from "./protocol";

const NORMAL_REFRESH_EVERY = 2;

export class SurfaceViewer {
  readonly camera: THREE.PerspectiveCamera;
  readonly controls: OrbitControls;
  readonly canvas: HTMLCanvasElement;

  private readonly renderer: THREE.WebGLRenderer;
  private readonly scene = new THREE.Scene();
  private readonly marker: THREE.Mesh;
  private mesh: THREE.Mesh | null = null;
  private positionAttr: THREE.BufferAttribute | null = null;
  private framesSinceNormals = 0;
  private rafHandle = 0;
  private lastTick = 0;

  constructor(
    private readonly container: HTMLElement,
    private readonly onRenderTick?: (dtMs: number) => void
  ) {
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setPixelRatio(Math.min(window.devicePixelRatio, 2));
    this.renderer.setClearColor(0x10141c);
    container.appendChild(this.renderer.domElement);
    this.canvas = this.renderer.domElement;

    this.camera = new THREE.PerspectiveCamera(45, 1, 0.01, 100);
    this.camera.position.set(2, 1.5, 2);

    this.controls = new OrbitControls(this.camera, this.canvas);
    this.controls.enableDamping = true;
    this.controls.dampingFactor = 0.12;

    this.scene.add(new THREE.HemisphereLight(0xffffff, 0x333a4d, 0.9));
    const key = new THREE.DirectionalLight(0xffffff, 1.1);
    key.position.set(3, 4, 2);
    this.scene.add(key);

    this.marker = new THREE.Mesh(
      new THREE.SphereGeometry(1, 16, 12),
      new THREE.MeshBasicMaterial({ color: 0xffb347, depthTest: false })
    );
    this.marker.visible = false;
    this.marker.renderOrder = 1;
    this.scene.add(this.marker);

    this.resize();
    window.addEventListener("resize", this.resize);
  }

  /** Build (or rebuild, after a reconnect) the surface mesh. */
  setTopology(init: InitMessage, positions: Float32Array): void {
    this.clearMesh();
    positions.set(init.rest_positions);

    const geometry = new THREE.BufferGeometry();
    const attr = new THREE.BufferAttribute(positions, 3);
    attr.setUsage(THREE.DynamicDrawUsage);
    geometry.setAttribute("position", attr);
    const index = new Uint32Array(init.triangles.length * 3);
    for (let i = 0; i < init.triangles.length; i++) {
      index[3 * i] = init.triangles[i][0];
      index[3 * i + 1] = init.triangles[i][1];
      index[3 * i + 2] = init.triangles[i][2];
    }
    geometry.setIndex(new THREE.BufferAttribute(index, 1));
    geometry.computeVertexNormals();

    const material = new THREE.MeshStandardMaterial({
      color: 0x7aa2cc,
      flatShading: true,
      side: THREE.DoubleSide,
      roughness: 0.75
    });
    this.mesh = new THREE.Mesh(geometry, material);
    this.positionAttr = attr;
    this.scene.add(this.mesh);
    this.fitCamera(geometry);
  }

  /** Present the positions the decoder just wrote. */
  commitFrame(): void {
    if (!this.positionAttr || !this.mesh) return;
    this.positionAttr.needsUpdate = true;
    if (++this.framesSinceNormals >= NORMAL_REFRESH_EVERY) {
      this.framesSinceNormals = 0;
      this.mesh.geometry.computeVertexNormals();
    }
  }

  setMarker(position: THREE.Vector3 | null): void {
    if (position === null) {
      this.marker.visible = false;
      return;
    }
    this.marker.position.copy(position);
    this.marker.visible = true;
  }

  start(): void {
    if (this.rafHandle) return;
    this.lastTick = performance.now();
    const loop = () => {
      this.rafHandle = requestAnimationFrame(loop);
      const t = performance.now();
      this.onRenderTick?.(t - this.lastTick);
      this.lastTick = t;
      this.controls.update();
      this.renderer.render(this.scene, this.camera);
    };
    this.rafHandle = requestAnimationFrame(loop);
  }

  dispose(): void {
    if (this.rafHandle) cancelAnimationFrame(this.rafHandle);
    this.rafHandle = 0;
    window.removeEventListener("resize", this.resize);
    this.clearMesh();
    this.controls.dispose();
    this.renderer.dispose();
    this.renderer.domElement.remove();
  }

  private clearMesh(): void {
    if (!this.mesh) return;
    this.scene.remove(this.mesh);
    this.mesh.geometry.dispose();
    (this.mesh.material as THREE.Material).dispose();
    this.mesh = null;
    this.positionAttr = null;
  }

  private fitCamera(geometry: THREE.BufferGeometry): void {
    geometry.computeBoundingSphere();
    const sphere = geometry.boundingSphere;
    if (!sphere) return;
    const distance = sphere.radius / Math.tan((this.camera.fov * Math.PI) / 360);
    this.controls.target.copy(sphere.center);
    this.camera.position
      .copy(sphere.center)
      .add(new THREE.Vector3(0.8, 0.55, 1).normalize().multiplyScalar(1.4 * distance));
    this.camera.near = sphere.radius / 100;
    this.camera.far = sphere.radius * 100;
    this.camera.updateProjectionMatrix();
    this.marker.scale.setScalar(sphere.radius * 0.02);
    this.controls.update();
  }

  private resize = (): void => {
    const w = this.container.clientWidth || 1;
    const h = this.container.clientHeight || 1;
    this.renderer.setSize(w, h);
    this.camera.aspect = w / h;
    this.camera.updateProjectionMatrix();
  };
}
