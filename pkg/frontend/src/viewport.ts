/**
 * Three.js viewport that displays the service's exported GLB directly.
 * No client-side mesh editing; commit/undo simply reload the export.
 */

export class Viewport {
  private three: typeof import("three") | null = null;
  private scene: import("three").Scene | null = null;
  private renderer: import("three").WebGLRenderer | null = null;
  private camera: import("three").PerspectiveCamera | null = null;
  private model: import("three").Object3D | null = null;
  private ghost: import("three").Object3D | null = null;

  constructor(private readonly container: HTMLElement) {}

  async init(): Promise<void> {
    const THREE = await import("three");
    this.three = THREE;
    const width = this.container.clientWidth || 512;
    const height = this.container.clientHeight || 384;
    this.scene = new THREE.Scene();
    this.scene.background = new THREE.Color(0xf2f2f0);
    this.camera = new THREE.PerspectiveCamera(45, width / height, 0.01, 1000);
    this.camera.position.set(4, 3, 10);
    this.camera.lookAt(0, 1.5, 0);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.7));
    const sun = new THREE.DirectionalLight(0xffffff, 1.2);
    sun.position.set(5, 10, 7);
    this.scene.add(sun);
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setSize(width, height);
    this.container.appendChild(this.renderer.domElement);
    const animate = () => {
      requestAnimationFrame(animate);
      if (this.model) {
        this.model.rotation.y += 0.002;
      }
      this.renderer!.render(this.scene!, this.camera!);
    };
    animate();
  }

  async showGlb(glb: Uint8Array): Promise<void> {
    if (!this.scene || !this.three) {
      return;
    }
    const { GLTFLoader } = await import("three/examples/jsm/loaders/GLTFLoader.js");
    const loader = new GLTFLoader();
    const buffer = new ArrayBuffer(glb.byteLength);
    new Uint8Array(buffer).set(glb);
    const gltf = await loader.parseAsync(buffer, "");
    if (this.model) {
      this.scene.remove(this.model);
    }
    this.clearGhost();
    this.model = gltf.scene;
    this.centerOnModel(gltf.scene);
    this.scene.add(gltf.scene);
  }

  /** Wireframe box showing the previewed placement (from service data). */
  showGhostBox(center: number[], halfExtents: number[], axesRowMajor: number[]): void {
    if (!this.scene || !this.three) {
      return;
    }
    const THREE = this.three;
    this.clearGhost();
    const geometry = new THREE.BoxGeometry(
      2 * halfExtents[0], 2 * halfExtents[1], 2 * halfExtents[2]);
    const material = new THREE.MeshBasicMaterial({
      color: 0x2277ff, wireframe: true, transparent: true, opacity: 0.8,
    });
    const box = new THREE.Mesh(geometry, material);
    const m = new THREE.Matrix4();
    // axes arrive row-major; three wants column-major basis vectors
    m.set(
      axesRowMajor[0], axesRowMajor[1], axesRowMajor[2], center[0],
      axesRowMajor[3], axesRowMajor[4], axesRowMajor[5], center[1],
      axesRowMajor[6], axesRowMajor[7], axesRowMajor[8], center[2],
      0, 0, 0, 1,
    );
    box.applyMatrix4(m);
    this.ghost = box;
    this.scene.add(box);
  }

  clearGhost(): void {
    if (this.ghost && this.scene) {
      this.scene.remove(this.ghost);
      this.ghost = null;
    }
  }

  private centerOnModel(model: import("three").Object3D): void {
    if (!this.three || !this.camera) {
      return;
    }
    const THREE = this.three;
    const bounds = new THREE.Box3().setFromObject(model);
    const center = bounds.getCenter(new THREE.Vector3());
    const size = bounds.getSize(new THREE.Vector3()).length() || 1;
    this.camera.position.copy(center.clone().add(
      new THREE.Vector3(0.6, 0.4, 1.2).multiplyScalar(size)));
    this.camera.lookAt(center);
  }
}
