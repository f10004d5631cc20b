// 3D view: both skeletons from server-provided joint positions, the cup
// cylinder, fingertip markers, and engaged-finger highlighting.
//
// No kinematics happen here: every vertex comes straight out of the
// state message's `skeletons`/`tips_*` fields, so the scene graph can
// be driven (and unit-tested) without a renderer.

import * as THREE from 'three';
import type { ScenePayload, StateMessage } from './types';

const COLORS = {
  glove: 0x4ea3ff,
  hand: 0xffa94e,
  engaged: 0xff3355,
  tip: 0xffffff,
  cup: 0x88cc88,
};

interface FingerVisual {
  line: THREE.Line;
  tip: THREE.Mesh;
  baseColor: number;
}

export class HandSceneView {
  readonly scene = new THREE.Scene();
  readonly camera: THREE.PerspectiveCamera;
  private renderer: THREE.WebGLRenderer | null = null;
  private fingers = new Map<string, FingerVisual>();
  private cup: THREE.Mesh | null = null;

  constructor(container?: HTMLElement) {
    this.camera = new THREE.PerspectiveCamera(45, 4 / 3, 0.01, 10);
    this.camera.position.set(0.25, -0.25, 0.18);
    this.camera.up.set(0, 0, 1);
    this.camera.lookAt(0.09, 0, -0.04);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.9));
    const sun = new THREE.DirectionalLight(0xffffff, 0.8);
    sun.position.set(1, -1, 2);
    this.scene.add(sun);
    this.scene.add(new THREE.AxesHelper(0.05));
    if (container && typeof document !== 'undefined') {
      this.renderer = new THREE.WebGLRenderer({ antialias: true });
      this.renderer.setSize(container.clientWidth, container.clientHeight);
      container.appendChild(this.renderer.domElement);
    }
  }

  setSceneObject(payload: ScenePayload | null): void {
    if (this.cup) {
      this.scene.remove(this.cup);
      this.cup = null;
    }
    if (!payload) return;
    const geometry = new THREE.CylinderGeometry(
      payload.radius,
      payload.radius,
      payload.height,
      32,
    );
    geometry.rotateX(Math.PI / 2); // cylinder axis is world z
    const material = new THREE.MeshStandardMaterial({
      color: COLORS.cup,
      transparent: true,
      opacity: 0.55,
    });
    this.cup = new THREE.Mesh(geometry, material);
    this.cup.position.set(...(payload.center as [number, number, number]));
    this.scene.add(this.cup);
  }

  private visual(key: string, baseColor: number): FingerVisual {
    let vis = this.fingers.get(key);
    if (!vis) {
      const geometry = new THREE.BufferGeometry();
      const material = new THREE.LineBasicMaterial({ color: baseColor });
      const line = new THREE.Line(geometry, material);
      const tip = new THREE.Mesh(
        new THREE.SphereGeometry(0.008, 12, 12),
        new THREE.MeshStandardMaterial({ color: COLORS.tip }),
      );
      this.scene.add(line);
      this.scene.add(tip);
      vis = { line, tip, baseColor };
      this.fingers.set(key, vis);
    }
    return vis;
  }

  updateFromState(state: StateMessage): void {
    for (const device of ['glove', 'hand'] as const) {
      const skeletons = state.skeletons[device];
      for (const [finger, points] of Object.entries(skeletons)) {
        const key = `${device}:${finger}`;
        const vis = this.visual(key, COLORS[device]);
        const flat = new Float32Array(points.flat());
        vis.line.geometry.setAttribute(
          'position',
          new THREE.BufferAttribute(flat, 3),
        );
        vis.line.geometry.attributes.position.needsUpdate = true;
        const tipXyz = points[points.length - 1];
        vis.tip.position.set(tipXyz[0], tipXyz[1], tipXyz[2]);
        const engaged = device === 'hand' && state.modes[finger] === 'engaged';
        const contact = device === 'hand' && state.contact_flags[finger];
        (vis.line.material as THREE.LineBasicMaterial).color.setHex(
          engaged ? COLORS.engaged : vis.baseColor,
        );
        (vis.tip.material as THREE.MeshStandardMaterial).color.setHex(
          contact ? COLORS.engaged : COLORS.tip,
        );
      }
    }
  }

  /** Rendered polyline of one finger, for assertions and debugging. */
  fingerPoints(device: 'glove' | 'hand', finger: string): number[][] {
    const vis = this.fingers.get(`${device}:${finger}`);
    if (!vis) return [];
    const attr = vis.line.geometry.getAttribute('position');
    const out: number[][] = [];
    for (let i = 0; i < attr.count; i++) {
      out.push([attr.getX(i), attr.getY(i), attr.getZ(i)]);
    }
    return out;
  }

  engagedFingers(): string[] {
    const out: string[] = [];
    for (const [key, vis] of this.fingers) {
      if (!key.startsWith('hand:')) continue;
      const color = (vis.line.material as THREE.LineBasicMaterial).color.getHex();
      if (color === COLORS.engaged) out.push(key.split(':')[1]);
    }
    return out.sort();
  }

  render(): void {
    this.renderer?.render(this.scene, this.camera);
  }
}
