// Client-side state: the latest server snapshot plus local UI inputs.
// Physics never originates here; every rendered quantity comes from
// server messages, kept latest-wins.

import type {
  JointSummary,
  ModelMessage,
  ScenePayload,
  ServerMessage,
  StateMessage,
} from './types';

export type ConnectionStatus = 'connecting' | 'open' | 'closed';

export interface Notice {
  kind: 'info' | 'error';
  text: string;
}

export class UiStore {
  connection: ConnectionStatus = 'closed';
  model: ModelMessage | null = null;
  scene: ScenePayload | null = null;
  state: StateMessage | null = null;
  latencyMs: number | null = null;
  sliders: number[] = [];
  selectedGesture = '';
  notices: Notice[] = [];

  private listeners = new Set<() => void>();

  onChange(fn: () => void): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  get recording(): boolean {
    return this.state?.recording ?? false;
  }

  get replaying(): boolean {
    return this.state?.replaying ?? false;
  }

  gloveJoints(): JointSummary[] {
    if (!this.model) return [];
    return this.model.glove.fingers.flatMap((f) => f.joints);
  }

  setConnection(status: ConnectionStatus): void {
    this.connection = status;
    this.emit();
  }

  notify(kind: Notice['kind'], text: string): void {
    this.notices.push({ kind, text });
    if (this.notices.length > 20) this.notices.shift();
    this.emit();
  }

  reportLatency(ms: number): void {
    this.latencyMs = ms;
    this.emit();
  }

  /** Clamp a slider to the joint limits announced by the server. */
  setSlider(index: number, degrees: number): number {
    const joints = this.gloveJoints();
    const joint = joints[index];
    if (!joint) throw new Error(`no glove joint at index ${index}`);
    const clamped = Math.min(
      joint.limit_hi_deg,
      Math.max(joint.limit_lo_deg, degrees),
    );
    this.sliders[index] = clamped;
    this.emit();
    return clamped;
  }

  applyServer(msg: ServerMessage): void {
    switch (msg.type) {
      case 'model': {
        this.model = msg;
        this.sliders = this.gloveJoints().map((j) => j.home_deg);
        break;
      }
      case 'scene':
        this.scene = msg.object;
        break;
      case 'state':
        this.state = msg; // latest wins; render loop reads on its own clock
        break;
      case 'error':
        this.notify('error', msg.message);
        break;
      case 'ack':
        break;
    }
    this.emit();
  }
}
