// Control panel DOM: per-joint sliders built from the server's model
// summary, gesture record/replay controls, and status readouts.

import { GexClient } from './client';
import { UiStore } from './store';

export class ControlPanel {
  private slidersBuilt = false;

  constructor(
    private readonly root: HTMLElement,
    private readonly store: UiStore,
    private readonly client: GexClient,
  ) {
    this.root.innerHTML = `
      <div class="status-row">
        <span id="conn" class="badge">closed</span>
        <span id="latency" class="badge"></span>
        <span id="session" class="badge"></span>
      </div>
      <div id="sliders"></div>
      <div class="gesture-row">
        <input id="gesture-path" type="text" placeholder="gesture path (server side)">
        <button id="replay">replay</button>
        <input id="record-path" type="text" placeholder="recording path">
        <button id="record">record</button>
      </div>
      <div id="torques"></div>
      <div id="notices"></div>
    `;
    this.wireButtons();
    store.onChange(() => this.refresh());
  }

  private wireButtons(): void {
    const replayBtn = this.root.querySelector<HTMLButtonElement>('#replay')!;
    const recordBtn = this.root.querySelector<HTMLButtonElement>('#record')!;
    replayBtn.addEventListener('click', () => {
      const path =
        this.root.querySelector<HTMLInputElement>('#gesture-path')!.value ||
        this.store.selectedGesture;
      if (path) this.client.startReplay(path);
    });
    recordBtn.addEventListener('click', () => {
      const path = this.root.querySelector<HTMLInputElement>('#record-path')!.value;
      this.client.setRecording(!this.store.recording, path);
    });
  }

  private buildSliders(): void {
    const host = this.root.querySelector<HTMLElement>('#sliders')!;
    host.innerHTML = '';
    this.store.gloveJoints().forEach((joint, i) => {
      const row = document.createElement('div');
      row.className = 'slider-row';
      const label = document.createElement('label');
      label.textContent = joint.name;
      const input = document.createElement('input');
      input.type = 'range';
      input.min = String(joint.limit_lo_deg);
      input.max = String(joint.limit_hi_deg);
      input.step = '0.1';
      input.value = String(joint.home_deg);
      const value = document.createElement('span');
      value.textContent = `${joint.home_deg.toFixed(1)}°`;
      input.addEventListener('input', () => {
        const clamped = this.store.setSlider(i, Number(input.value));
        value.textContent = `${clamped.toFixed(1)}°`;
        this.client.sendPose([...this.store.sliders]);
      });
      row.append(label, input, value);
      host.appendChild(row);
    });
    this.slidersBuilt = true;
  }

  private refresh(): void {
    if (this.store.model && !this.slidersBuilt) this.buildSliders();

    const conn = this.root.querySelector<HTMLElement>('#conn')!;
    conn.textContent = this.store.connection;
    conn.className = `badge ${this.store.connection}`;

    const latency = this.root.querySelector<HTMLElement>('#latency')!;
    latency.textContent =
      this.store.latencyMs === null ? '' : `rtt ${this.store.latencyMs.toFixed(0)} ms`;

    const session = this.root.querySelector<HTMLElement>('#session')!;
    session.textContent = this.store.replaying
      ? 'replaying'
      : this.store.recording
        ? 'recording'
        : '';

    // Sliders freeze during replay; the server owns the pose then.
    this.root
      .querySelectorAll<HTMLInputElement>('#sliders input')
      .forEach((el) => (el.disabled = this.store.replaying));

    const state = this.store.state;
    const torques = this.root.querySelector<HTMLElement>('#torques')!;
    if (state) {
      const engaged = Object.entries(state.modes)
        .filter(([, m]) => m === 'engaged')
        .map(([f]) => f);
      const peak = Math.max(...state.feedback_torques.map(Math.abs), 0);
      torques.textContent = engaged.length
        ? `engaged: ${engaged.join(', ')} | peak feedback ${peak.toFixed(3)} N·m`
        : '';
    }

    const notices = this.root.querySelector<HTMLElement>('#notices')!;
    notices.innerHTML = this.store.notices
      .slice(-4)
      .map((n) => `<div class="notice ${n.kind}">${n.text}</div>`)
      .join('');
  }
}
