// WebSocket client: sequence numbering, ack round-trip latency, pose
// throttling, disconnect queueing, and automatic reconnection.

import { LatestWinsThrottle, ThrottleClock } from './throttle';
import { UiStore } from './store';
import type { ServerMessage } from './types';

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onerror: ((err: unknown) => void) | null;
  onmessage: ((event: { data: unknown }) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientOptions {
  socketFactory?: SocketFactory;
  clock?: ThrottleClock;
  maxPoseRate?: number; // messages per second
  reconnectDelayMs?: number;
  poseQueueMaxAgeMs?: number;
}

const browserSocketFactory: SocketFactory = (url) =>
  new WebSocket(url) as unknown as SocketLike;

export class GexClient {
  private socket: SocketLike | null = null;
  private seq = 0;
  private sentAt = new Map<number, number>();
  private throttle: LatestWinsThrottle<number[]>;
  private readonly clock: ThrottleClock;
  private readonly factory: SocketFactory;
  private readonly reconnectDelayMs: number;
  private readonly poseQueueMaxAgeMs: number;
  private queuedPose: { q: number[]; at: number } | null = null;
  private reconnectTimer: unknown = null;
  private closedByUser = false;
  sentCount = 0;

  constructor(
    readonly url: string,
    readonly store: UiStore,
    opts: ClientOptions = {},
  ) {
    this.factory = opts.socketFactory ?? browserSocketFactory;
    this.clock = opts.clock ?? {
      now: () => Date.now(),
      setTimer: (fn, ms) => setTimeout(fn, ms),
      clearTimer: (h) => clearTimeout(h as ReturnType<typeof setTimeout>),
    };
    this.reconnectDelayMs = opts.reconnectDelayMs ?? 500;
    this.poseQueueMaxAgeMs = opts.poseQueueMaxAgeMs ?? 1000;
    this.throttle = new LatestWinsThrottle(
      opts.maxPoseRate ?? 60,
      (q) => this.transmit({ type: 'set_glove_q', q }),
      this.clock,
    );
  }

  get connected(): boolean {
    return this.store.connection === 'open';
  }

  connect(): void {
    this.closedByUser = false;
    this.store.setConnection('connecting');
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.store.setConnection('open');
      const queued = this.queuedPose;
      this.queuedPose = null;
      if (queued) {
        if (this.clock.now() - queued.at <= this.poseQueueMaxAgeMs) {
          this.sendPose(queued.q);
        } else {
          this.store.notify('info', 'stale pose dropped after reconnect');
        }
      }
    };
    socket.onmessage = (event) => {
      let msg: ServerMessage;
      try {
        msg = JSON.parse(String(event.data)) as ServerMessage;
      } catch {
        this.store.notify('error', 'unparseable server message');
        return;
      }
      if (msg.type === 'ack' || msg.type === 'error') {
        const ref = (msg as { ack_seq: number | null }).ack_seq;
        if (ref !== null && this.sentAt.has(ref)) {
          this.store.reportLatency(this.clock.now() - this.sentAt.get(ref)!);
          this.sentAt.delete(ref);
        }
      }
      this.store.applyServer(msg);
    };
    socket.onclose = () => {
      this.store.setConnection('closed');
      this.socket = null;
      if (!this.closedByUser && this.reconnectTimer === null) {
        this.reconnectTimer = this.clock.setTimer(() => {
          this.reconnectTimer = null;
          this.connect();
        }, this.reconnectDelayMs);
      }
    };
    socket.onerror = () => {
      // onclose follows; status flips there.
    };
  }

  close(): void {
    this.closedByUser = true;
    if (this.reconnectTimer !== null) {
      this.clock.clearTimer(this.reconnectTimer);
      this.reconnectTimer = null;
    }
    this.throttle.dispose();
    this.socket?.close();
  }

  private transmit(payload: Record<string, unknown>): number {
    const seq = this.seq++;
    const message = { ...payload, seq };
    if (!this.socket || this.store.connection !== 'open') {
      throw new Error('not connected');
    }
    this.socket.send(JSON.stringify(message));
    this.sentAt.set(seq, this.clock.now());
    this.sentCount += 1;
    return seq;
  }

  /** Throttled pose updates; offline poses queue for up to a second. */
  sendPose(qDegrees: number[]): void {
    if (this.store.connection !== 'open') {
      this.queuedPose = { q: [...qDegrees], at: this.clock.now() };
      return;
    }
    this.throttle.push([...qDegrees]);
  }

  setRecording(on: boolean, path: string): void {
    if (on && this.store.replaying) {
      this.store.notify('error', 'cannot record while a replay is running');
      return;
    }
    this.transmit({ type: 'record', on, path });
  }

  startReplay(path: string): void {
    if (this.store.recording) {
      // Client-side guard: recording a replay of itself would interleave.
      this.store.notify('error', 'stop recording before replaying a gesture');
      return;
    }
    this.transmit({ type: 'replay', path });
  }

  setScene(object: Record<string, unknown> | null): void {
    this.transmit({ type: 'set_scene', object });
  }

  setParams(params: Record<string, unknown>): void {
    this.transmit({ type: 'set_params', ...params });
  }
}
