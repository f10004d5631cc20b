// Latest-wins rate limiter for slider traffic: the newest value always
// gets through, but no more than maxPerSecond messages leave per second.

export interface ThrottleClock {
  now(): number; // milliseconds
  setTimer(fn: () => void, delayMs: number): unknown;
  clearTimer(handle: unknown): void;
}

const defaultClock: ThrottleClock = {
  now: () => Date.now(),
  setTimer: (fn, delay) => setTimeout(fn, delay),
  clearTimer: (h) => clearTimeout(h as ReturnType<typeof setTimeout>),
};

export class LatestWinsThrottle<T> {
  private readonly intervalMs: number;
  private lastSentAt = -Infinity;
  private pending: { value: T } | null = null;
  private timer: unknown = null;

  constructor(
    maxPerSecond: number,
    private readonly send: (value: T) => void,
    private readonly clock: ThrottleClock = defaultClock,
  ) {
    if (maxPerSecond <= 0) throw new Error('maxPerSecond must be positive');
    this.intervalMs = 1000 / maxPerSecond;
  }

  push(value: T): void {
    const now = this.clock.now();
    if (this.timer === null && now - this.lastSentAt >= this.intervalMs) {
      this.lastSentAt = now;
      this.send(value);
      return;
    }
    this.pending = { value };
    if (this.timer === null) {
      const wait = Math.max(0, this.lastSentAt + this.intervalMs - now);
      this.timer = this.clock.setTimer(() => this.flush(), wait);
    }
  }

  private flush(): void {
    this.timer = null;
    if (!this.pending) return;
    const { value } = this.pending;
    this.pending = null;
    this.lastSentAt = this.clock.now();
    this.send(value);
  }

  dispose(): void {
    if (this.timer !== null) {
      this.clock.clearTimer(this.timer);
      this.timer = null;
    }
    this.pending = null;
  }
}
