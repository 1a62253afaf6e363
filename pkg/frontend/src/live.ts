/** Debounced live-prediction scheduling with stale-response discarding.
 *
 * Edits trigger a refresh after a quiet interval; at most one request pair
 * is in flight, and responses for superseded edits are dropped by sequence
 * number so the readouts always reflect the latest inputs.
 */

export class SequenceGate {
  private seq = 0;

  /** A new edit supersedes everything launched before it. */
  advance(): number {
    this.seq += 1;
    return this.seq;
  }

  current(): number {
    return this.seq;
  }

  isCurrent(token: number): boolean {
    return token === this.seq;
  }
}

export type RunFn = (token: number) => Promise<void>;

export class LiveUpdater {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inflight = false;
  private pending = false;
  readonly gate = new SequenceGate();

  constructor(
    private readonly run: RunFn,
    private readonly delayMs = 300,
  ) {}

  /** Schedule a refresh after the quiet interval, superseding prior edits. */
  trigger(): void {
    this.gate.advance();
    if (this.timer !== null) {
      clearTimeout(this.timer);
    }
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.launch();
    }, this.delayMs);
  }

  /** Run immediately (explicit Predict button); still sequence-guarded. */
  async flush(): Promise<void> {
    this.gate.advance();
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    await this.launch();
  }

  private async launch(): Promise<void> {
    if (this.inflight) {
      this.pending = true;
      return;
    }
    this.inflight = true;
    const token = this.gate.current();
    try {
      await this.run(token);
    } finally {
      this.inflight = false;
      if (this.pending) {
        this.pending = false;
        void this.launch();
      }
    }
  }
}
