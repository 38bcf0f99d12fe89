/** Debounced, sequenced fetching: at most one request per quiet window, and
 * responses that were superseded by a newer call are dropped. */
export class DebouncedFetcher<T> {
  private timer: ReturnType<typeof setTimeout> | undefined;
  private latest = 0;

  constructor(
    private delayMs: number,
    private run: (arg: string) => Promise<T>,
    private apply: (arg: string, result: T) => void,
    private onError: (arg: string, err: unknown) => void = () => {},
  ) {}

  /** Schedule a fetch; earlier pending schedules are cancelled. */
  request(arg: string): void {
    if (this.timer !== undefined) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = undefined;
      this.fire(arg);
    }, this.delayMs);
  }

  /** Fetch immediately, still participating in stale-response discard. */
  fire(arg: string): void {
    const ticket = ++this.latest;
    this.run(arg).then(
      (result) => {
        if (ticket === this.latest) this.apply(arg, result);
      },
      (err) => {
        if (ticket === this.latest) this.onError(arg, err);
      },
    );
  }

  cancel(): void {
    if (this.timer !== undefined) clearTimeout(this.timer);
    this.timer = undefined;
    this.latest++;
  }
}
