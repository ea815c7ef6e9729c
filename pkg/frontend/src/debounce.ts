/** Trailing-edge rate limiter: at most one call per interval, always
 *  ending with the latest arguments. Caps render requests during drags. */

export interface RateLimited<A extends unknown[]> {
  (...args: A): void;
  cancel(): void;
  flush(): void;
}

export function rateLimit<A extends unknown[]>(
  fn: (...args: A) => void,
  intervalMs: number,
  now: () => number = () => Date.now(),
  schedule: (cb: () => void, ms: number) => ReturnType<typeof setTimeout> =
    (cb, ms) => setTimeout(cb, ms),
  cancelTimer: (t: ReturnType<typeof setTimeout>) => void = clearTimeout,
): RateLimited<A> {
  let lastCall = -Infinity;
  let pending: A | null = null;
  let timer: ReturnType<typeof setTimeout> | null = null;

  const fire = (args: A) => {
    lastCall = now();
    fn(...args);
  };

  const onTimer = () => {
    timer = null;
    if (pending !== null) {
      const args = pending;
      pending = null;
      fire(args);
    }
  };

  const limited = ((...args: A) => {
    const elapsed = now() - lastCall;
    if (elapsed >= intervalMs && timer === null) {
      fire(args);
      return;
    }
    pending = args;
    if (timer === null) {
      timer = schedule(onTimer, Math.max(0, intervalMs - elapsed));
    }
  }) as RateLimited<A>;

  limited.cancel = () => {
    if (timer !== null) {
      cancelTimer(timer);
      timer = null;
    }
    pending = null;
  };

  limited.flush = () => {
    if (pending !== null) {
      const args = pending;
      pending = null;
      if (timer !== null) {
        cancelTimer(timer);
        timer = null;
      }
      fire(args);
    }
  };

  return limited;
}
