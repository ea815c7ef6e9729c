import { describe, expect, it } from "vitest";

import { rateLimit } from "../src/debounce.js";

function harness(intervalMs: number) {
  let clock = 0;
  const timers: { at: number; cb: () => void; id: number }[] = [];
  let nextId = 1;
  const schedule = (cb: () => void, ms: number) => {
    const id = nextId++;
    timers.push({ at: clock + ms, cb, id });
    return id as unknown as ReturnType<typeof setTimeout>;
  };
  const cancel = (t: ReturnType<typeof setTimeout>) => {
    const idx = timers.findIndex((e) => e.id === (t as unknown as number));
    if (idx >= 0) timers.splice(idx, 1);
  };
  const advance = (to: number) => {
    while (true) {
      const due = timers.filter((t) => t.at <= to)
        .sort((a, b) => a.at - b.at)[0];
      if (!due) break;
      timers.splice(timers.indexOf(due), 1);
      clock = due.at;
      due.cb();
    }
    clock = to;
  };
  const calls: number[] = [];
  const limited = rateLimit((..._args: unknown[]) => {
    calls.push(clock);
  }, intervalMs, () => clock, schedule, cancel);
  return { calls, limited, advance, tick: (ms: number) => advance(clock + ms) };
}

describe("rateLimit", () => {
  it("fires immediately when idle", () => {
    const h = harness(200);
    h.limited();
    expect(h.calls).toEqual([0]);
  });

  it("caps continuous drag at 5 calls per second", () => {
    const h = harness(200);
    // 100 move events over one second
    for (let i = 0; i < 100; i++) {
      h.limited(i);
      h.tick(10);
    }
    // count calls inside any sliding 1s window
    for (const start of h.calls) {
      const inWindow = h.calls.filter(
        (t) => t >= start && t < start + 1000).length;
      expect(inWindow).toBeLessThanOrEqual(5);
    }
    expect(h.calls.length).toBeGreaterThan(2); // still responsive
  });

  it("always delivers the trailing call", () => {
    const h = harness(200);
    h.limited("a");
    h.limited("b");
    expect(h.calls.length).toBe(1);
    h.advance(250);
    expect(h.calls.length).toBe(2);
  });

  it("cancel drops the pending call", () => {
    const h = harness(200);
    h.limited();
    h.limited();
    h.limited.cancel();
    h.advance(1000);
    expect(h.calls.length).toBe(1);
  });

  it("flush fires the pending call right away", () => {
    const h = harness(200);
    h.limited();
    h.limited();
    h.limited.flush();
    expect(h.calls.length).toBe(2);
  });
});
