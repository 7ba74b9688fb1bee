import { describe, expect, it } from "vitest";

import { makeThrottle } from "./throttle.js";

describe("drag throttle", () => {
  it("sends the first value immediately", () => {
    const th = makeThrottle<number>(33);
    expect(th.push(1, 0)).toBe(1);
  });

  it("holds values inside the window and coalesces to the latest", () => {
    const th = makeThrottle<number>(33);
    th.push(1, 0);
    expect(th.push(2, 10)).toBeNull();
    expect(th.push(3, 20)).toBeNull();
    expect(th.flush(40)).toBe(3); // only the latest pending survives
  });

  it("sends again once the interval elapsed", () => {
    const th = makeThrottle<number>(33);
    th.push(1, 0);
    expect(th.push(2, 34)).toBe(2);
  });

  it("flush is a no-op with nothing pending", () => {
    const th = makeThrottle<number>(33);
    th.push(1, 0);
    expect(th.flush(100)).toBeNull();
  });

  it("flush respects the interval", () => {
    const th = makeThrottle<number>(33);
    th.push(1, 0);
    th.push(2, 5);
    expect(th.flush(10)).toBeNull(); // window not elapsed yet
    expect(th.flush(40)).toBe(2);
  });

  it("never exceeds ~30 Hz for a continuous drag", () => {
    const th = makeThrottle<number>(33);
    let sent = 0;
    for (let t = 0; t <= 1000; t += 5) {
      if (th.push(t, t) !== null) sent++;
    }
    expect(sent).toBeLessThanOrEqual(31);
    expect(sent).toBeGreaterThanOrEqual(29);
  });
});
