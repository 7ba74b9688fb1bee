/** Pure drag throttle: at most one message per interval, never dropping the
 * final position (the latest pending value is flushed when the window
 * elapses). 33 ms ≈ 30 Hz, chosen against the service's 50 ms latency
 * budget.
 */

export interface Throttle<T> {
  /** returns the value to send now, or null to hold */
  push(value: T, now: number): T | null;
  /** value still pending after the last window, if any */
  flush(now: number): T | null;
}

export function makeThrottle<T>(intervalMs = 33): Throttle<T> {
  let lastSent = -Infinity;
  let pending: T | null = null;

  return {
    push(value: T, now: number): T | null {
      if (now - lastSent >= intervalMs) {
        lastSent = now;
        pending = null;
        return value;
      }
      pending = value;
      return null;
    },
    flush(now: number): T | null {
      if (pending !== null && now - lastSent >= intervalMs) {
        const out = pending;
        pending = null;
        lastSent = now;
        return out;
      }
      return null;
    },
  };
}
