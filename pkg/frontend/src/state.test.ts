import { describe, expect, it } from "vitest";

import {
  addTarget,
  applyServerFrame,
  deleteTarget,
  initialState,
  moveTarget,
  pickTarget,
  requestResample,
  resyncMessages,
  setModel,
  setSeed,
  togglePenUp,
} from "./state.js";
import type { SessionReply, TrajectoryDoc } from "./types.js";

function reply(version: number, n = 3): SessionReply {
  const traj: TrajectoryDoc = {
    t: Array.from({ length: n }, (_, i) => i * 0.1),
    points: Array.from({ length: n }, (_, i) => [i, i] as [number, number]),
    speed: Array.from({ length: n }, () => 1),
    drawn: Array.from({ length: n }, () => true),
  };
  return { plan_version: version, dynamics: [{ dt: 0.5, theta: 0.1 }], trajectory: traj };
}

describe("versioning", () => {
  it("assigns strictly increasing versions across mutations", () => {
    const s = initialState();
    const versions = [
      setModel(s, "m").version,
      addTarget(s, [0, 0]).version,
      addTarget(s, [10, 0]).version,
      setSeed(s, 5).version,
      requestResample(s).version,
    ];
    for (let i = 1; i < versions.length; i++) {
      expect(versions[i]).toBeGreaterThan(versions[i - 1]);
    }
  });

  it("discards stale replies (total order by plan_version)", () => {
    const s = initialState();
    expect(applyServerFrame(s, reply(3))).toBe(true);
    expect(s.ackedVersion).toBe(3);
    const old = reply(2, 7);
    expect(applyServerFrame(s, old)).toBe(false);
    expect(s.ackedVersion).toBe(3);
    expect(s.trajectory?.points.length).toBe(3); // still the newer one
  });

  it("applies newer replies and updates velocity buffer", () => {
    const s = initialState();
    applyServerFrame(s, reply(1, 4));
    applyServerFrame(s, reply(2, 6));
    expect(s.velocity.speed.length).toBe(6);
    expect(s.velocity.t.length).toBe(6);
  });

  it("error frames set lastError without touching trajectory", () => {
    const s = initialState();
    applyServerFrame(s, reply(1));
    const changed = applyServerFrame(s, {
      type: "error",
      code: 404,
      message: "unknown model",
    });
    expect(changed).toBe(false);
    expect(s.lastError).toContain("404");
    expect(s.trajectory).not.toBeNull();
  });
});

describe("target editing", () => {
  it("add produces an upsert at the new index", () => {
    const s = initialState();
    const msg = addTarget(s, [5, 6]);
    expect(msg).toMatchObject({ type: "upsert_target", index: 0, position: [5, 6] });
    expect(s.targets).toHaveLength(1);
  });

  it("move updates optimistically and keeps pen state", () => {
    const s = initialState();
    addTarget(s, [0, 0]);
    togglePenUp(s, 0);
    const msg = moveTarget(s, 0, [9, 9]);
    expect(s.targets[0].position).toEqual([9, 9]);
    expect(s.targets[0].pen_up).toBe(true);
    expect(msg).toMatchObject({ pen_up: true, position: [9, 9] });
  });

  it("toggle flips pen_up both locally and in the message", () => {
    const s = initialState();
    addTarget(s, [0, 0]);
    expect(togglePenUp(s, 0)).toMatchObject({ pen_up: true });
    expect(togglePenUp(s, 0)).toMatchObject({ pen_up: false });
    expect(s.targets[0].pen_up).toBe(false);
  });

  it("delete removes locally and emits delete_target", () => {
    const s = initialState();
    addTarget(s, [0, 0]);
    addTarget(s, [1, 1]);
    const msg = deleteTarget(s, 0);
    expect(msg).toMatchObject({ type: "delete_target", index: 0 });
    expect(s.targets).toHaveLength(1);
    expect(s.targets[0].position).toEqual([1, 1]);
  });

  it("rejects out-of-range indices", () => {
    const s = initialState();
    expect(() => moveTarget(s, 0, [1, 1])).toThrow(RangeError);
    expect(() => deleteTarget(s, -1)).toThrow(RangeError);
  });
});

describe("hit testing", () => {
  it("picks the nearest target within the radius", () => {
    const s = initialState();
    addTarget(s, [0, 0]);
    addTarget(s, [100, 0]);
    expect(pickTarget(s, [98, 1], 10)).toBe(1);
    expect(pickTarget(s, [50, 50], 10)).toBe(-1);
  });
});

describe("resync", () => {
  it("replays model, primer, seed and every target with fresh versions", () => {
    const s = initialState();
    setModel(s, "desk");
    setSeed(s, 7);
    addTarget(s, [0, 0]);
    addTarget(s, [10, 10]);
    const before = s.sentVersion;
    const msgs = resyncMessages(s);
    expect(msgs.map((m) => m.type)).toEqual([
      "set_model",
      "set_seed",
      "upsert_target",
      "upsert_target",
    ]);
    expect(msgs.every((m) => m.version > before)).toBe(true);
    const versions = msgs.map((m) => m.version);
    expect([...versions].sort((a, b) => a - b)).toEqual(versions);
  });
});
