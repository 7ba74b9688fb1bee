/** Pure editor state.
 *
 * The UI never computes trajectories locally: this module only tracks the
 * optimistic target markers, the message version counter, and the latest
 * acknowledged server reply. Stale replies (older plan_version than one
 * already applied) are discarded so the rendered trajectory is always
 * total-ordered by plan_version.
 */

import type {
  ClientMessage,
  ServerFrame,
  SessionReply,
  Target,
  TrajectoryDoc,
} from "./types.js";
import { isErrorFrame } from "./types.js";

export interface EditorState {
  targets: Target[];
  model: string | null;
  primer: string | null;
  seed: number;
  /** last version sent to the server */
  sentVersion: number;
  /** plan_version of the reply currently rendered */
  ackedVersion: number;
  trajectory: TrajectoryDoc | null;
  velocity: { t: number[]; speed: number[] };
  dynamics: SessionReply["dynamics"];
  lastError: string | null;
}

export function initialState(): EditorState {
  return {
    targets: [],
    model: null,
    primer: null,
    seed: 0,
    sentVersion: 0,
    ackedVersion: 0,
    trajectory: null,
    velocity: { t: [], speed: [] },
    dynamics: [],
    lastError: null,
  };
}

function nextVersion(state: EditorState): number {
  state.sentVersion += 1;
  return state.sentVersion;
}

/** Each mutation updates optimistic local state and returns the ws message. */

export function setModel(state: EditorState, model: string): ClientMessage {
  state.model = model;
  state.primer = null;
  return { type: "set_model", version: nextVersion(state), model };
}

export function setPrimer(
  state: EditorState,
  primer: string | null,
): ClientMessage {
  state.primer = primer;
  return { type: "set_primer", version: nextVersion(state), primer };
}

export function setSeed(state: EditorState, seed: number): ClientMessage {
  state.seed = seed;
  return { type: "set_seed", version: nextVersion(state), seed };
}

export function addTarget(
  state: EditorState,
  position: [number, number],
): ClientMessage {
  state.targets.push({ position, pen_up: false });
  return {
    type: "upsert_target",
    version: nextVersion(state),
    index: state.targets.length - 1,
    position,
    pen_up: false,
  };
}

export function moveTarget(
  state: EditorState,
  index: number,
  position: [number, number],
): ClientMessage {
  if (index < 0 || index >= state.targets.length) {
    throw new RangeError(`no target at index ${index}`);
  }
  state.targets[index] = { ...state.targets[index], position };
  return {
    type: "upsert_target",
    version: nextVersion(state),
    index,
    position,
    pen_up: state.targets[index].pen_up,
  };
}

export function togglePenUp(state: EditorState, index: number): ClientMessage {
  if (index < 0 || index >= state.targets.length) {
    throw new RangeError(`no target at index ${index}`);
  }
  const target = state.targets[index];
  state.targets[index] = { ...target, pen_up: !target.pen_up };
  return {
    type: "upsert_target",
    version: nextVersion(state),
    index,
    position: target.position,
    pen_up: !target.pen_up,
  };
}

export function deleteTarget(state: EditorState, index: number): ClientMessage {
  if (index < 0 || index >= state.targets.length) {
    throw new RangeError(`no target at index ${index}`);
  }
  state.targets.splice(index, 1);
  return { type: "delete_target", version: nextVersion(state), index };
}

export function requestResample(state: EditorState): ClientMessage {
  return { type: "request_resample", version: nextVersion(state) };
}

/** Resync after a reconnect: replay the whole state as fresh messages. */
export function resyncMessages(state: EditorState): ClientMessage[] {
  const msgs: ClientMessage[] = [];
  if (state.model !== null) {
    msgs.push({ type: "set_model", version: nextVersion(state), model: state.model });
  }
  if (state.primer !== null) {
    msgs.push({ type: "set_primer", version: nextVersion(state), primer: state.primer });
  }
  msgs.push({ type: "set_seed", version: nextVersion(state), seed: state.seed });
  state.targets.forEach((t, index) => {
    msgs.push({
      type: "upsert_target",
      version: nextVersion(state),
      index,
      position: t.position,
      pen_up: t.pen_up,
    });
  });
  return msgs;
}

/** Apply a server frame; returns true when the rendered state changed. */
export function applyServerFrame(
  state: EditorState,
  frame: ServerFrame,
): boolean {
  if (isErrorFrame(frame)) {
    state.lastError = `${frame.code}: ${frame.message}`;
    return false;
  }
  if (frame.plan_version <= state.ackedVersion) {
    return false; // stale reply from an older edit: discard
  }
  state.ackedVersion = frame.plan_version;
  state.dynamics = frame.dynamics;
  state.trajectory = frame.trajectory;
  state.velocity = frame.trajectory
    ? { t: frame.trajectory.t, speed: frame.trajectory.speed }
    : { t: [], speed: [] };
  state.lastError = null;
  return true;
}

/** Hit test in canvas pixels: nearest target within `radius`, else -1. */
export function pickTarget(
  state: EditorState,
  point: [number, number],
  radius: number,
): number {
  let best = -1;
  let bestDist = radius;
  state.targets.forEach((t, i) => {
    const d = Math.hypot(t.position[0] - point[0], t.position[1] - point[1]);
    if (d <= bestDist) {
      best = i;
      bestDist = d;
    }
  });
  return best;
}
