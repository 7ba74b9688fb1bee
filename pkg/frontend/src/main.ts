/** Application wiring: canvas editing over one ws session, style/seed
 * panel from GET /models, optional compare mode via POST /predict.
 */

import { fetchModels, predict } from "./api.js";
import { TARGET_RADIUS, drawScene } from "./canvas.js";
import {
  EditorState,
  addTarget,
  applyServerFrame,
  deleteTarget,
  initialState,
  moveTarget,
  pickTarget,
  requestResample,
  resyncMessages,
  setModel,
  setPrimer,
  setSeed,
  togglePenUp,
} from "./state.js";
import { makeThrottle } from "./throttle.js";
import type { ClientMessage, TrajectoryDoc } from "./types.js";
import { drawVelocity } from "./velocity.js";
import { SessionSocket } from "./ws.js";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

const canvas = byId<HTMLCanvasElement>("editor");
const velocityCanvas = byId<HTMLCanvasElement>("velocity");
const modelSelect = byId<HTMLSelectElement>("model");
const primerSelect = byId<HTMLSelectElement>("primer");
const comparePrimerSelect = byId<HTMLSelectElement>("compare-primer");
const seedInput = byId<HTMLInputElement>("seed");
const variationBtn = byId<HTMLButtonElement>("variation");
const compareToggle = byId<HTMLInputElement>("compare");
const banner = byId<HTMLDivElement>("banner");
const status = byId<HTMLDivElement>("status");

const ctx = canvas.getContext("2d")!;
const vctx = velocityCanvas.getContext("2d")!;

const state: EditorState = initialState();
let compareTrajectory: TrajectoryDoc | null = null;

const wsUrl = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/session`;
const socket = new SessionSocket(wsUrl, {
  onFrame(frame) {
    if (applyServerFrame(state, frame)) {
      render();
      void updateCompare();
    } else if (state.lastError) {
      status.textContent = state.lastError;
    }
  },
  onStatus(connected) {
    banner.style.display = connected ? "none" : "block";
  },
  onResync() {
    for (const msg of resyncMessages(state)) socket.send(msg);
  },
});

function send(msg: ClientMessage): void {
  socket.send(msg);
  render(); // optimistic marker update
}

function render(): void {
  drawScene(ctx, state.targets, state.trajectory, compareTrajectory);
  drawVelocity(vctx, state.velocity.t, state.velocity.speed);
}

// ---------------------------------------------------------------------------
// canvas editing
// ---------------------------------------------------------------------------

let dragIndex = -1;
const dragThrottle = makeThrottle<[number, number]>(33);
let flushTimer: number | undefined;

function canvasPoint(ev: MouseEvent): [number, number] {
  const rect = canvas.getBoundingClientRect();
  return [ev.clientX - rect.left, ev.clientY - rect.top];
}

canvas.addEventListener("mousedown", (ev) => {
  if (ev.button !== 0) return;
  const p = canvasPoint(ev);
  const hit = pickTarget(state, p, TARGET_RADIUS * 2);
  if (hit >= 0) dragIndex = hit;
  else send(addTarget(state, p));
});

canvas.addEventListener("mousemove", (ev) => {
  if (dragIndex < 0) return;
  const p = canvasPoint(ev);
  const due = dragThrottle.push(p, performance.now());
  if (due) {
    send(moveTarget(state, dragIndex, due));
  } else {
    state.targets[dragIndex] = { ...state.targets[dragIndex], position: p };
    render();
    window.clearTimeout(flushTimer);
    flushTimer = window.setTimeout(() => {
      const late = dragThrottle.flush(performance.now());
      if (late && dragIndex >= 0) send(moveTarget(state, dragIndex, late));
    }, 40);
  }
});

window.addEventListener("mouseup", () => {
  if (dragIndex >= 0) {
    send(moveTarget(state, dragIndex, state.targets[dragIndex].position));
  }
  dragIndex = -1;
});

canvas.addEventListener("contextmenu", (ev) => {
  ev.preventDefault();
  const hit = pickTarget(state, canvasPoint(ev), TARGET_RADIUS * 2);
  if (hit >= 0) send(togglePenUp(state, hit));
});

window.addEventListener("keydown", (ev) => {
  if ((ev.key === "Delete" || ev.key === "Backspace") && state.targets.length) {
    send(deleteTarget(state, state.targets.length - 1));
  }
});

// ---------------------------------------------------------------------------
// style / seed panel
// ---------------------------------------------------------------------------

function fillPrimerOptions(select: HTMLSelectElement, styles: string[]): void {
  select.innerHTML = "";
  const none = document.createElement("option");
  none.value = "";
  none.textContent = "(no primer)";
  select.appendChild(none);
  for (const s of styles) {
    const opt = document.createElement("option");
    opt.value = s;
    opt.textContent = s;
    select.appendChild(opt);
  }
}

async function loadCatalog(): Promise<void> {
  const models = (await fetchModels()).filter((m) => m.kind === "DPP");
  modelSelect.innerHTML = "";
  for (const m of models) {
    const opt = document.createElement("option");
    opt.value = m.id;
    opt.textContent = m.id;
    modelSelect.appendChild(opt);
  }
  if (models.length) {
    send(setModel(state, models[0].id));
    fillPrimerOptions(primerSelect, models[0].styles);
    fillPrimerOptions(comparePrimerSelect, models[0].styles);
  }
  modelSelect.onchange = () => {
    const model = models.find((m) => m.id === modelSelect.value);
    if (!model) return;
    send(setModel(state, model.id));
    fillPrimerOptions(primerSelect, model.styles);
    fillPrimerOptions(comparePrimerSelect, model.styles);
  };
}

primerSelect.addEventListener("change", () => {
  send(setPrimer(state, primerSelect.value || null));
});

seedInput.addEventListener("change", () => {
  send(setSeed(state, Number(seedInput.value) || 0));
});

variationBtn.addEventListener("click", () => {
  const seed = Math.floor(Math.random() * 1_000_000);
  seedInput.value = String(seed);
  send(setSeed(state, seed));
});

byId<HTMLButtonElement>("resample").addEventListener("click", () => {
  send(requestResample(state));
});

// ---------------------------------------------------------------------------
// compare mode: second primer rendered side by side via POST /predict
// ---------------------------------------------------------------------------

compareToggle.addEventListener("change", () => void updateCompare());
comparePrimerSelect.addEventListener("change", () => void updateCompare());

async function updateCompare(): Promise<void> {
  if (!compareToggle.checked || !state.model || state.targets.length < 2) {
    compareTrajectory = null;
    render();
    return;
  }
  try {
    const result = await predict(
      state.model,
      state.targets,
      comparePrimerSelect.value || null,
      state.seed,
    );
    compareTrajectory = result.trajectory;
  } catch {
    compareTrajectory = null;
  }
  render();
}

void loadCatalog();
render();
