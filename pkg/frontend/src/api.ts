/** Thin HTTP client for the catalog and compare-mode predictions. */

import type { Dynamics, ModelInfo, Target, TrajectoryDoc } from "./types.js";

export async function fetchModels(base = ""): Promise<ModelInfo[]> {
  const resp = await fetch(`${base}/models`);
  if (!resp.ok) throw new Error(`GET /models failed: ${resp.status}`);
  const doc = (await resp.json()) as { models: ModelInfo[] };
  return doc.models;
}

export interface PredictResult {
  seed: number;
  dynamics: Dynamics[];
  trajectory: TrajectoryDoc;
}

export async function predict(
  model: string,
  targets: Target[],
  primer: string | null,
  seed: number,
  base = "",
): Promise<PredictResult> {
  const resp = await fetch(`${base}/predict`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify({ model, targets, primer: primer ?? undefined, seed }),
  });
  if (!resp.ok) throw new Error(`POST /predict failed: ${resp.status}`);
  return (await resp.json()) as PredictResult;
}
