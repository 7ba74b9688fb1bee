/** Canvas rendering: authoritative trajectory from the server, optimistic
 * red target markers, pen-up spans hidden.
 */

import type { Target, TrajectoryDoc } from "./types.js";

export const TARGET_RADIUS = 6;

export function drawScene(
  ctx: CanvasRenderingContext2D,
  targets: Target[],
  trajectory: TrajectoryDoc | null,
  compare: TrajectoryDoc | null = null,
): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);

  if (trajectory) drawTrajectory(ctx, trajectory, "#1a1a1a");
  if (compare) drawTrajectory(ctx, compare, "#2b6cb0");

  for (const t of targets) {
    ctx.beginPath();
    ctx.arc(t.position[0], t.position[1], TARGET_RADIUS, 0, 2 * Math.PI);
    ctx.fillStyle = t.pen_up ? "#f8b4b4" : "#e53e3e";
    ctx.fill();
    ctx.strokeStyle = "#9b2c2c";
    ctx.stroke();
  }
}

function drawTrajectory(
  ctx: CanvasRenderingContext2D,
  traj: TrajectoryDoc,
  color: string,
): void {
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.lineCap = "round";
  let penDown = false;
  ctx.beginPath();
  for (let i = 0; i < traj.points.length; i++) {
    const [x, y] = traj.points[i];
    if (traj.drawn[i]) {
      if (penDown) ctx.lineTo(x, y);
      else ctx.moveTo(x, y);
      penDown = true;
    } else {
      penDown = false;
    }
  }
  ctx.stroke();
}
