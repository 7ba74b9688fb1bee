/** Velocity profile line plot under the canvas. */

export function drawVelocity(
  ctx: CanvasRenderingContext2D,
  t: number[],
  speed: number[],
): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  if (t.length < 2) return;

  const tMax = t[t.length - 1];
  const vMax = Math.max(...speed, 1e-9);
  const pad = 6;

  ctx.strokeStyle = "#c53030";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  for (let i = 0; i < t.length; i++) {
    const x = pad + (t[i] / tMax) * (width - 2 * pad);
    const y = height - pad - (speed[i] / vMax) * (height - 2 * pad);
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  }
  ctx.stroke();

  ctx.strokeStyle = "#a0aec0";
  ctx.lineWidth = 1;
  ctx.strokeRect(pad, pad, width - 2 * pad, height - 2 * pad);
}
