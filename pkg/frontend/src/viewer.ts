/** Canvas helpers: blit server PNGs, overlay latent-preview polylines. */

import { OrbitState, previewProject } from "./orbit.js";

export async function drawPng(canvas: HTMLCanvasElement,
                              png: ArrayBuffer): Promise<void> {
  const blob = new Blob([png], { type: "image/png" });
  const bitmap = await createImageBitmap(blob);
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d context unavailable");
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(bitmap, 0, 0, canvas.width, canvas.height);
  bitmap.close();
}

export function drawSplit(canvas: HTMLCanvasElement, left: ImageBitmap,
                          right: ImageBitmap): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d context unavailable");
  const w = canvas.width / 2;
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(left, 0, 0, w, canvas.height);
  ctx.drawImage(right, 0, 0, w, canvas.height, w, 0, w, canvas.height);
  ctx.strokeStyle = "#fff";
  ctx.beginPath();
  ctx.moveTo(w, 0);
  ctx.lineTo(w, canvas.height);
  ctx.stroke();
}

export function drawPolylines(canvas: HTMLCanvasElement, orbit: OrbitState,
                              center: number[], polylines: number[][][],
                              highlight?: number[][]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d context unavailable");
  ctx.fillStyle = "#10131a";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  ctx.lineWidth = 1;
  ctx.strokeStyle = "rgba(150, 170, 200, 0.55)";
  for (const line of polylines) {
    strokeLine(ctx, canvas, orbit, center, line);
  }
  if (highlight && highlight.length >= 2) {
    ctx.lineWidth = 2;
    ctx.strokeStyle = "#ffb347";
    strokeLine(ctx, canvas, orbit, center, highlight);
  }
}

function strokeLine(ctx: CanvasRenderingContext2D,
                    canvas: HTMLCanvasElement, orbit: OrbitState,
                    center: number[], line: number[][]): void {
  ctx.beginPath();
  line.forEach((p, i) => {
    const [u, v] = previewProject(orbit, center, p);
    const x = u * canvas.width;
    const y = v * canvas.height;
    if (i === 0) ctx.moveTo(x, y);
    else ctx.lineTo(x, y);
  });
  ctx.stroke();
}
