/** Canvas rendering for panorama panes: image (or offline placeholder),
 * the red guidance circle at the server-provided marker pixel, proposal
 * boxes, and the editable draft box. Rendering only scales image pixels to
 * canvas pixels; marker positions are used exactly as received. */

import type { PaneState } from "./session.js";

export interface Viewport {
  /** canvas pixels per image pixel */
  scale: number;
  offsetX: number;
  offsetY: number;
}

export function fitViewport(
  imageW: number,
  imageH: number,
  canvasW: number,
  canvasH: number,
): Viewport {
  const scale = Math.min(canvasW / imageW, canvasH / imageH);
  return {
    scale,
    offsetX: (canvasW - imageW * scale) / 2,
    offsetY: (canvasH - imageH * scale) / 2,
  };
}

export function toCanvas(vp: Viewport, x: number, y: number): [number, number] {
  return [vp.offsetX + x * vp.scale, vp.offsetY + y * vp.scale];
}

export function toImage(vp: Viewport, cx: number, cy: number): [number, number] {
  return [(cx - vp.offsetX) / vp.scale, (cy - vp.offsetY) / vp.scale];
}

function drawPlaceholder(
  ctx: CanvasRenderingContext2D,
  vp: Viewport,
  w: number,
  h: number,
  label: string,
): void {
  ctx.fillStyle = "#1c2430";
  const [x0, y0] = toCanvas(vp, 0, 0);
  ctx.fillRect(x0, y0, w * vp.scale, h * vp.scale);
  ctx.strokeStyle = "#2e3c4e";
  ctx.lineWidth = 1;
  for (let gx = 0; gx <= w; gx += 256) {
    const [cx] = toCanvas(vp, gx, 0);
    ctx.beginPath();
    ctx.moveTo(cx, y0);
    ctx.lineTo(cx, y0 + h * vp.scale);
    ctx.stroke();
  }
  // horizon row of the equirectangular frame
  const [, hy] = toCanvas(vp, 0, h / 2);
  ctx.strokeStyle = "#3d5068";
  ctx.beginPath();
  ctx.moveTo(x0, hy);
  ctx.lineTo(x0 + w * vp.scale, hy);
  ctx.stroke();
  ctx.fillStyle = "#8aa0b8";
  ctx.font = "12px sans-serif";
  ctx.fillText(label, x0 + 8, y0 + 16);
}

function drawBox(
  ctx: CanvasRenderingContext2D,
  vp: Viewport,
  box: { x_min: number; y_min: number; x_max: number; y_max: number },
  color: string,
  width: number,
): void {
  const [x0, y0] = toCanvas(vp, box.x_min, box.y_min);
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.strokeRect(
    x0,
    y0,
    (box.x_max - box.x_min) * vp.scale,
    (box.y_max - box.y_min) * vp.scale,
  );
}

export function renderPane(
  ctx: CanvasRenderingContext2D,
  pane: PaneState,
  image: CanvasImageSource | null,
  canvasW: number,
  canvasH: number,
): Viewport {
  const { width, height } = pane.view;
  const vp = fitViewport(width, height, canvasW, canvasH);
  ctx.clearRect(0, 0, canvasW, canvasH);
  if (image) {
    const [x0, y0] = toCanvas(vp, 0, 0);
    ctx.drawImage(image, x0, y0, width * vp.scale, height * vp.scale);
  } else {
    drawPlaceholder(ctx, vp, width, height, pane.view.image_id);
  }

  for (const proposal of pane.view.proposals) {
    const [x_min, y_min, x_max, y_max] = proposal.box;
    const selected = pane.selectedProposal === proposal.local_id;
    drawBox(ctx, vp, { x_min, y_min, x_max, y_max },
            selected ? "#ffd24d" : "#4db8ff", selected ? 2 : 1);
  }

  if (pane.draft) {
    drawBox(ctx, vp, pane.draft, "#6dff7c", 2);
    const [hx, hy] = toCanvas(vp, pane.draft.x_max, pane.draft.y_max);
    ctx.fillStyle = "#6dff7c";
    ctx.fillRect(hx - 3, hy - 3, 6, 6); // resize handle
  }

  // the red circle marking the target's expected location (server-computed)
  if (pane.view.marker) {
    const [mx, my] = toCanvas(vp, pane.view.marker.x, pane.view.marker.y);
    ctx.strokeStyle = "#ff3b30";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(mx, my, Math.max(6, pane.view.marker_radius_px * vp.scale), 0, 2 * Math.PI);
    ctx.stroke();
    ctx.beginPath();
    ctx.arc(mx, my, 2.5, 0, 2 * Math.PI);
    ctx.fillStyle = "#ff3b30";
    ctx.fill();
  }
  return vp;
}
