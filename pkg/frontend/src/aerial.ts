/** Aerial overview pane: a schematic plan view of the scene's cameras and
 * identities, drawn from /scenes metadata with a plain linear lat/lng
 * viewport (street-scale extents; no projection math in the client). An
 * optional static-map image URL template can provide an imagery backdrop. */

import type { GeoPoint, SceneImage } from "./types.js";

export interface AerialViewport {
  minLat: number;
  maxLat: number;
  minLng: number;
  maxLng: number;
  canvasW: number;
  canvasH: number;
  pad: number;
}

export function fitAerial(
  images: SceneImage[],
  canvasW: number,
  canvasH: number,
  pad = 24,
): AerialViewport {
  const lats = images.map((i) => i.lat);
  const lngs = images.map((i) => i.lng);
  const minLat = Math.min(...lats);
  const maxLat = Math.max(...lats);
  const minLng = Math.min(...lngs);
  const maxLng = Math.max(...lngs);
  const spanLat = Math.max(maxLat - minLat, 1e-6);
  const spanLng = Math.max(maxLng - minLng, 1e-6);
  return {
    minLat: minLat - 0.1 * spanLat,
    maxLat: maxLat + 0.1 * spanLat,
    minLng: minLng - 0.1 * spanLng,
    maxLng: maxLng + 0.1 * spanLng,
    canvasW,
    canvasH,
    pad,
  };
}

export function geoToCanvas(vp: AerialViewport, p: GeoPoint): [number, number] {
  const w = vp.canvasW - 2 * vp.pad;
  const h = vp.canvasH - 2 * vp.pad;
  const x = vp.pad + ((p.lng - vp.minLng) / (vp.maxLng - vp.minLng)) * w;
  // north up: larger latitude is a smaller canvas y
  const y = vp.pad + (1 - (p.lat - vp.minLat) / (vp.maxLat - vp.minLat)) * h;
  return [x, y];
}

export function canvasToGeo(vp: AerialViewport, x: number, y: number): GeoPoint {
  const w = vp.canvasW - 2 * vp.pad;
  const h = vp.canvasH - 2 * vp.pad;
  return {
    lng: vp.minLng + ((x - vp.pad) / w) * (vp.maxLng - vp.minLng),
    lat: vp.minLat + (1 - (y - vp.pad) / h) * (vp.maxLat - vp.minLat),
  };
}

/** Fill {lat}/{lng}/{w}/{h} placeholders of a static-map URL template. */
export function staticMapUrl(
  template: string,
  center: GeoPoint,
  w: number,
  h: number,
): string {
  return template
    .replace("{lat}", String(center.lat))
    .replace("{lng}", String(center.lng))
    .replace("{w}", String(Math.round(w)))
    .replace("{h}", String(Math.round(h)));
}

export function renderAerial(
  ctx: CanvasRenderingContext2D,
  vp: AerialViewport,
  images: SceneImage[],
  backdrop: CanvasImageSource | null,
  target: GeoPoint | null,
): void {
  ctx.clearRect(0, 0, vp.canvasW, vp.canvasH);
  if (backdrop) {
    ctx.globalAlpha = 0.8;
    ctx.drawImage(backdrop, 0, 0, vp.canvasW, vp.canvasH);
    ctx.globalAlpha = 1.0;
  } else {
    ctx.fillStyle = "#101820";
    ctx.fillRect(0, 0, vp.canvasW, vp.canvasH);
  }
  for (const img of images) {
    const [x, y] = geoToCanvas(vp, { lat: img.lat, lng: img.lng });
    ctx.fillStyle = "#4db8ff";
    ctx.beginPath();
    ctx.arc(x, y, 4, 0, 2 * Math.PI);
    ctx.fill();
  }
  if (target) {
    const [x, y] = geoToCanvas(vp, target);
    ctx.strokeStyle = "#ff3b30";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(x - 7, y);
    ctx.lineTo(x + 7, y);
    ctx.moveTo(x, y - 7);
    ctx.lineTo(x, y + 7);
    ctx.stroke();
  }
}
