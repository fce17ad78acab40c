/** Application wiring: aerial pane for target selection, four panorama panes
 * with guidance markers and box editing, identity save with conflict
 * handling. Every mutation goes through the AnnotationApi client. */

import { AnnotationApi, ConflictError } from "./api.js";
import {
  AerialViewport,
  canvasToGeo,
  fitAerial,
  geoToCanvas,
  renderAerial,
  staticMapUrl,
} from "./aerial.js";
import { loadConfig } from "./config.js";
import { handleKey } from "./keyboard.js";
import { Viewport, renderPane, toImage } from "./panes.js";
import { UiSession } from "./session.js";
import type { GeoPoint, ScenesResponse } from "./types.js";

interface PaneWidget {
  canvas: HTMLCanvasElement;
  viewport: Viewport | null;
  image: HTMLImageElement | null;
}

async function start(): Promise<void> {
  const config = await loadConfig();
  const api = new AnnotationApi(config.apiBaseUrl);
  const status = document.getElementById("status") as HTMLElement;
  const banner = document.getElementById("banner") as HTMLElement;
  const saveButton = document.getElementById("save") as HTMLButtonElement;
  const aerialCanvas = document.getElementById("aerial") as HTMLCanvasElement;
  const paneHost = document.getElementById("panes") as HTMLElement;
  const exportJson = document.getElementById("export-json") as HTMLAnchorElement;
  const exportVoc = document.getElementById("export-voc") as HTMLAnchorElement;
  exportJson.href = api.exportUrl("json");
  exportVoc.href = api.exportUrl("voc");

  let scenes: ScenesResponse;
  try {
    scenes = await api.scenes();
    status.textContent = `${scenes.images.length} panoramas, ` +
      `${scenes.identities.length} identities`;
  } catch (err) {
    status.textContent = `backend unreachable at ${config.apiBaseUrl}: ${err}`;
    return;
  }

  let session: UiSession | null = null;
  let activePane = 0;
  const widgets: PaneWidget[] = [];
  let aerialVp: AerialViewport = fitAerial(
    scenes.images, aerialCanvas.width, aerialCanvas.height,
  );
  let target: GeoPoint | null = null;
  let mapBackdrop: HTMLImageElement | null = null;

  if (config.staticMapUrlTemplate && scenes.images.length) {
    const center = {
      lat: scenes.images.reduce((s, i) => s + i.lat, 0) / scenes.images.length,
      lng: scenes.images.reduce((s, i) => s + i.lng, 0) / scenes.images.length,
    };
    mapBackdrop = new Image();
    mapBackdrop.crossOrigin = "anonymous";
    mapBackdrop.src = staticMapUrl(
      config.staticMapUrlTemplate, center, aerialCanvas.width, aerialCanvas.height,
    );
    mapBackdrop.onload = drawAerial;
  }

  function drawAerial(): void {
    const ctx = aerialCanvas.getContext("2d");
    if (!ctx) return;
    renderAerial(ctx, aerialVp, scenes.images,
                 mapBackdrop?.complete ? mapBackdrop : null, target);
    if (session) {
      for (const pane of session.panes) {
        const img = scenes.images.find((i) => i.image_id === pane.view.image_id);
        if (!img) continue;
        const [x, y] = geoToCanvas(aerialVp, { lat: img.lat, lng: img.lng });
        ctx.strokeStyle = "#ffd24d";
        ctx.beginPath();
        ctx.arc(x, y, 7, 0, 2 * Math.PI);
        ctx.stroke();
      }
    }
  }

  function drawPane(index: number): void {
    if (!session) return;
    const widget = widgets[index];
    const pane = session.panes[index];
    if (!widget || !pane) return;
    const ctx = widget.canvas.getContext("2d");
    if (!ctx) return;
    widget.viewport = renderPane(
      ctx, pane, widget.image?.complete && widget.image.naturalWidth ? widget.image : null,
      widget.canvas.width, widget.canvas.height,
    );
    widget.canvas.classList.toggle("active", index === activePane);
    widget.canvas.classList.toggle("dirty", pane.dirty);
  }

  function drawAllPanes(): void {
    for (let i = 0; i < widgets.length; i++) drawPane(i);
    saveButton.disabled = !session || session.dirtyPanes().length > 0 ||
      !sessionHasDrafts();
    drawAerial();
  }

  function sessionHasDrafts(): boolean {
    return !!session && session.panes.some((p) => p.draft || p.confirmedBoxId);
  }

  function buildPaneWidgets(): void {
    paneHost.replaceChildren();
    widgets.length = 0;
    if (!session) return;
    session.panes.forEach((pane, index) => {
      const wrap = document.createElement("div");
      wrap.className = "pane";
      const title = document.createElement("div");
      title.className = "pane-title";
      title.textContent = pane.view.image_id + (pane.view.marker ? "" : " (no marker)");
      const canvas = document.createElement("canvas");
      canvas.width = 480;
      canvas.height = 240;
      canvas.tabIndex = 0;
      const widget: PaneWidget = { canvas, viewport: null, image: null };

      const img = new Image();
      img.onload = () => {
        widget.image = img;
        drawPane(index);
      };
      img.onerror = () => {
        widget.image = null; // placeholder stays; offer retry
        title.textContent = pane.view.image_id + " (image unavailable, click title to retry)";
      };
      img.src = api.imageUrl(pane.view.image_id);
      title.addEventListener("click", () => {
        img.src = api.imageUrl(pane.view.image_id) + "?t=" + Date.now();
      });

      canvas.addEventListener("mousedown", (ev) => {
        activePane = index;
        canvas.focus();
        if (!widget.viewport || !session) return;
        const rect = canvas.getBoundingClientRect();
        const [ix, iy] = toImage(widget.viewport, ev.clientX - rect.left,
                                 ev.clientY - rect.top);
        const hit = pane.view.proposals.find(
          (p) => ix >= p.box[0] && ix <= p.box[2] && iy >= p.box[1] && iy <= p.box[3],
        );
        if (hit) {
          session.selectProposal(index, hit.local_id);
        } else if (!pane.draft) {
          session.startDraft(index);
        }
        drawAllPanes();
      });
      canvas.addEventListener("keydown", (ev) => {
        if (!session) return;
        if (handleKey(session, index, ev, ev.altKey)) {
          ev.preventDefault();
          drawAllPanes();
        }
      });

      wrap.append(title, canvas);
      paneHost.append(wrap);
      widgets.push(widget);
    });
  }

  aerialCanvas.addEventListener("click", async (ev) => {
    if (session && !session.canNavigate() &&
        !window.confirm("Discard unsaved box edits?")) {
      return;
    }
    const rect = aerialCanvas.getBoundingClientRect();
    const geo = canvasToGeo(aerialVp, ev.clientX - rect.left, ev.clientY - rect.top);
    banner.textContent = "";
    try {
      const view = await api.selectTarget(geo.lat, geo.lng);
      target = view.target;
      session = new UiSession(view);
      activePane = 0;
      status.textContent = `target ${view.target.lat.toFixed(6)}, ` +
        `${view.target.lng.toFixed(6)}` + (view.short ? " (short: fewer than 4 views)" : "");
      buildPaneWidgets();
      drawAllPanes();
    } catch (err) {
      banner.textContent = `select failed: ${err}`;
    }
  });

  saveButton.addEventListener("click", async () => {
    if (!session) return;
    banner.textContent = "";
    try {
      for (let i = 0; i < session.panes.length; i++) {
        const pane = session.panes[i];
        if (!pane || !pane.draft || pane.confirmedBoxId) continue;
        if (pane.serverBox) {
          // re-edited persisted box: revision-checked update
          try {
            const box = await api.updateBox(
              pane.view.image_id, pane.serverBox.boxId, pane.draft,
              config.author, pane.serverBox.revision,
            );
            session.markConfirmed(i, box.box_id, box.revision);
          } catch (err) {
            if (err instanceof ConflictError) {
              // keep the local draft; adopt the store revision so the next
              // save attempt goes through
              const actual = (err.detail as { actual_revision?: number })
                ?.actual_revision;
              if (actual !== undefined) session.applyConflict(i, actual);
              banner.textContent =
                `conflict in ${pane.view.image_id}: another annotator changed ` +
                "this box; your edits are kept, save again to overwrite";
              drawAllPanes();
              return;
            }
            throw err;
          }
        } else {
          const box = await api.createBox(pane.view.image_id, pane.draft,
                                          config.author);
          session.markConfirmed(i, box.box_id, box.revision);
        }
      }
      if (!session.canSave()) {
        banner.textContent = "nothing to save: confirm at least one box";
        return;
      }
      const doc = await api.saveIdentity(session.buildIdentityPayload());
      banner.textContent = `saved ${doc.instance_id} with ${doc.links.length} links ` +
        `(revision ${doc.revision})`;
    } catch (err) {
      banner.textContent = `save failed: ${err}`;
    }
    drawAllPanes();
  });

  window.addEventListener("beforeunload", (ev) => {
    if (session && !session.canNavigate()) {
      ev.preventDefault();
    }
  });

  drawAerial();
}

start();
