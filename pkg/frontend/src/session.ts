/** Annotation session state: four panorama panes, draft boxes, identity
 * assembly. Pure state transitions, no DOM and no network; markers are kept
 * verbatim from the backend SessionView. */

import type {
  DraftBox,
  GeoPoint,
  IdentityLink,
  PaneView,
  SessionView,
} from "./types.js";

export interface ServerBox {
  boxId: string;
  revision: number;
}

export interface PaneState {
  view: PaneView;
  /** Box under edit; starts from a proposal or a fresh rectangle. */
  draft: DraftBox | null;
  /** local_id of the proposal the draft was seeded from, if any. */
  selectedProposal: number | null;
  /** Identity of the persisted copy of the draft, kept through re-edits so
   * saves become revision-checked updates instead of duplicate creates. */
  serverBox: ServerBox | null;
  /** Server box id once the draft has been persisted and is unedited. */
  confirmedBoxId: string | null;
  /** Unsaved edits: blocks navigation until confirmed or discarded. */
  dirty: boolean;
}

const DEFAULT_DRAFT_SIZE = 80;

export class UiSession {
  readonly target: GeoPoint;
  readonly short: boolean;
  readonly panes: PaneState[];

  constructor(view: SessionView) {
    this.target = view.target;
    this.short = view.short;
    this.panes = view.panoramas.map((pane) => ({
      view: pane,
      draft: null,
      selectedProposal: null,
      serverBox: null,
      confirmedBoxId: null,
      dirty: false,
    }));
  }

  pane(index: number): PaneState {
    const pane = this.panes[index];
    if (!pane) {
      throw new Error(`no pane ${index}`);
    }
    return pane;
  }

  /** Seed the pane's draft from one of its proposals (replaces any previous
   * selection; at most one selected proposal per pane). */
  selectProposal(index: number, localId: number): void {
    const pane = this.pane(index);
    const proposal = pane.view.proposals.find((p) => p.local_id === localId);
    if (!proposal) {
      throw new Error(`pane ${index} has no proposal ${localId}`);
    }
    const [x_min, y_min, x_max, y_max] = proposal.box;
    pane.draft = { x_min, y_min, x_max, y_max, label: proposal.label };
    pane.selectedProposal = localId;
    pane.serverBox = null; // proposals are detector output, not store boxes
    pane.confirmedBoxId = null;
    pane.dirty = true;
  }

  /** Start a fresh draft box centered on the pane's marker. */
  startDraft(index: number, label = "object"): void {
    const pane = this.pane(index);
    const cx = pane.view.marker ? pane.view.marker.x : pane.view.width / 2;
    const cy = pane.view.marker ? pane.view.marker.y : pane.view.height / 2;
    const half = DEFAULT_DRAFT_SIZE / 2;
    pane.draft = {
      x_min: clamp(cx - half, 0, pane.view.width - 1),
      y_min: clamp(cy - DEFAULT_DRAFT_SIZE, 0, pane.view.height - 1),
      x_max: clamp(cx + half, 1, pane.view.width),
      y_max: clamp(cy, 1, pane.view.height),
      label,
    };
    pane.selectedProposal = null;
    pane.serverBox = null;
    pane.confirmedBoxId = null;
    pane.dirty = true;
  }

  nudge(index: number, dx: number, dy: number): void {
    const pane = this.pane(index);
    if (!pane.draft) return;
    const d = pane.draft;
    const w = pane.view.width;
    const h = pane.view.height;
    dx = clamp(dx, -d.x_min, w - d.x_max);
    dy = clamp(dy, -d.y_min, h - d.y_max);
    pane.draft = {
      ...d,
      x_min: d.x_min + dx,
      x_max: d.x_max + dx,
      y_min: d.y_min + dy,
      y_max: d.y_max + dy,
    };
    pane.dirty = true;
    pane.confirmedBoxId = null;
  }

  resize(index: number, dw: number, dh: number): void {
    const pane = this.pane(index);
    if (!pane.draft) return;
    const d = pane.draft;
    pane.draft = {
      ...d,
      x_max: clamp(d.x_max + dw, d.x_min + 1, pane.view.width),
      y_max: clamp(d.y_max + dh, d.y_min + 1, pane.view.height),
    };
    pane.dirty = true;
    pane.confirmedBoxId = null;
  }

  clearPane(index: number): void {
    const pane = this.pane(index);
    pane.draft = null;
    pane.selectedProposal = null;
    pane.serverBox = null;
    pane.confirmedBoxId = null;
    pane.dirty = false;
  }

  /** Record that the pane's draft now exists server-side at a revision. */
  markConfirmed(index: number, boxId: string, revision: number): void {
    const pane = this.pane(index);
    if (!pane.draft) {
      throw new Error(`pane ${index} has no draft to confirm`);
    }
    pane.serverBox = { boxId, revision };
    pane.confirmedBoxId = boxId;
    pane.dirty = false;
  }

  /** Adopt the store's current revision after a 409, keeping local edits. */
  applyConflict(index: number, actualRevision: number): void {
    const pane = this.pane(index);
    if (pane.serverBox) {
      pane.serverBox = { ...pane.serverBox, revision: actualRevision };
    }
  }

  dirtyPanes(): number[] {
    return this.panes.flatMap((p, i) => (p.dirty ? [i] : []));
  }

  /** Navigation away is blocked while any pane holds unsaved edits. */
  canNavigate(): boolean {
    return this.dirtyPanes().length === 0;
  }

  confirmedLinks(): IdentityLink[] {
    return this.panes.flatMap((p) =>
      p.confirmedBoxId
        ? [{ image_id: p.view.image_id, box_id: p.confirmedBoxId }]
        : [],
    );
  }

  /** Save is enabled once at least one pane holds a confirmed box. */
  canSave(): boolean {
    return this.confirmedLinks().length > 0;
  }

  buildIdentityPayload(instanceId?: string): {
    instance_id?: string;
    geo: GeoPoint;
    links: IdentityLink[];
    status: string;
  } {
    const links = this.confirmedLinks();
    if (links.length === 0) {
      throw new Error("no confirmed boxes to link");
    }
    return {
      ...(instanceId ? { instance_id: instanceId } : {}),
      geo: this.target,
      links,
      status: links.length === this.panes.length ? "complete" : "open",
    };
  }
}

function clamp(value: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, value));
}
