import { describe, expect, it } from "vitest";

import { UiSession } from "../src/session.js";
import type { SessionView } from "../src/types.js";

function view(): SessionView {
  return {
    target: { lat: 34.1478, lng: -118.1445 },
    short: false,
    panoramas: [0, 1, 2, 3].map((i) => ({
      image_id: `pano_${i}`,
      width: 2048,
      height: 1024,
      marker: { x: 1000 + i, y: 600 + i },
      marker_radius_px: 150,
      proposals: [
        { local_id: 7, box: [980, 540, 1060, 660] as [number, number, number, number],
          label: "tree", score: 0.9 },
        { local_id: 3, box: [200, 600, 260, 700] as [number, number, number, number],
          label: "tree", score: 0.4 },
      ],
    })),
  };
}

describe("UiSession", () => {
  it("keeps backend markers verbatim", () => {
    const v = view();
    const session = new UiSession(v);
    session.panes.forEach((pane, i) => {
      expect(pane.view.marker).toEqual(v.panoramas[i]!.marker);
    });
  });

  it("selects at most one proposal per pane", () => {
    const session = new UiSession(view());
    session.selectProposal(0, 7);
    expect(session.pane(0).selectedProposal).toBe(7);
    session.selectProposal(0, 3);
    expect(session.pane(0).selectedProposal).toBe(3);
    expect(session.pane(0).draft).toEqual({
      x_min: 200, y_min: 600, x_max: 260, y_max: 700, label: "tree",
    });
    expect(session.pane(1).selectedProposal).toBeNull();
  });

  it("rejects unknown proposals", () => {
    const session = new UiSession(view());
    expect(() => session.selectProposal(0, 99)).toThrow();
  });

  it("starts a draft centered on the marker", () => {
    const session = new UiSession(view());
    session.startDraft(2);
    const d = session.pane(2).draft!;
    expect((d.x_min + d.x_max) / 2).toBeCloseTo(1002, 6);
    expect(d.y_max).toBeCloseTo(602, 6);
  });

  it("nudge and resize stay inside the image and mark the pane dirty", () => {
    const session = new UiSession(view());
    session.selectProposal(0, 7);
    session.nudge(0, -5000, 0);
    expect(session.pane(0).draft!.x_min).toBe(0);
    session.resize(0, 100000, 0);
    expect(session.pane(0).draft!.x_max).toBe(2048);
    expect(session.pane(0).dirty).toBe(true);
    expect(session.canNavigate()).toBe(false);
    expect(session.dirtyPanes()).toEqual([0]);
  });

  it("editing after confirmation invalidates the confirmation", () => {
    const session = new UiSession(view());
    session.selectProposal(0, 7);
    session.markConfirmed(0, "b000001", 1);
    expect(session.pane(0).confirmedBoxId).toBe("b000001");
    expect(session.canNavigate()).toBe(true);
    session.nudge(0, 1, 0);
    expect(session.pane(0).confirmedBoxId).toBeNull();
    expect(session.canNavigate()).toBe(false);
    // the persisted identity of the box survives the edit, so the next save
    // is a revision-checked update rather than a duplicate create
    expect(session.pane(0).serverBox).toEqual({ boxId: "b000001", revision: 1 });
  });

  it("applyConflict adopts the store revision and keeps the draft", () => {
    const session = new UiSession(view());
    session.selectProposal(0, 7);
    session.markConfirmed(0, "b000001", 1);
    session.nudge(0, 2, 0);
    const draft = session.pane(0).draft;
    session.applyConflict(0, 4);
    expect(session.pane(0).serverBox).toEqual({ boxId: "b000001", revision: 4 });
    expect(session.pane(0).draft).toEqual(draft);
  });

  it("reseeding from a proposal detaches the server box", () => {
    const session = new UiSession(view());
    session.selectProposal(0, 7);
    session.markConfirmed(0, "b000001", 1);
    session.selectProposal(0, 3);
    expect(session.pane(0).serverBox).toBeNull();
  });

  it("assembles the identity payload from confirmed panes only", () => {
    const session = new UiSession(view());
    expect(session.canSave()).toBe(false);
    expect(() => session.buildIdentityPayload()).toThrow();
    for (let i = 0; i < 4; i++) {
      session.selectProposal(i, 7);
      session.markConfirmed(i, `b00000${i}`, 1);
    }
    const payload = session.buildIdentityPayload("tree_42");
    expect(payload.instance_id).toBe("tree_42");
    expect(payload.geo).toEqual({ lat: 34.1478, lng: -118.1445 });
    expect(payload.links).toHaveLength(4);
    expect(payload.links[0]).toEqual({ image_id: "pano_0", box_id: "b000000" });
    expect(payload.status).toBe("complete");
  });

  it("partial confirmation yields an open identity", () => {
    const session = new UiSession(view());
    session.selectProposal(1, 7);
    session.markConfirmed(1, "b000009", 1);
    const payload = session.buildIdentityPayload();
    expect(payload.links).toHaveLength(1);
    expect(payload.status).toBe("open");
  });

  it("clearPane discards drafts and dirtiness", () => {
    const session = new UiSession(view());
    session.selectProposal(0, 7);
    session.clearPane(0);
    expect(session.pane(0).draft).toBeNull();
    expect(session.canNavigate()).toBe(true);
  });
});
