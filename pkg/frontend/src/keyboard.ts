/** Keyboard-first box editing: arrows nudge the active draft, shift-arrows
 * resize it. Returns true when the key was consumed. */

import type { UiSession } from "./session.js";

export interface KeyInput {
  key: string;
  shiftKey: boolean;
}

const STEP = 1;
const FAST = 10;

export function handleKey(
  session: UiSession,
  paneIndex: number,
  input: KeyInput,
  fast = false,
): boolean {
  const step = fast ? FAST : STEP;
  const move = (dx: number, dy: number) => {
    if (input.shiftKey) {
      session.resize(paneIndex, dx, dy);
    } else {
      session.nudge(paneIndex, dx, dy);
    }
    return true;
  };
  switch (input.key) {
    case "ArrowLeft":
      return move(-step, 0);
    case "ArrowRight":
      return move(step, 0);
    case "ArrowUp":
      return move(0, -step);
    case "ArrowDown":
      return move(0, step);
    case "Escape":
      session.clearPane(paneIndex);
      return true;
    default:
      return false;
  }
}
