// Bounded undo/redo over layer snapshots: exact inverses by construction.

import { cloneLayers } from "./layers.js";
import { Layers } from "./types.js";

const DEFAULT_LIMIT = 64;

export class History {
  private undoStack: Layers[] = [];
  private redoStack: Layers[] = [];

  constructor(private limit: number = DEFAULT_LIMIT) {}

  canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  canRedo(): boolean {
    return this.redoStack.length > 0;
  }

  push(before: Layers): void {
    this.undoStack.push(cloneLayers(before));
    if (this.undoStack.length > this.limit) this.undoStack.shift();
    this.redoStack = [];
  }

  undo(current: Layers): Layers | null {
    const previous = this.undoStack.pop();
    if (!previous) return null;
    this.redoStack.push(cloneLayers(current));
    return previous;
  }

  redo(current: Layers): Layers | null {
    const next = this.redoStack.pop();
    if (!next) return null;
    this.undoStack.push(cloneLayers(current));
    return next;
  }

  depth(): { undo: number; redo: number } {
    return { undo: this.undoStack.length, redo: this.redoStack.length };
  }
}
