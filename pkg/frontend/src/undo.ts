// Undo = restore the exact mask bytes from before a stroke, so we snapshot
// the whole buffer per stroke rather than replaying stroke geometry
// (replay would have to reproduce eraser overlaps in order; bytes can't lie).

export class UndoStack {
  private snapshots: Uint8Array[] = [];

  constructor(readonly limit: number = 64) {
    if (limit < 1) throw new Error("undo limit must be >= 1");
  }

  get depth(): number {
    return this.snapshots.length;
  }

  /** Call before mutating the mask. Oldest snapshot drops past the limit. */
  push(mask: Uint8Array) {
    this.snapshots.push(mask.slice());
    if (this.snapshots.length > this.limit) {
      this.snapshots.shift();
    }
  }

  /** Pops the most recent snapshot, or null when there is nothing to undo. */
  pop(): Uint8Array | null {
    return this.snapshots.pop() ?? null;
  }

  clear() {
    this.snapshots = [];
  }
}
