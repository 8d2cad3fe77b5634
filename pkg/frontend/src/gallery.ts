export interface Sample {
  png: string; // base64 PNG exactly as the service returned it
  seed: number;
}

/**
 * Results for the current (image, mask). Entries are replaced wholesale on
 * each response; pinned seeds persist across replacements so a good result
 * can be re-requested later (the service reproduces a seed byte-for-byte).
 */
export class Gallery {
  entries: Sample[] = [];
  private pins = new Set<number>();

  replace(images: string[], seeds: number[]) {
    if (images.length !== seeds.length) {
      throw new Error(`got ${images.length} images but ${seeds.length} seeds`);
    }
    this.entries = images.map((png, i) => ({ png, seed: seeds[i] }));
  }

  pin(seed: number) {
    this.pins.add(seed);
  }

  unpin(seed: number) {
    this.pins.delete(seed);
  }

  togglePin(seed: number) {
    if (this.pins.has(seed)) this.pins.delete(seed);
    else this.pins.add(seed);
  }

  isPinned(seed: number): boolean {
    return this.pins.has(seed);
  }

  pinnedSeeds(): number[] {
    return [...this.pins];
  }

  bySeed(seed: number): Sample | undefined {
    return this.entries.find((e) => e.seed === seed);
  }

  clear() {
    this.entries = [];
    // pins survive: they name seeds, not gallery slots
  }
}
