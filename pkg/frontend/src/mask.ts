// Binary mask raster at native image resolution. 255 marks pixels the
// service should fill, 0 marks pixels to keep — matching the server's
// ">= 128 means missing" threshold exactly, so we only ever write 0 or 255.

export interface Point {
  x: number;
  y: number;
}

export interface Stroke {
  tool: "brush" | "eraser";
  radius: number;
  points: Point[];
}

export class MaskRaster {
  readonly width: number;
  readonly height: number;
  data: Uint8Array;

  constructor(width: number, height: number, data?: Uint8Array) {
    if (width <= 0 || height <= 0 || !Number.isInteger(width) || !Number.isInteger(height)) {
      throw new Error(`bad mask size ${width}x${height}`);
    }
    if (data && data.length !== width * height) {
      throw new Error(`mask buffer length ${data.length} != ${width}x${height}`);
    }
    this.width = width;
    this.height = height;
    this.data = data ?? new Uint8Array(width * height);
  }

  clone(): MaskRaster {
    return new MaskRaster(this.width, this.height, this.data.slice());
  }

  clear() {
    this.data.fill(0);
  }

  /** Number of marked (to-fill) pixels. */
  count(): number {
    let n = 0;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i]) n++;
    }
    return n;
  }

  isEmpty(): boolean {
    return this.count() === 0;
  }

  equals(other: MaskRaster): boolean {
    if (other.width !== this.width || other.height !== this.height) return false;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] !== other.data[i]) return false;
    }
    return true;
  }

  /** Stamp a filled circle. Out-of-bounds parts are clipped, never an error. */
  stamp(cx: number, cy: number, radius: number, value: 0 | 255) {
    const r = Math.max(0, radius);
    const x0 = Math.max(0, Math.floor(cx - r));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + r));
    const y0 = Math.max(0, Math.floor(cy - r));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + r));
    const r2 = r * r;
    for (let y = y0; y <= y1; y++) {
      const dy = y - cy;
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        if (dx * dx + dy * dy <= r2) {
          this.data[y * this.width + x] = value;
        }
      }
    }
  }

  /**
   * Stamp along the stroke's polyline. Consecutive points are interpolated
   * at <= 1px spacing so a fast drag leaves no gaps.
   */
  applyStroke(stroke: Stroke) {
    const value = stroke.tool === "brush" ? 255 : 0;
    const pts = stroke.points;
    if (pts.length === 0) return;
    this.stamp(pts[0].x, pts[0].y, stroke.radius, value);
    for (let i = 1; i < pts.length; i++) {
      const a = pts[i - 1];
      const b = pts[i];
      const steps = Math.max(1, Math.ceil(Math.hypot(b.x - a.x, b.y - a.y)));
      for (let s = 1; s <= steps; s++) {
        const t = s / steps;
        this.stamp(a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t, stroke.radius, value);
      }
    }
  }
}
