// Thin client for the inference service. All pixels come from the server;
// the only client-side image logic is mask editing and display compositing.

export interface InpaintRequest {
  image: string; // base64 PNG
  mask: string; // base64 PNG, grayscale, >= 128 marks missing
  samples: number;
  seed?: number;
  composited?: boolean;
}

export interface ModelInfo {
  mode: "deterministic" | "probabilistic";
  levels: number;
  size_multiple: number;
  trained_size: number;
  checkpoint: string;
  version: string;
}

export interface InpaintResponse {
  images: string[];
  seeds: number[];
  model_info: { checkpoint: string; mode: string };
  warning?: string;
}

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }
}

/**
 * Pre-flight check for a submit. Returns a user-facing message when the
 * request would be pointless or rejected, null when it is good to go.
 */
export function validateSubmit(opts: {
  maskedPixels: number;
  samples: number;
  width: number;
  height: number;
  sizeMultiple: number;
}): string | null {
  if (opts.maskedPixels === 0) return "draw a mask first";
  if (!Number.isInteger(opts.samples) || opts.samples < 1 || opts.samples > 16) {
    return "samples must be between 1 and 16";
  }
  if (opts.width % opts.sizeMultiple || opts.height % opts.sizeMultiple) {
    return `image size must be a multiple of ${opts.sizeMultiple}, got ${opts.width}x${opts.height}`;
  }
  return null;
}

export function buildRequest(
  imagePng: string,
  maskPng: string,
  samples: number,
  seed?: number,
): InpaintRequest {
  const req: InpaintRequest = { image: imagePng, mask: maskPng, samples };
  if (seed !== undefined && seed !== null) req.seed = seed;
  return req;
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/**
 * One in-flight inpaint request at a time: a new submit aborts the previous
 * one (cancel-and-replace), so a stale slow response can never overwrite a
 * newer gallery.
 */
export class InpaintClient {
  private inflight: AbortController | null = null;

  constructor(
    readonly baseUrl: string,
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  async health(): Promise<{ status: string; version: string }> {
    return this.getJson("/health");
  }

  async modelInfo(): Promise<ModelInfo> {
    return this.getJson("/model-info");
  }

  async inpaint(req: InpaintRequest): Promise<InpaintResponse> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    try {
      const res = await this.fetchImpl(this.baseUrl + "/inpaint", {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(req),
        signal: controller.signal,
      });
      if (!res.ok) {
        throw new ApiError(res.status, await readDetail(res));
      }
      return (await res.json()) as InpaintResponse;
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
  }

  cancel() {
    this.inflight?.abort();
    this.inflight = null;
  }

  private async getJson(path: string) {
    const res = await this.fetchImpl(this.baseUrl + path);
    if (!res.ok) {
      throw new ApiError(res.status, await readDetail(res));
    }
    return res.json();
  }
}

async function readDetail(res: Response): Promise<string> {
  const text = await res.text().catch(() => "");
  try {
    const body = JSON.parse(text);
    if (body && typeof body.detail === "string") return body.detail;
  } catch {
    // not JSON, fall through to the raw text
  }
  return text || `HTTP ${res.status}`;
}

export function isAbort(err: unknown): boolean {
  return err instanceof DOMException
    ? err.name === "AbortError"
    : err instanceof Error && err.name === "AbortError";
}
