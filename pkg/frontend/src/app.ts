import { MaskRaster, Stroke } from "./mask.js";
import { UndoStack } from "./undo.js";
import { Gallery } from "./gallery.js";
import { InpaintClient, validateSubmit, buildRequest, isAbort, ModelInfo } from "./api.js";

const $ = (id: string) => document.getElementById(id)!;

const canvas = $("canvas") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const fileInput = $("file") as HTMLInputElement;
const brushBtn = $("brush") as HTMLButtonElement;
const eraserBtn = $("eraser") as HTMLButtonElement;
const radiusInput = $("radius") as HTMLInputElement;
const undoBtn = $("undo") as HTMLButtonElement;
const clearBtn = $("clear") as HTMLButtonElement;
const samplesInput = $("samples") as HTMLInputElement;
const seedInput = $("seed") as HTMLInputElement;
const submitBtn = $("submit") as HTMLButtonElement;
const statusLine = $("status");
const galleryDiv = $("gallery");
const compareDiv = $("compare");
const modelLine = $("model-line");

const client = new InpaintClient("");
const gallery = new Gallery();
const undoStack = new UndoStack();

let baseImage: HTMLImageElement | null = null;
let basePng = ""; // base64 of the current base image, byte-exact
let mask: MaskRaster | null = null;
let tool: "brush" | "eraser" = "brush";
let stroke: Stroke | null = null;
let info: ModelInfo | null = null;
let selected = new Set<number>(); // seeds picked for the compare view

client
  .modelInfo()
  .then((m) => {
    info = m;
    modelLine.textContent =
      `${m.mode} model, ${m.levels} levels, size multiple ${m.size_multiple}, ` +
      `checkpoint ${m.checkpoint}`;
  })
  .catch((err) => {
    modelLine.textContent = `service not ready: ${err.message}`;
  });

function setStatus(text: string, isError = false) {
  statusLine.textContent = text;
  statusLine.className = isError ? "error" : "";
}

// ---- image loading ----------------------------------------------------

fileInput.addEventListener("change", () => {
  const file = fileInput.files?.[0];
  if (!file) return;
  const reader = new FileReader();
  reader.onload = () => {
    const dataUrl = reader.result as string;
    adoptBase(dataUrl.slice(dataUrl.indexOf(",") + 1));
  };
  reader.readAsDataURL(file);
});

function adoptBase(png: string) {
  const img = new Image();
  img.onload = () => {
    baseImage = img;
    basePng = png;
    canvas.width = img.naturalWidth;
    canvas.height = img.naturalHeight;
    mask = new MaskRaster(img.naturalWidth, img.naturalHeight);
    undoStack.clear();
    selected.clear();
    redraw();
    const mult = info?.size_multiple ?? 1;
    if (img.naturalWidth % mult || img.naturalHeight % mult) {
      setStatus(`image size must be a multiple of ${mult}`, true);
    } else {
      setStatus(`${img.naturalWidth}x${img.naturalHeight} loaded — brush over the region to replace`);
    }
  };
  img.onerror = () => setStatus("could not decode that file", true);
  img.src = "data:image/png;base64," + png;
}

// ---- mask editing ------------------------------------------------------

function canvasPoint(ev: PointerEvent) {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) / rect.width) * canvas.width,
    y: ((ev.clientY - rect.top) / rect.height) * canvas.height,
  };
}

canvas.addEventListener("pointerdown", (ev) => {
  if (!mask) return;
  canvas.setPointerCapture(ev.pointerId);
  undoStack.push(mask.data); // snapshot before the stroke mutates anything
  stroke = { tool, radius: Number(radiusInput.value), points: [canvasPoint(ev)] };
  mask.applyStroke({ ...stroke, points: stroke.points.slice(-1) });
  redraw();
});

canvas.addEventListener("pointermove", (ev) => {
  if (!mask || !stroke) return;
  const p = canvasPoint(ev);
  const prev = stroke.points[stroke.points.length - 1];
  stroke.points.push(p);
  mask.applyStroke({ ...stroke, points: [prev, p] });
  redraw();
});

canvas.addEventListener("pointerup", () => {
  stroke = null;
});

brushBtn.addEventListener("click", () => {
  tool = "brush";
  brushBtn.classList.add("active");
  eraserBtn.classList.remove("active");
});

eraserBtn.addEventListener("click", () => {
  tool = "eraser";
  eraserBtn.classList.add("active");
  brushBtn.classList.remove("active");
});

undoBtn.addEventListener("click", () => {
  if (!mask) return;
  const prev = undoStack.pop();
  if (prev) {
    mask.data = prev;
    redraw();
  }
});

clearBtn.addEventListener("click", () => {
  if (!mask) return;
  undoStack.push(mask.data);
  mask.clear();
  redraw();
});

function redraw() {
  if (!baseImage || !mask) return;
  ctx.drawImage(baseImage, 0, 0);
  const overlay = ctx.createImageData(canvas.width, canvas.height);
  for (let i = 0; i < mask.data.length; i++) {
    if (mask.data[i]) {
      overlay.data[i * 4] = 255; // translucent red marks the hole
      overlay.data[i * 4 + 3] = 110;
    }
  }
  const off = document.createElement("canvas");
  off.width = canvas.width;
  off.height = canvas.height;
  off.getContext("2d")!.putImageData(overlay, 0, 0);
  ctx.drawImage(off, 0, 0);
}

function maskToPng(): Promise<string> {
  const m = mask!;
  const off = document.createElement("canvas");
  off.width = m.width;
  off.height = m.height;
  const octx = off.getContext("2d")!;
  const img = octx.createImageData(m.width, m.height);
  for (let i = 0; i < m.data.length; i++) {
    const v = m.data[i];
    img.data[i * 4] = v;
    img.data[i * 4 + 1] = v;
    img.data[i * 4 + 2] = v;
    img.data[i * 4 + 3] = 255;
  }
  octx.putImageData(img, 0, 0);
  return new Promise((resolve, reject) => {
    off.toBlob((blob) => {
      if (!blob) return reject(new Error("mask encode failed"));
      const reader = new FileReader();
      reader.onload = () => {
        const url = reader.result as string;
        resolve(url.slice(url.indexOf(",") + 1));
      };
      reader.readAsDataURL(blob);
    }, "image/png");
  });
}

// ---- inpaint round trip -------------------------------------------------

submitBtn.addEventListener("click", async () => {
  if (!mask || !basePng) {
    setStatus("load an image first", true);
    return;
  }
  const samples = Number(samplesInput.value);
  const problem = validateSubmit({
    maskedPixels: mask.count(),
    samples,
    width: mask.width,
    height: mask.height,
    sizeMultiple: info?.size_multiple ?? 1,
  });
  if (problem) {
    setStatus(problem, true);
    return;
  }
  const seedText = seedInput.value.trim();
  const seed = seedText === "" ? undefined : Number(seedText);
  setStatus("inpainting…");
  submitBtn.disabled = true;
  try {
    const maskPng = await maskToPng();
    const res = await client.inpaint(buildRequest(basePng, maskPng, samples, seed));
    gallery.replace(res.images, res.seeds);
    selected.clear();
    renderGallery();
    setStatus(res.warning ?? `${res.images.length} sample(s), seeds ${res.seeds.join(", ")}`);
  } catch (err: any) {
    if (!isAbort(err)) setStatus(err.message, true);
  } finally {
    submitBtn.disabled = false;
  }
});

// ---- gallery + compare ---------------------------------------------------

function renderGallery() {
  galleryDiv.innerHTML = "";
  for (const entry of gallery.entries) {
    const card = document.createElement("div");
    card.className = "card";

    const img = document.createElement("img");
    img.src = "data:image/png;base64," + entry.png;
    img.title = `seed ${entry.seed}`;
    img.addEventListener("click", () => {
      if (selected.has(entry.seed)) selected.delete(entry.seed);
      else selected.add(entry.seed);
      renderGallery();
    });
    if (selected.has(entry.seed)) card.classList.add("selected");

    const label = document.createElement("div");
    label.className = "seed";
    label.textContent = `seed ${entry.seed}`;

    const pin = document.createElement("button");
    pin.textContent = gallery.isPinned(entry.seed) ? "unpin" : "pin";
    pin.addEventListener("click", () => {
      gallery.togglePin(entry.seed);
      seedInput.value = gallery.isPinned(entry.seed) ? String(entry.seed) : "";
      renderGallery();
    });

    const adopt = document.createElement("button");
    adopt.textContent = "use as base";
    adopt.addEventListener("click", () => adoptBase(entry.png));

    const save = document.createElement("button");
    save.textContent = "download";
    save.addEventListener("click", () => downloadPng(entry));

    card.append(img, label, pin, adopt, save);
    galleryDiv.append(card);
  }
  renderCompare();
}

function renderCompare() {
  compareDiv.innerHTML = "";
  if (selected.size === 0) return;
  const panels: { title: string; png: string }[] = [{ title: "original", png: basePng }];
  for (const seed of selected) {
    const entry = gallery.bySeed(seed);
    if (entry) panels.push({ title: `seed ${entry.seed}`, png: entry.png });
  }
  for (const p of panels) {
    const fig = document.createElement("figure");
    const img = document.createElement("img");
    img.src = "data:image/png;base64," + p.png;
    const cap = document.createElement("figcaption");
    cap.textContent = p.title;
    fig.append(img, cap);
    compareDiv.append(fig);
  }
}

function downloadPng(entry: { png: string; seed: number }) {
  // decode the exact bytes the service sent; no re-encode
  const raw = atob(entry.png);
  const bytes = new Uint8Array(raw.length);
  for (let i = 0; i < raw.length; i++) bytes[i] = raw.charCodeAt(i);
  const url = URL.createObjectURL(new Blob([bytes], { type: "image/png" }));
  const a = document.createElement("a");
  a.href = url;
  a.download = `inpaint-seed-${entry.seed}.png`;
  a.click();
  URL.revokeObjectURL(url);
}
