import { Client } from "./api.js";
import { renderTraceChart } from "./chart.js";
import { denormalize } from "./coords.js";
import { AdaptPanelController } from "./panel.js";
import { maskToRgba } from "./rle.js";
import { Sequencer, Store } from "./state.js";
import type { UiSessionState } from "./state.js";
import { ViewerController } from "./viewer.js";

/** DOM glue: everything testable lives in the imported modules. */

const SCALE = 8; // screen pixels per slice pixel

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function paintSlice(
  canvas: HTMLCanvasElement,
  img: HTMLImageElement,
  state: UiSessionState,
  which: "mask" | "baseMask",
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (img.complete && img.naturalWidth > 0) {
    ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
  }
  const mask = state[which];
  if (mask && state.maskShape) {
    const [h, w] = state.maskShape;
    const overlay = new ImageData(maskToRgba(mask), w, h);
    const off = document.createElement("canvas");
    off.width = w;
    off.height = h;
    off.getContext("2d")?.putImageData(overlay, 0, 0);
    ctx.drawImage(off, 0, 0, canvas.width, canvas.height);
  }
  if (which === "mask" && state.volume) {
    const [h, w] = state.volume.shape;
    for (const p of state.points) {
      const { col, row } = denormalize(p, w, h);
      ctx.fillStyle = p.sign === 1 ? "#2ecc40" : "#ff4136";
      ctx.beginPath();
      ctx.arc((col + 0.5) * SCALE, (row + 0.5) * SCALE, 3, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}

async function boot(): Promise<void> {
  const store = new Store();
  const client = new Client("");
  const viewer = new ViewerController(store, client, new Sequencer());
  const panel = new AdaptPanelController(store, client, () => viewer.refreshMask());

  const canvas = el<HTMLCanvasElement>("slice-canvas");
  const baseCanvas = el<HTMLCanvasElement>("base-canvas");
  const sliceImg = new Image();
  const volumeSel = el<HTMLSelectElement>("volume-select");
  const sliceInput = el<HTMLInputElement>("slice-input");
  const organSel = el<HTMLSelectElement>("organ-select");
  const statusLine = el<HTMLDivElement>("status");
  const metrics = el<HTMLDivElement>("metrics");
  const chartBox = el<HTMLDivElement>("chart-box");
  const adaptBtn = el<HTMLButtonElement>("adapt-btn");

  const volumes = await client.volumes();
  store.set({ volumes });
  for (const v of volumes) {
    const opt = document.createElement("option");
    opt.value = v.id;
    opt.textContent = `${v.id} (${v.n_slices} slices)`;
    volumeSel.appendChild(opt);
  }

  const sessionId = await client.openSession("model.ckpt");
  store.set({ sessionId });

  function selectVolume(id: string): void {
    const vol = store.state.volumes.find((v) => v.id === id) ?? null;
    store.set({ volume: vol, baseMask: null });
    viewer.selectSlice(0);
    sliceInput.value = "0";
    organSel.replaceChildren();
    if (vol) {
      sliceInput.max = String(vol.n_slices - 1);
      const [h, w] = vol.shape;
      canvas.width = w * SCALE;
      canvas.height = h * SCALE;
      baseCanvas.width = w * SCALE;
      baseCanvas.height = h * SCALE;
      for (const organ of vol.organs) {
        const opt = document.createElement("option");
        opt.value = organ;
        opt.textContent = organ;
        organSel.appendChild(opt);
      }
      loadSlice();
    }
  }

  function loadSlice(): void {
    const vol = store.state.volume;
    if (!vol) return;
    sliceImg.onload = () => repaint(store.state);
    sliceImg.src = client.sliceUrl(vol.id, store.state.slice);
  }

  function repaint(state: UiSessionState): void {
    paintSlice(canvas, sliceImg, state, "mask");
    paintSlice(baseCanvas, sliceImg, state, "baseMask");
    statusLine.textContent =
      panel.busyStatus ??
      state.error ??
      (state.adapting ? "adapting..." : "ready");
    statusLine.classList.toggle("error", state.error !== null);
    adaptBtn.disabled = panel.disabled;
    const parts: string[] = [];
    if (state.dsc !== null) parts.push(`dsc ${state.dsc.toFixed(3)}`);
    if (state.dscBefore !== null && state.dscAfter !== null) {
      parts.push(
        `adapt dsc ${state.dscBefore.toFixed(3)} -> ${state.dscAfter.toFixed(3)}`,
      );
    }
    metrics.textContent = parts.join("  |  ");
    chartBox.replaceChildren(renderTraceChart(document, state.lossTrace));
  }

  store.subscribe(repaint);

  volumeSel.addEventListener("change", () => selectVolume(volumeSel.value));
  sliceInput.addEventListener("change", () => {
    viewer.selectSlice(Number(sliceInput.value));
    loadSlice();
  });
  el<HTMLButtonElement>("clear-btn").addEventListener("click", () => {
    viewer.clearPoints();
  });
  adaptBtn.addEventListener("click", () => {
    void panel.run({
      organ: organSel.value,
      chunk: Number(el<HTMLInputElement>("chunk-input").value),
      steps: Number(el<HTMLInputElement>("steps-input").value),
      alpha: Number(el<HTMLInputElement>("alpha-input").value),
      seed: Number(el<HTMLInputElement>("seed-input").value),
    });
  });

  viewer.attach(canvas);
  const vol0 = volumes[0];
  if (vol0) {
    volumeSel.value = vol0.id;
    selectVolume(vol0.id);
  }
}

void boot().catch((err) => {
  const status = document.getElementById("status");
  if (status) {
    status.textContent = `failed to start: ${err}`;
    status.classList.add("error");
  }
});
