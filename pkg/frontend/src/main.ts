import { ApiClient } from "./api.js";
import {
  CompareSlider,
  LossChart,
  drawAnchors,
  drawImageBase64,
  drawMaskOverlay,
  drawPairs,
  encodeGrayPng,
  makeScale,
} from "./dom.js";
import { parseField } from "./params.js";
import { connect, UiSession } from "./session.js";
import { DEFAULT_PARAMS, DragUiParams, ProgressRecord } from "./types.js";

const CANVAS_SIZE = 320;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

type Tool = "points" | "mask" | "erase";

async function boot() {
  const client = new ApiClient("");
  const status = el<HTMLElement>("status");
  let session: UiSession;

  const canvas = el<HTMLCanvasElement>("canvas");
  canvas.width = canvas.height = CANVAS_SIZE;
  const ctx = canvas.getContext("2d")!;
  const lossChart = new LossChart(el<HTMLCanvasElement>("loss-chart"));
  const slider = new CompareSlider(el<HTMLCanvasElement>("compare"));
  const runBtn = el<HTMLButtonElement>("run");
  const sampleBtn = el<HTMLButtonElement>("sample");
  const uploadInput = el<HTMLInputElement>("upload");
  const continueBtn = el<HTMLButtonElement>("continue");
  const downloadLink = el<HTMLAnchorElement>("download");
  const metrics = el<HTMLElement>("metrics");
  let tool: Tool = "points";
  let painting = false;

  const say = (msg: string, isError = false) => {
    status.textContent = msg;
    status.className = isError ? "error" : "";
  };

  const redraw = async (anchors?: [number, number][]) => {
    if (!session.sourcePngBase64) return;
    await drawImageBase64(ctx, session.sourcePngBase64, CANVAS_SIZE);
    const scale = makeScale(session.health.image_size, CANVAS_SIZE);
    if (!session.mask.isEmpty()) drawMaskOverlay(ctx, session.mask, scale);
    drawPairs(ctx, session.pairs, session.pendingAnchor, scale);
    if (anchors) drawAnchors(ctx, anchors, scale);
  };

  session = await connect(client, {
    onImage: () => {
      lossChart.reset();
      metrics.textContent = "";
      el<HTMLElement>("result-panel").hidden = true;
      void redraw();
    },
    onPairs: () => void redraw(),
    onProgress: (record: ProgressRecord) => {
      lossChart.push(record);
      say(`state ${record.state} · iteration ${record.iteration}`);
      void redraw(record.anchors);
    },
    onRunState: (state) => {
      runBtn.disabled = state === "running" || !session.canRun;
    },
    onResult: async (result) => {
      el<HTMLElement>("result-panel").hidden = false;
      await slider.setImages(session.sourcePngBase64, result.image_png_base64);
      metrics.textContent =
        `status ${result.status} · mean distance ${result.md.toFixed(2)} px` +
        ` · fidelity MSE ${result.fidelity.toFixed(4)}`;
      downloadLink.href = `data:image/png;base64,${result.image_png_base64}`;
      downloadLink.download = "edited.png";
      continueBtn.disabled = false;
    },
  });
  say(`model ${session.health.model} · ${session.health.image_size} px · ` +
      `${session.health.K} denoising steps`);

  // parameter form
  const form = el<HTMLFormElement>("params");
  for (const [name, value] of Object.entries(DEFAULT_PARAMS)) {
    const input = form.elements.namedItem(name) as HTMLInputElement | null;
    if (!input) continue;
    if (typeof value === "boolean") input.checked = value;
    else input.value = String(value);
  }
  form.addEventListener("change", () => {
    const next: Record<string, unknown> = { ...session.params };
    for (const name of Object.keys(DEFAULT_PARAMS) as (keyof DragUiParams)[]) {
      const input = form.elements.namedItem(name) as HTMLInputElement | null;
      if (!input) continue;
      next[name] = typeof DEFAULT_PARAMS[name] === "boolean"
        ? input.checked
        : parseField(name, input.value);
    }
    session.params = next as unknown as DragUiParams;
  });

  // tools
  for (const id of ["tool-points", "tool-mask", "tool-erase"] as const) {
    el<HTMLInputElement>(id).addEventListener("change", () => {
      tool = id.replace("tool-", "") as Tool;
    });
  }
  el<HTMLButtonElement>("clear-pairs").addEventListener("click", () => {
    session.clearPairs();
  });
  el<HTMLButtonElement>("clear-mask").addEventListener("click", () => {
    session.mask.clear();
    void redraw();
  });

  const paintAt = (e: PointerEvent) => {
    const scale = makeScale(session.health.image_size, CANVAS_SIZE);
    session.mask.stroke(scale.toImage(e), 1.6, tool === "erase");
    void redraw();
  };
  canvas.addEventListener("pointerdown", (e) => {
    if (tool === "points") {
      const scale = makeScale(session.health.image_size, CANVAS_SIZE);
      const warning = session.clickAt(scale.toImage(e));
      if (warning) say(warning, true);
      runBtn.disabled = !session.canRun;
    } else {
      painting = true;
      paintAt(e);
    }
  });
  canvas.addEventListener("pointermove", (e) => painting && paintAt(e));
  window.addEventListener("pointerup", () => (painting = false));

  // image sources
  sampleBtn.addEventListener("click", async () => {
    try {
      say("sampling…");
      await session.sample(Math.floor(Math.random() * 1e9));
      say("sampled; place anchor and objective points");
      runBtn.disabled = !session.canRun;
      continueBtn.disabled = true;
    } catch (err) {
      say(String(err), true);
    }
  });
  uploadInput.addEventListener("change", async () => {
    const file = uploadInput.files?.[0];
    if (!file) return;
    const bytes = new Uint8Array(await file.arrayBuffer());
    let binary = "";
    bytes.forEach((b) => (binary += String.fromCharCode(b)));
    try {
      await session.loadPng(btoa(binary));
      say("image loaded");
      continueBtn.disabled = true;
    } catch (err) {
      say(String(err), true);
    }
  });
  continueBtn.addEventListener("click", async () => {
    try {
      await session.continueFromResult();
      say("continuing from the edited image");
    } catch (err) {
      say(String(err), true);
    }
  });

  runBtn.addEventListener("click", async () => {
    try {
      runBtn.disabled = true;
      say("running…");
      const result = await session.run(encodeGrayPng);
      say(`finished: ${result.status}`);
    } catch (err) {
      say(String(err), true); // server errors surface verbatim; run again to retry
    } finally {
      runBtn.disabled = !session.canRun;
    }
  });
}

boot().catch((err) => {
  document.getElementById("status")!.textContent = String(err);
});
