/** Wires the controls, the orbit canvas, and the render loop together.
 *  All hair math happens server-side; this file only moves state. */

import { ApiError, Client, WindParams } from "./api.js";
import { makeSelect, makeSlider, makeToggle, errorBanner } from "./controls.js";
import { rateLimit } from "./debounce.js";
import { orbitDrag, orbitZoom, toCameraSpec } from "./orbit.js";
import { initialState, isIdentityEdit, setHaircut, setWind } from "./state.js";
import { drawPng, drawPolylines, drawSplit } from "./viewer.js";

const RENDER_INTERVAL_MS = 200; // <= 5 render requests per second

const WIND_DIRECTIONS: Record<string, [number, number, number]> = {
  "+x": [1, 0, 0],
  "-x": [-1, 0, 0],
  "+y": [0, 1, 0],
  "-y": [0, -1, 0],
};

export async function boot(root: HTMLElement,
                           baseUrl = "http://127.0.0.1:8649"):
    Promise<void> {
  const client = new Client(baseUrl);
  const state = initialState();
  const banner = errorBanner();

  const view = document.createElement("canvas");
  view.className = "viewport";
  const preview = document.createElement("canvas");
  preview.className = "latent-preview";
  preview.width = 240;
  preview.height = 240;
  const panel = document.createElement("div");
  panel.className = "panel";
  root.append(banner.el, view, panel, preview);

  let scene;
  try {
    scene = await client.scene();
  } catch (err) {
    banner.show(err instanceof Error ? err.message : String(err));
    return;
  }
  view.width = scene.image_size * 3;
  view.height = scene.image_size * 3;
  const center = [0, 0, 0.05];

  let inflight: AbortController | null = null;

  async function renderNow(): Promise<void> {
    if (inflight) inflight.abort(); // newest input wins
    inflight = new AbortController();
    const signal = inflight.signal;
    try {
      if (state.compare) {
        const [base, edited] = await renderCompare(client, state, signal);
        const [bl, bt] = await Promise.all([
          createImageBitmap(new Blob([base], { type: "image/png" })),
          createImageBitmap(new Blob([edited], { type: "image/png" })),
        ]);
        drawSplit(view, bl, bt);
        bl.close();
        bt.close();
      } else {
        const png = await client.render(toCameraSpec(state.orbit), signal);
        await drawPng(view, png);
      }
      state.lastRenderMs = Date.now();
      banner.hide();
    } catch (err) {
      if (err instanceof DOMException && err.name === "AbortError") return;
      banner.show(err instanceof ApiError ? err.message : String(err));
    }
  }

  const renderLimited = rateLimit(() => {
    void renderNow();
  }, RENDER_INTERVAL_MS);

  // --- orbit drag ---
  let dragging = false;
  let last: [number, number] = [0, 0];
  view.addEventListener("pointerdown", (e) => {
    dragging = true;
    last = [e.clientX, e.clientY];
    view.setPointerCapture(e.pointerId);
  });
  view.addEventListener("pointermove", (e) => {
    if (!dragging) return;
    state.orbit = orbitDrag(state.orbit, e.clientX - last[0],
                            e.clientY - last[1]);
    last = [e.clientX, e.clientY];
    renderLimited();
  });
  view.addEventListener("pointerup", () => {
    dragging = false;
    renderLimited.flush();
  });
  view.addEventListener("wheel", (e) => {
    e.preventDefault();
    state.orbit = orbitZoom(state.orbit, e.deltaY > 0 ? 1.1 : 1 / 1.1);
    renderLimited();
  });

  // --- haircut ---
  panel.append(makeSlider({
    label: "haircut", min: 0, max: 1, step: 0.01, value: 1,
    onInput: (v) => {
      void applyEdit(() => {
        Object.assign(state, setHaircut(state, v));
        return client.editHaircut(v);
      });
    },
  }));

  // --- wind ---
  let windDir: [number, number, number] = WIND_DIRECTIONS["+x"];
  let windAmp = 0;
  let windPhase = 0;
  const pushWind = () => {
    const wind: WindParams = {
      direction: windDir, amplitude: windAmp, phase: windPhase,
    };
    void applyEdit(() => {
      Object.assign(state, setWind(state, windAmp === 0 ? null : wind));
      return client.editWind(wind);
    });
  };
  panel.append(makeSelect("wind direction", Object.keys(WIND_DIRECTIONS),
                          (v) => {
                            windDir = WIND_DIRECTIONS[v];
                            pushWind();
                          }));
  panel.append(makeSlider({
    label: "wind amplitude", min: 0, max: 0.01, step: 0.0005, value: 0,
    onInput: (v) => {
      windAmp = v;
      pushWind();
    },
  }));
  panel.append(makeSlider({
    label: "wind phase", min: 0, max: 6.283, step: 0.05, value: 0,
    onInput: (v) => {
      windPhase = v; // scrubbing the phase animates the sway
      pushWind();
    },
  }));

  // --- compare split view ---
  panel.append(makeToggle("compare base | edited", (on) => {
    state.compare = on;
    renderLimited();
  }));

  // --- latent probe ---
  const latentValue = { dim: 0, value: 0 };
  panel.append(makeSlider({
    label: "latent dim", min: 0, max: scene.latent_dim - 1, step: 1,
    value: 0,
    onInput: (v) => {
      latentValue.dim = Math.round(v);
      void probeLatent();
    },
  }));
  panel.append(makeSlider({
    label: "latent value", min: -2, max: 2, step: 0.05, value: 0,
    onInput: (v) => {
      latentValue.value = v;
      void probeLatent();
    },
  }));
  preview.addEventListener("pointerdown", (e) => {
    const rect = preview.getBoundingClientRect();
    state.selectedUV = [
      (e.clientX - rect.left) / rect.width,
      (e.clientY - rect.top) / rect.height,
    ];
    void probeLatent();
  });

  let backdropLines: number[][][] = [];
  async function probeLatent(): Promise<void> {
    try {
      const out = await client.latent(state.selectedUV, latentValue.dim,
                                      latentValue.value);
      if (backdropLines.length === 0) {
        backdropLines = (await client.strands(8)).strands;
      }
      drawPolylines(preview, state.orbit, center, backdropLines,
                    out.polyline);
      banner.hide();
    } catch (err) {
      banner.show(err instanceof ApiError ? err.message : String(err));
    }
  }

  async function applyEdit(send: () => Promise<unknown>): Promise<void> {
    try {
      await send();
      banner.hide();
      renderLimited();
    } catch (err) {
      banner.show(err instanceof ApiError ? err.message : String(err));
    }
  }

  await renderNow();
  void probeLatent();
}

/** Two renders for the split view: the identity overlay, then the user's
 *  edits restored. At haircut = 1 and no wind both halves are the same
 *  cached bytes. */
export async function renderCompare(
  client: Client,
  state: { haircut: number; wind: WindParams | null;
           orbit: Parameters<typeof toCameraSpec>[0] },
  signal?: AbortSignal,
): Promise<[ArrayBuffer, ArrayBuffer]> {
  const camera = toCameraSpec(state.orbit);
  await client.editHaircut(1.0);
  await client.editWind({ direction: [1, 0, 0], amplitude: 0, phase: 0 });
  const base = await client.render(camera, signal);
  await client.editHaircut(state.haircut);
  if (state.wind) {
    await client.editWind(state.wind);
  }
  const edited = await client.render(camera, signal);
  return [base, edited];
}

declare global {
  interface Window { strandforgeBoot?: typeof boot }
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.strandforgeBoot = boot;
  const root = document.getElementById("app");
  if (root) {
    const params = new URLSearchParams(window.location.search);
    void boot(root, params.get("server") ?? undefined);
  }
}
