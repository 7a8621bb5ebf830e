/**
 * Relighting workbench: drag a light over the hemisphere, orbit the camera,
 * switch environment maps and latent samples, and watch the service
 * re-render. The server does all rendering; this page is a controller with
 * an image element per pane.
 */

import { RenderChannel, ServiceClient, type ModelInfo } from "./api.js";
import {
  buildRenderRequest,
  defaultPane,
  interpolateLatent,
  requestJson,
  type PaneState,
} from "./state.js";

const SERVER = (window as { LIGHTFIELDS_SERVER?: string }).LIGHTFIELDS_SERVER
  ?? "http://127.0.0.1:8000";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, attrs: Record<string, string> = {}, ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  node.append(...children);
  return node;
}

function hexToRgb(hex: string): [number, number, number] {
  const v = parseInt(hex.slice(1), 16);
  return [((v >> 16) & 255) / 255, ((v >> 8) & 255) / 255, (v & 255) / 255];
}

class HemisphereWidget {
  readonly canvas: HTMLCanvasElement;
  private dragging = false;

  constructor(private onMove: (x: number, y: number) => void) {
    this.canvas = el("canvas", { width: "160", height: "160", class: "hemi" });
    this.canvas.addEventListener("pointerdown", (e) => {
      this.dragging = true;
      this.canvas.setPointerCapture(e.pointerId);
      this.emit(e);
    });
    this.canvas.addEventListener("pointermove", (e) => this.dragging && this.emit(e));
    this.canvas.addEventListener("pointerup", () => (this.dragging = false));
  }

  private emit(e: PointerEvent) {
    const rect = this.canvas.getBoundingClientRect();
    const x = ((e.clientX - rect.left) / rect.width) * 2 - 1;
    const y = -(((e.clientY - rect.top) / rect.height) * 2 - 1);
    this.onMove(x, y);
  }

  draw(diskX: number, diskY: number) {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const s = this.canvas.width;
    ctx.clearRect(0, 0, s, s);
    ctx.strokeStyle = "#888";
    ctx.beginPath();
    ctx.arc(s / 2, s / 2, s / 2 - 2, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.fillStyle = "#ffcc33";
    const px = s / 2 + (diskX * (s / 2 - 2));
    const py = s / 2 - (diskY * (s / 2 - 2));
    ctx.beginPath();
    ctx.arc(px, py, 6, 0, 2 * Math.PI);
    ctx.fill();
  }
}

class Pane {
  state: PaneState;
  readonly root: HTMLElement;
  private img: HTMLImageElement;
  private status: HTMLElement;
  private requestBox: HTMLTextAreaElement;
  private hemi: HemisphereWidget;
  private channel: RenderChannel;
  private zA: number[] | null = null;
  private zB: number[] | null = null;
  private latentSeed = 0;

  constructor(private app: App, title: string) {
    this.state = defaultPane();
    this.img = el("img", { class: "frame", alt: `${title} render` });
    this.status = el("div", { class: "status" }, "idle");
    this.requestBox = el("textarea", { class: "request", readonly: "", rows: "8" });
    this.hemi = new HemisphereWidget((x, y) => {
      if (!this.state.light) return;
      this.state.light.diskX = x;
      this.state.light.diskY = y;
      this.refresh();
    });

    this.channel = new RenderChannel(app.client, {
      onImage: (blob, millis) => {
        this.img.src = URL.createObjectURL(blob);
        this.status.textContent = `rendered in ${millis} ms`;
        this.app.setOnline(true);
      },
      onError: (message) => {
        this.status.textContent = message;
        if (message.includes("fetch")) this.app.setOnline(false);
      },
      onBusy: (busy) => this.root.classList.toggle("busy", busy),
    });

    const colorInput = el("input", { type: "color", value: "#ffffff" });
    colorInput.addEventListener("input", () => {
      if (this.state.light) {
        this.state.light.color = hexToRgb(colorInput.value);
        this.refresh();
      }
    });

    const copyBtn = el("button", {}, "copy request JSON");
    copyBtn.addEventListener("click", () => {
      void navigator.clipboard?.writeText(this.requestBox.value);
    });

    const sampleBtn = el("button", {}, "sample latent");
    sampleBtn.addEventListener("click", () => void this.sampleLatent());
    const captureA = el("button", {}, "set A");
    const captureB = el("button", {}, "set B");
    captureA.addEventListener("click", () => (this.zA = this.state.latent?.z ?? null));
    captureB.addEventListener("click", () => (this.zB = this.state.latent?.z ?? null));
    const lerp = el("input", { type: "range", min: "0", max: "1", step: "0.01", value: "0" });
    lerp.addEventListener("input", () => {
      if (this.zA && this.zB) {
        this.state.latent = { z: interpolateLatent(this.zA, this.zB, Number(lerp.value)), seed: null };
        this.refresh();
      }
    });

    this.root = el("section", { class: "pane" },
      el("h2", {}, title),
      this.img,
      this.status,
      el("div", { class: "row" }, el("label", {}, "light "), this.hemi.canvas, colorInput),
      el("div", { class: "row" }, sampleBtn, captureA, captureB, lerp),
      el("div", { class: "row" }, copyBtn),
      this.requestBox,
    );
  }

  private async sampleLatent() {
    try {
      const z = await this.app.client.sampleLatent(this.state.modelId, this.latentSeed++);
      this.state.latent = { z, seed: null };
      this.refresh();
    } catch (err) {
      this.status.textContent = err instanceof Error ? err.message : String(err);
    }
  }

  refresh() {
    if (!this.state.modelId || !this.state.objectId) return;
    this.hemi.draw(this.state.light?.diskX ?? 0, this.state.light?.diskY ?? 0);
    this.requestBox.value = requestJson(this.state);
    this.channel.request(buildRenderRequest(this.state));
  }
}

class App {
  readonly client = new ServiceClient(SERVER);
  private panes: Pane[] = [];
  private banner: HTMLElement;

  constructor(private rootEl: HTMLElement) {
    this.banner = el("div", { class: "banner hidden" }, `server offline: ${SERVER}`);
  }

  setOnline(online: boolean) {
    this.banner.classList.toggle("hidden", online);
  }

  async start() {
    let models: ModelInfo[] = [];
    let objects: string[] = [];
    let envmaps: string[] = [];
    try {
      models = await this.client.models();
      const obj = await this.client.objects();
      objects = obj.objects;
      envmaps = obj.envmaps;
      this.setOnline(true);
    } catch {
      this.setOnline(false);
    }

    const left = new Pane(this, "A");
    const right = new Pane(this, "B (compare)");
    this.panes = [left, right];

    const modelSel = el("select", {});
    for (const m of models) {
      modelSel.append(el("option", { value: m.model_id },
        `${m.model_id} (${m.kind}, ${m.conditioning})`));
    }
    const objectSel = el("select", {});
    for (const o of objects) objectSel.append(el("option", { value: o }, o));

    const az = el("input", { type: "range", min: "-180", max: "180", value: "30" });
    const elv = el("input", { type: "range", min: "5", max: "85", value: "35" });
    const dist = el("input", { type: "range", min: "1", max: "4", step: "0.1", value: "1.5" });

    const envSel = el("select", {}, el("option", { value: "" }, "point light"));
    for (const e of envmaps) envSel.append(el("option", { value: e }, `env: ${e}`));
    const samples = el("input", { type: "range", min: "8", max: "800", value: "100" });
    const modeToggle = el("select", {},
      el("option", { value: "exposure" }, "exposure"),
      el("option", { value: "eq4" }, "eq4 mean"));

    const syncAll = () => {
      for (const pane of this.panes) {
        pane.state.modelId = modelSel.value || (models[0]?.model_id ?? "");
        pane.state.objectId = objectSel.value || (objects[0] ?? "");
        pane.state.camera.azimuthDeg = Number(az.value);
        pane.state.camera.elevationDeg = Number(elv.value);
        pane.state.camera.distance = Number(dist.value);
        if (envSel.value) {
          pane.state.env = {
            envmapId: envSel.value,
            samples: Number(samples.value),
            mode: modeToggle.value as "eq4" | "exposure",
          };
          pane.state.light = null;
        } else if (!pane.state.light) {
          pane.state.light = { diskX: 0.3, diskY: 0.2, color: [1, 1, 1] };
          pane.state.env = null;
        } else {
          pane.state.env = null;
        }
        pane.refresh();
      }
    };
    for (const input of [modelSel, objectSel, az, elv, dist, envSel, samples, modeToggle]) {
      input.addEventListener("input", syncAll);
    }

    this.rootEl.append(
      this.banner,
      el("div", { class: "controls" },
        el("label", {}, "model ", modelSel),
        el("label", {}, "object ", objectSel),
        el("label", {}, "azimuth ", az),
        el("label", {}, "elevation ", elv),
        el("label", {}, "distance ", dist),
        el("label", {}, "lighting ", envSel),
        el("label", {}, "samples ", samples),
        el("label", {}, "mode ", modeToggle),
      ),
      el("div", { class: "panes" }, left.root, right.root),
    );
    syncAll();
  }
}

const rootEl = document.getElementById("app");
if (rootEl) {
  void new App(rootEl).start();
}

export { App };
