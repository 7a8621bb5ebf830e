/**
 * Server access with debouncing and latest-wins cancellation.
 *
 * Each pane owns one RenderChannel: rapid interactions collapse into one
 * request after the debounce window, and a newer request aborts whatever is
 * still in flight, so the canvas never shows a stale frame.
 */

import type { RenderBody } from "./state.js";

export interface ModelInfo {
  model_id: string;
  kind: string;
  conditioning: string;
  generative: boolean;
  resolution: number;
  z_dim: number;
}

export class ServiceClient {
  constructor(readonly baseUrl: string, private fetchFn: typeof fetch = fetch) {}

  async models(): Promise<ModelInfo[]> {
    const r = await this.fetchFn(`${this.baseUrl}/models`);
    if (!r.ok) throw new Error(`GET /models failed: ${r.status}`);
    return (await r.json()) as ModelInfo[];
  }

  async objects(): Promise<{ objects: string[]; envmaps: string[] }> {
    const r = await this.fetchFn(`${this.baseUrl}/objects`);
    if (!r.ok) throw new Error(`GET /objects failed: ${r.status}`);
    return (await r.json()) as { objects: string[]; envmaps: string[] };
  }

  async sampleLatent(modelId: string, seed: number): Promise<number[]> {
    const r = await this.fetchFn(`${this.baseUrl}/sample-latent`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ model_id: modelId, seed }),
    });
    if (!r.ok) throw new Error(`POST /sample-latent failed: ${r.status}`);
    return ((await r.json()) as { z: number[] }).z;
  }

  async render(body: RenderBody, signal?: AbortSignal): Promise<Blob> {
    const r = await this.fetchFn(`${this.baseUrl}/render`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
      signal,
    });
    if (!r.ok) {
      let detail = `${r.status}`;
      try {
        const parsed = (await r.json()) as { detail?: unknown };
        if (parsed.detail) detail = `${r.status}: ${JSON.stringify(parsed.detail)}`;
      } catch {
        /* non-JSON error body */
      }
      throw new Error(`render failed (${detail})`);
    }
    return await r.blob();
  }
}

export interface ChannelEvents {
  onImage: (blob: Blob, millis: number) => void;
  onError: (message: string) => void;
  onBusy?: (busy: boolean) => void;
}

export const DEBOUNCE_MS = 150;

/** One render pipeline: debounce then latest-wins. */
export class RenderChannel {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private inflight: AbortController | null = null;
  private generation = 0;

  constructor(
    private client: ServiceClient,
    private events: ChannelEvents,
    private debounceMs: number = DEBOUNCE_MS,
  ) {}

  /** Schedule a render for this body, superseding anything pending. */
  request(body: RenderBody): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      void this.fire(body);
    }, this.debounceMs);
  }

  private async fire(body: RenderBody): Promise<void> {
    const gen = ++this.generation;
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    this.events.onBusy?.(true);
    const t0 = Date.now();
    try {
      const blob = await this.client.render(body, controller.signal);
      if (gen === this.generation) {
        this.events.onImage(blob, Date.now() - t0);
      }
    } catch (err) {
      if (controller.signal.aborted) return; // superseded, not an error
      if (gen === this.generation) {
        this.events.onError(err instanceof Error ? err.message : String(err));
      }
    } finally {
      if (gen === this.generation) this.events.onBusy?.(false);
    }
  }

  dispose(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.inflight?.abort();
  }
}
