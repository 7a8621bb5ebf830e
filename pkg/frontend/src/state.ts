/**
 * Viewer state and its mapping onto render-service request bodies.
 *
 * Everything here is pure: one UI state maps to exactly one request body,
 * so the tests can pin the wire format without a server, and the "copy as
 * JSON" box shows precisely what will be sent.
 */

export const LIGHT_RADIUS = 10;

export interface OrbitCamera {
  azimuthDeg: number;
  elevationDeg: number;
  distance: number;
}

export interface LightState {
  /** Position of the drag handle on the hemisphere widget, unit disk coords. */
  diskX: number;
  diskY: number;
  color: [number, number, number];
}

export interface EnvLighting {
  envmapId: string;
  samples: number;
  mode: "eq4" | "exposure";
}

export interface LatentState {
  z: number[] | null;
  seed: number | null;
}

export interface PaneState {
  modelId: string;
  objectId: string;
  camera: OrbitCamera;
  /** Point light when set; otherwise env lighting must be set. */
  light: LightState | null;
  env: EnvLighting | null;
  latent: LatentState | null;
  width: number;
  height: number;
  fovDeg: number;
}

export interface RenderBody {
  model_id: string;
  object_id: string;
  camera: {
    position: [number, number, number];
    look_at: [number, number, number];
    fov_deg: number;
    width: number;
    height: number;
  };
  lighting:
    | { lights: { position: [number, number, number]; color: [number, number, number] }[] }
    | { envmap_id: string; samples: number; mode: "eq4" | "exposure" };
  latent?: { z: number[] } | { seed: number };
}

const rad = (deg: number) => (deg * Math.PI) / 180;

/** Orbit parameters to a world-space camera position looking at the origin. */
export function cameraPosition(c: OrbitCamera): [number, number, number] {
  const el = rad(c.elevationDeg);
  const az = rad(c.azimuthDeg);
  return [
    c.distance * Math.cos(el) * Math.cos(az),
    c.distance * Math.cos(el) * Math.sin(az),
    c.distance * Math.sin(el),
  ];
}

/**
 * Hemisphere widget: a drag handle on the unit disk maps to a light position
 * on the upper hemisphere of radius 10. Points outside the disk clamp to the
 * rim (horizon). The result always satisfies |l| = 10 and z >= 0.
 */
export function lightPositionFromDisk(diskX: number, diskY: number): [number, number, number] {
  let x = diskX;
  let y = diskY;
  const r2 = x * x + y * y;
  if (r2 > 1) {
    const r = Math.sqrt(r2);
    x /= r;
    y /= r;
  }
  const z = Math.sqrt(Math.max(0, 1 - x * x - y * y));
  return [LIGHT_RADIUS * x, LIGHT_RADIUS * y, LIGHT_RADIUS * z];
}

/** Linear interpolation between two latent codes; t=0 and t=1 reproduce the
 * endpoints exactly. */
export function interpolateLatent(za: number[], zb: number[], t: number): number[] {
  if (za.length !== zb.length) {
    throw new Error(`latent dimensions differ: ${za.length} vs ${zb.length}`);
  }
  if (t === 0) return [...za];
  if (t === 1) return [...zb];
  return za.map((a, i) => (1 - t) * a + t * (zb[i] as number));
}

export function buildRenderRequest(pane: PaneState): RenderBody {
  const body: RenderBody = {
    model_id: pane.modelId,
    object_id: pane.objectId,
    camera: {
      position: cameraPosition(pane.camera),
      look_at: [0, 0, 0],
      fov_deg: pane.fovDeg,
      width: pane.width,
      height: pane.height,
    },
    lighting: pane.light
      ? {
          lights: [
            {
              position: lightPositionFromDisk(pane.light.diskX, pane.light.diskY),
              color: pane.light.color,
            },
          ],
        }
      : pane.env
        ? { envmap_id: pane.env.envmapId, samples: pane.env.samples, mode: pane.env.mode }
        : { lights: [] },
  };
  if (pane.latent) {
    if (pane.latent.z) body.latent = { z: pane.latent.z };
    else if (pane.latent.seed !== null) body.latent = { seed: pane.latent.seed };
  }
  return body;
}

/** The copyable request text shown in the UI; replayable through the CLI. */
export function requestJson(pane: PaneState): string {
  return JSON.stringify(buildRenderRequest(pane), null, 2);
}

export function defaultPane(modelId = "", objectId = ""): PaneState {
  return {
    modelId,
    objectId,
    camera: { azimuthDeg: 30, elevationDeg: 35, distance: 1.5 },
    light: { diskX: 0.3, diskY: 0.2, color: [1, 1, 1] },
    env: null,
    latent: null,
    width: 128,
    height: 128,
    fovDeg: 50,
  };
}
