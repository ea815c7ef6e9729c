/** Typed client for the strandforge serve endpoints. The UI never computes
 *  hair geometry itself; every control round-trips through one of these. */

export interface OrbitCamera {
  azimuth: number;   // degrees
  elevation: number; // degrees
  distance: number;  // meters
}

export type CameraSpec = { index: number } | { orbit: OrbitCamera };

export interface SceneInfo {
  strand_count: number;
  num_segments: number;
  image_size: number;
  textures: { shape: number[]; appearance: number[] };
  latent_dim: number;
  cameras: number;
  edits: string[];
}

export interface WindParams {
  direction: [number, number, number];
  amplitude: number;
  phase: number;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class Client {
  constructor(private base: string,
              private fetchFn: typeof fetch = fetch) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.base + path, init);
    if (!resp.ok) {
      const body = await resp.text();
      let message = body;
      try {
        message = JSON.parse(body).error ?? body;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, message);
    }
    return resp.json() as Promise<T>;
  }

  private post(body: unknown): RequestInit {
    return {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    };
  }

  scene(): Promise<SceneInfo> {
    return this.json<SceneInfo>("/scene");
  }

  /** Returns the rendered PNG bytes; rejects with ApiError on failure. */
  async render(camera: CameraSpec,
               signal?: AbortSignal): Promise<ArrayBuffer> {
    const resp = await this.fetchFn(this.base + "/render", {
      ...this.post({ camera }),
      signal,
    });
    if (!resp.ok) {
      throw new ApiError(resp.status, await resp.text());
    }
    return resp.arrayBuffer();
  }

  editHaircut(fraction: number): Promise<{ ok: boolean }> {
    return this.json("/edit/haircut", this.post({ fraction }));
  }

  editWind(params: WindParams): Promise<{ ok: boolean }> {
    return this.json("/edit/wind", this.post(params));
  }

  strands(decimate: number): Promise<{ strands: number[][][] }> {
    return this.json(`/strands?decimate=${decimate}`);
  }

  latent(uv: [number, number], dim: number,
         value: number): Promise<{ polyline: number[][] }> {
    return this.json("/latent", this.post({ uv, dim, value }));
  }
}
