import { DragResult, HealthInfo, PointPair, ProgressRecord } from "./types.js";
import { ParamsBody } from "./params.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
  }
}

async function jsonOrThrow(resp: Response): Promise<any> {
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    const detail =
      typeof body?.detail === "string" ? body.detail : `HTTP ${resp.status}`;
    throw new ApiError(resp.status, detail);
  }
  return body;
}

/** Thin typed client over the session API. */
export class ApiClient {
  constructor(
    readonly baseUrl: string = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async health(): Promise<HealthInfo> {
    return jsonOrThrow(await this.fetchFn(this.url("/api/health")));
  }

  async createFromSeed(seed: number): Promise<{ id: string; image_png_base64: string }> {
    return jsonOrThrow(
      await this.fetchFn(this.url("/api/sessions"), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ sample_seed: seed }),
      }),
    );
  }

  async createFromPng(pngBase64: string): Promise<{ id: string; image_png_base64: string }> {
    return jsonOrThrow(
      await this.fetchFn(this.url("/api/sessions"), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ image_png_base64: pngBase64 }),
      }),
    );
  }

  async startDrag(
    sessionId: string,
    pairs: PointPair[],
    params: ParamsBody,
    maskPngBase64?: string,
  ): Promise<void> {
    const body: Record<string, unknown> = {
      pairs: pairs.map((p) => ({
        a: [p.anchor.x, p.anchor.y],
        b: [p.objective.x, p.objective.y],
      })),
      params,
    };
    if (maskPngBase64) body.mask_png_base64 = maskPngBase64;
    await jsonOrThrow(
      await this.fetchFn(this.url(`/api/sessions/${sessionId}/drag`), {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      }),
    );
  }

  async progress(sessionId: string): Promise<ProgressRecord> {
    return jsonOrThrow(
      await this.fetchFn(this.url(`/api/sessions/${sessionId}/progress`)),
    );
  }

  async result(sessionId: string): Promise<DragResult> {
    return jsonOrThrow(
      await this.fetchFn(this.url(`/api/sessions/${sessionId}/result`)),
    );
  }

  eventsUrl(sessionId: string): string {
    return this.url(`/api/sessions/${sessionId}/events`);
  }
}
