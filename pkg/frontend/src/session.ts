import { ApiClient } from "./api.js";
import { MaskModel } from "./mask.js";
import { toRequestBody, validateParams } from "./params.js";
import { subscribeProgress } from "./sse.js";
import {
  DEFAULT_PARAMS,
  DragResult,
  DragUiParams,
  HealthInfo,
  Point,
  PointPair,
  ProgressRecord,
  RunState,
} from "./types.js";

export interface SessionListener {
  onImage?(pngBase64: string): void;
  onPairs?(pairs: PointPair[], pendingAnchor: Point | null): void;
  onProgress?(record: ProgressRecord): void;
  onRunState?(state: RunState, message?: string): void;
  onResult?(result: DragResult): void;
}

/**
 * DOM-free controller for one editing session.
 *
 * Owns the point pairs, the mask, the parameter form values, and the run
 * lifecycle.  Everything rendered downstream (iterations, losses, anchor
 * positions) is forwarded verbatim from server progress records — the
 * controller never synthesizes progress.
 */
export class UiSession {
  params: DragUiParams = { ...DEFAULT_PARAMS };
  readonly pairs: PointPair[] = [];
  pendingAnchor: Point | null = null;
  mask: MaskModel;
  runState: RunState = "idle";
  progressLog: ProgressRecord[] = [];
  result: DragResult | null = null;
  sourcePngBase64 = "";
  sessionId = "";

  private cancelSubscription: (() => void) | null = null;

  constructor(
    readonly client: ApiClient,
    readonly health: HealthInfo,
    private readonly listener: SessionListener = {},
    private readonly fetchFn: typeof fetch = fetch,
  ) {
    this.mask = new MaskModel(health.image_size);
  }

  // -- image sources ------------------------------------------------------

  async sample(seed: number): Promise<void> {
    const created = await this.client.createFromSeed(seed);
    this.adoptImage(created.id, created.image_png_base64);
  }

  async loadPng(pngBase64: string): Promise<void> {
    const created = await this.client.createFromPng(pngBase64);
    this.adoptImage(created.id, created.image_png_base64);
  }

  /** Start a fresh session whose source is the current result. */
  async continueFromResult(): Promise<void> {
    if (!this.result) throw new Error("no result to continue from");
    await this.loadPng(this.result.image_png_base64);
  }

  private adoptImage(id: string, pngBase64: string): void {
    this.sessionId = id;
    this.sourcePngBase64 = pngBase64;
    this.pairs.length = 0;
    this.pendingAnchor = null;
    this.mask = new MaskModel(this.health.image_size);
    this.progressLog = [];
    this.result = null;
    this.setRunState("idle");
    this.listener.onImage?.(pngBase64);
    this.notifyPairs();
  }

  // -- point pairs ----------------------------------------------------------

  /** First click places the anchor, the second the objective.  Clicks
   * outside the image are ignored; a coincident pair is rejected. */
  clickAt(point: Point): string | null {
    const max = this.health.image_size - 1;
    if (point.x < 0 || point.y < 0 || point.x > max || point.y > max) return null;
    if (!this.sessionId || this.runState === "running") return null;
    if (this.pendingAnchor === null) {
      this.pendingAnchor = point;
      this.notifyPairs();
      return null;
    }
    if (this.pendingAnchor.x === point.x && this.pendingAnchor.y === point.y) {
      this.pendingAnchor = null;
      this.notifyPairs();
      return "anchor and objective coincide; pair rejected";
    }
    this.pairs.push({ anchor: this.pendingAnchor, objective: point });
    this.pendingAnchor = null;
    this.notifyPairs();
    return null;
  }

  clearPairs(): void {
    this.pairs.length = 0;
    this.pendingAnchor = null;
    this.notifyPairs();
  }

  private notifyPairs(): void {
    this.listener.onPairs?.([...this.pairs], this.pendingAnchor);
  }

  // -- run ------------------------------------------------------------------

  get canRun(): boolean {
    return this.runState !== "running" && this.pairs.length > 0 && !!this.sessionId;
  }

  /**
   * Submit the drag and follow its progress until the server reports a
   * terminal state; resolves with the result on success.
   */
  async run(encodeMaskPng?: (gray: Uint8Array, size: number) => string): Promise<DragResult> {
    if (!this.canRun) throw new Error("no runnable drag (missing pairs or busy)");
    const invalid = validateParams(this.params, this.health.K);
    if (invalid) throw new Error(invalid);
    let maskB64: string | undefined;
    if (!this.mask.isEmpty()) {
      if (!encodeMaskPng) throw new Error("mask painted but no PNG encoder provided");
      maskB64 = encodeMaskPng(this.mask.toGray(), this.mask.size);
    }
    await this.client.startDrag(this.sessionId, this.pairs,
                                toRequestBody(this.params), maskB64);
    this.setRunState("running");
    this.progressLog = [];

    const terminal: ProgressRecord = await new Promise((resolve, reject) => {
      const sub = subscribeProgress(
        this.client,
        this.sessionId,
        (record) => {
          this.progressLog.push(record);
          this.listener.onProgress?.(record);
          if (record.state === "done" || record.state === "failed") {
            resolve(record);
          }
        },
        (err) => (err ? reject(err) : undefined),
        this.fetchFn,
      );
      this.cancelSubscription = () => sub.cancel();
    });
    this.cancelSubscription = null;

    if (terminal.state === "failed") {
      this.setRunState("failed", "server reported failure");
      throw new Error("drag failed on the server");
    }
    this.result = await this.client.result(this.sessionId);
    this.setRunState("done");
    this.listener.onResult?.(this.result);
    return this.result;
  }

  dispose(): void {
    this.cancelSubscription?.();
  }

  private setRunState(state: RunState, message?: string): void {
    this.runState = state;
    this.listener.onRunState?.(state, message);
  }
}

export async function connect(
  client: ApiClient,
  listener?: SessionListener,
  fetchFn: typeof fetch = fetch,
): Promise<UiSession> {
  const health = await client.health();
  return new UiSession(client, health, listener, fetchFn);
}
