import { ApiClient } from "./api.js";
import { ProgressRecord } from "./types.js";

export interface ProgressSubscription {
  cancel(): void;
}

const TERMINAL_STATES = new Set(["done", "failed"]);
const POLL_INTERVAL_MS = 250;

/**
 * Stream progress records, preferring the server-sent-events endpoint and
 * falling back to polling when the stream is unavailable.  `onRecord` fires
 * for every record until a terminal state arrives or the subscription is
 * cancelled; records always originate from the server.
 */
export function subscribeProgress(
  client: ApiClient,
  sessionId: string,
  onRecord: (record: ProgressRecord) => void,
  onEnd: (error?: Error) => void,
  fetchFn: typeof fetch = fetch,
): ProgressSubscription {
  let cancelled = false;

  const finish = (err?: Error) => {
    if (!cancelled) {
      cancelled = true;
      onEnd(err);
    }
  };

  const poll = async () => {
    while (!cancelled) {
      let record: ProgressRecord;
      try {
        record = await client.progress(sessionId);
      } catch (err) {
        finish(err as Error);
        return;
      }
      onRecord(record);
      if (TERMINAL_STATES.has(record.state)) {
        finish();
        return;
      }
      await new Promise((r) => setTimeout(r, POLL_INTERVAL_MS));
    }
  };

  const stream = async () => {
    let resp: Response;
    try {
      resp = await fetchFn(client.eventsUrl(sessionId), {
        headers: { accept: "text/event-stream" },
      });
      if (!resp.ok || !resp.body) throw new Error(`events ${resp.status}`);
    } catch {
      void poll(); // SSE unavailable: degrade to polling
      return;
    }
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      for (;;) {
        const { done, value } = await reader.read();
        if (cancelled) {
          void reader.cancel().catch(() => undefined);
          return;
        }
        if (done) break;
        buffer += decoder.decode(value, { stream: true });
        let idx: number;
        while ((idx = buffer.indexOf("\n\n")) >= 0) {
          const frame = buffer.slice(0, idx);
          buffer = buffer.slice(idx + 2);
          for (const line of frame.split("\n")) {
            if (!line.startsWith("data: ")) continue;
            const record = JSON.parse(line.slice(6)) as ProgressRecord;
            onRecord(record);
            if (TERMINAL_STATES.has(record.state)) {
              finish();
              void reader.cancel().catch(() => undefined);
              return;
            }
          }
        }
      }
      finish();
    } catch (err) {
      if (!cancelled) void poll(); // stream broke mid-run: resume by polling
    }
  };

  void stream();
  return {
    cancel() {
      cancelled = true;
    },
  };
}
