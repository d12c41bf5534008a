/** Wire types and HTTP transport for the preference-study backend.
 *
 * The backend speaks JSON over three endpoints:
 *   GET  /api/pair    -> { pair_id, left, right, prompt, version }
 *   POST /api/choice  -> { status: "recorded", pair_id, version }
 *   GET  /api/results -> aggregate table (used by tests, not the page)
 *
 * Media URLs in a pair payload are server-relative (/media/...).
 */

export type Side = "left" | "right";

export interface PairPayload {
  pair_id: string;
  left: string;
  right: string;
  prompt: string;
}

/** Outcome of posting one choice. Only statuses the session must react
 * to differently get their own variant; anything else is a transport
 * failure. */
export type SubmitOutcome =
  | { kind: "recorded" }
  | { kind: "duplicate" }
  | { kind: "unknown-pair" };

export class TransportError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
    this.name = "TransportError";
  }
}

export interface Transport {
  /** Fetch the next pair. Throws TransportError when the backend is
   * unreachable or answers with a non-200 status. */
  nextPair(): Promise<PairPayload>;
  /** Post one choice. Resolves for 200/409/404; throws TransportError
   * for network failure and any other status. */
  submitChoice(pairId: string, choice: Side, raterId: string): Promise<SubmitOutcome>;
}

export class HttpTransport implements Transport {
  constructor(private readonly base: string = "") {}

  async nextPair(): Promise<PairPayload> {
    let res: Response;
    try {
      res = await fetch(`${this.base}/api/pair`);
    } catch (err) {
      throw new TransportError(`backend unreachable: ${err}`);
    }
    if (!res.ok) {
      throw new TransportError(`pair request failed (${res.status})`, res.status);
    }
    const body = (await res.json()) as PairPayload;
    if (!body.pair_id || !body.left || !body.right) {
      throw new TransportError("malformed pair payload");
    }
    return body;
  }

  async submitChoice(pairId: string, choice: Side, raterId: string): Promise<SubmitOutcome> {
    let res: Response;
    try {
      res = await fetch(`${this.base}/api/choice`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ pair_id: pairId, choice, rater_id: raterId }),
      });
    } catch (err) {
      throw new TransportError(`backend unreachable: ${err}`);
    }
    if (res.ok) return { kind: "recorded" };
    if (res.status === 409) return { kind: "duplicate" };
    if (res.status === 404) return { kind: "unknown-pair" };
    throw new TransportError(`choice rejected (${res.status})`, res.status);
  }
}
