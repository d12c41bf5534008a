/** Session state machine for one rater in a 2AFC study.
 *
 * Pure logic, no DOM: the page adapter renders snapshots of
 * SessionState and forwards clicks/keys to submit(). The invariants
 * the machine defends:
 *
 *   - a choice can be posted only while a pair is displayed and ready;
 *     a second submit is locked out until the next pair arrives
 *   - submit controls stay disabled until both animations are playable
 *   - the answered count increments exactly once per pair the server
 *     has recorded, so at session end it equals the server-side record
 *     count for this rater (a duplicate ack after a lost response is
 *     counted once, never twice)
 */

import { PairPayload, Side, Transport } from "./api.js";

export type Phase =
  | "idle"           // before start()
  | "loading"        // pair request in flight
  | "media-pending"  // pair known, animations still loading
  | "ready"          // both sides playable, controls live
  | "submitting"     // choice posted, waiting for the ack
  | "error";         // banner shown; retry or reset required

export interface CurrentPair {
  pairId: string;
  leftUrl: string;
  rightUrl: string;
  prompt: string;
}

export interface SessionState {
  raterId: string;
  phase: Phase;
  pair: CurrentPair | null;
  answered: number;
  banner: string | null;
  /** true when the banner offers a plain retry of the failed action */
  canRetry: boolean;
  /** true when the server no longer knows the pair (404): the only
   * way forward is a fresh pair */
  needsReset: boolean;
}

/** Resolves when every URL is loaded and loopable; rejects on failure. */
export type MediaLoader = (urls: string[]) => Promise<void>;

export type Listener = (state: SessionState) => void;

export function controlsEnabled(state: SessionState): boolean {
  return state.phase === "ready";
}

/** Keyboard binding: left/right arrows pick the matching side. */
export function sideForKey(key: string): Side | null {
  if (key === "ArrowLeft") return "left";
  if (key === "ArrowRight") return "right";
  return null;
}

export class Session {
  private phase: Phase = "idle";
  private pair: CurrentPair | null = null;
  private answered = 0;
  private banner: string | null = null;
  private canRetry = false;
  private needsReset = false;
  /** whether the current pair already bumped the answered count */
  private counted = false;
  /** invalidates async completions that lost a race with a reset */
  private epoch = 0;

  constructor(
    private readonly transport: Transport,
    private readonly loadMedia: MediaLoader,
    readonly raterId: string,
    private readonly listener: Listener = () => {},
  ) {}

  state(): SessionState {
    return {
      raterId: this.raterId,
      phase: this.phase,
      pair: this.pair,
      answered: this.answered,
      banner: this.banner,
      canRetry: this.canRetry,
      needsReset: this.needsReset,
    };
  }

  private notify(): void {
    this.listener(this.state());
  }

  private fail(message: string, opts: { reset?: boolean } = {}): void {
    this.phase = "error";
    this.banner = message;
    this.canRetry = !opts.reset;
    this.needsReset = !!opts.reset;
    this.notify();
  }

  async start(): Promise<void> {
    return this.loadNextPair();
  }

  /** Fetch a pair, then hold controls until both animations load. */
  async loadNextPair(): Promise<void> {
    const epoch = ++this.epoch;
    this.phase = "loading";
    this.pair = null;
    this.counted = false;
    this.banner = null;
    this.canRetry = false;
    this.needsReset = false;
    this.notify();

    let payload: PairPayload;
    try {
      payload = await this.transport.nextPair();
    } catch {
      if (epoch !== this.epoch) return;
      this.fail("Could not reach the study server.");
      return;
    }
    if (epoch !== this.epoch) return;

    this.pair = {
      pairId: payload.pair_id,
      leftUrl: payload.left,
      rightUrl: payload.right,
      prompt: payload.prompt,
    };
    this.phase = "media-pending";
    this.notify();

    try {
      await this.loadMedia([payload.left, payload.right]);
    } catch {
      if (epoch !== this.epoch) return;
      this.fail("A clip failed to load.");
      return;
    }
    if (epoch !== this.epoch) return;

    this.phase = "ready";
    this.notify();
  }

  /** Post a choice for the displayed pair. Calls made while no pair is
   * ready (nothing shown, media pending, or an ack in flight) are
   * ignored, which is the double-submit lockout. */
  async submit(side: Side): Promise<"recorded" | "ignored" | "failed"> {
    if (this.phase !== "ready" || this.pair === null) return "ignored";
    const pair = this.pair;
    const epoch = this.epoch;
    this.phase = "submitting";
    this.notify();

    let outcome;
    try {
      outcome = await this.transport.submitChoice(pair.pairId, side, this.raterId);
    } catch {
      if (epoch !== this.epoch) return "ignored";
      // The POST may or may not have landed. Keep the pair on screen so
      // the rater can try again; a landed first attempt then answers
      // 409, which is counted exactly once below.
      this.phase = "ready";
      this.banner = "Could not submit that choice. Try again.";
      this.canRetry = false;
      this.notify();
      return "failed";
    }
    if (epoch !== this.epoch) return "ignored";

    if (outcome.kind === "unknown-pair") {
      this.fail("The server no longer knows this pair. Start a fresh one.", { reset: true });
      return "failed";
    }
    // "recorded" and "duplicate" both mean the server holds exactly one
    // record for this pair; count it once and advance.
    if (!this.counted) {
      this.answered += 1;
      this.counted = true;
    }
    await this.loadNextPair();
    return "recorded";
  }

  /** Banner action: retry the failed load, or fetch a fresh pair after
   * a session reset prompt. Both roads lead to loadNextPair. */
  async recover(): Promise<void> {
    return this.loadNextPair();
  }
}
