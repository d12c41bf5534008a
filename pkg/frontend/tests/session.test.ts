/** State-machine tests: lockout, media gating, banners, exact-once
 * counting across the 200/409/404/network outcomes. */

import { describe, expect, it } from "vitest";
import { PairPayload, Side, SubmitOutcome, Transport, TransportError } from "../src/api.js";
import { MediaLoader, Session, controlsEnabled, sideForKey } from "../src/session.js";

const PROMPT = "Which video is more realistic?";

interface Deferred<T> {
  promise: Promise<T>;
  resolve: (v: T) => void;
  reject: (e: unknown) => void;
}

function deferred<T>(): Deferred<T> {
  let resolve!: (v: T) => void;
  let reject!: (e: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

/** Scriptable backend double: queue outcomes per call, record posts. */
class FakeTransport implements Transport {
  pairCalls = 0;
  posts: Array<{ pairId: string; choice: Side; raterId: string }> = [];
  pairQueue: Array<PairPayload | "down"> = [];
  submitQueue: Array<SubmitOutcome | "down" | Deferred<SubmitOutcome>> = [];

  pushPair(id: string): void {
    this.pairQueue.push({
      pair_id: id,
      left: `/media/${id}-left.gif`,
      right: `/media/${id}-right.gif`,
      prompt: PROMPT,
    });
  }

  async nextPair(): Promise<PairPayload> {
    this.pairCalls += 1;
    const next = this.pairQueue.shift();
    if (next === undefined || next === "down") {
      throw new TransportError("backend unreachable");
    }
    return next;
  }

  async submitChoice(pairId: string, choice: Side, raterId: string): Promise<SubmitOutcome> {
    this.posts.push({ pairId, choice, raterId });
    const next = this.submitQueue.shift();
    if (next === undefined || next === "down") {
      throw new TransportError("backend unreachable");
    }
    if (next instanceof Object && "promise" in next) return next.promise;
    return next;
  }
}

const instantMedia: MediaLoader = async () => {};

function makeSession(transport: Transport, media: MediaLoader = instantMedia) {
  return new Session(transport, media, "rater-1");
}

describe("loading a pair", () => {
  it("reaches ready with the exact prompt and both media urls", async () => {
    const t = new FakeTransport();
    t.pushPair("p1");
    const s = makeSession(t);
    await s.start();
    const state = s.state();
    expect(state.phase).toBe("ready");
    expect(state.pair?.prompt).toBe("Which video is more realistic?");
    expect(state.pair?.leftUrl).toBe("/media/p1-left.gif");
    expect(state.pair?.rightUrl).toBe("/media/p1-right.gif");
    expect(controlsEnabled(state)).toBe(true);
  });

  it("keeps controls disabled until both animations are loaded", async () => {
    const t = new FakeTransport();
    t.pushPair("p1");
    const gate = deferred<void>();
    const s = makeSession(t, () => gate.promise);
    const started = s.start();
    await Promise.resolve();
    await Promise.resolve();
    expect(s.state().phase).toBe("media-pending");
    expect(controlsEnabled(s.state())).toBe(false);
    expect(await s.submit("left")).toBe("ignored");
    gate.resolve();
    await started;
    expect(s.state().phase).toBe("ready");
  });

  it("shows a retry banner and no controls when the backend is down", async () => {
    const t = new FakeTransport();
    t.pairQueue.push("down");
    const s = makeSession(t);
    await s.start();
    const state = s.state();
    expect(state.phase).toBe("error");
    expect(state.banner).toBeTruthy();
    expect(state.canRetry).toBe(true);
    expect(controlsEnabled(state)).toBe(false);
    expect(await s.submit("left")).toBe("ignored");
  });

  it("recovers after a retry once the backend is back", async () => {
    const t = new FakeTransport();
    t.pairQueue.push("down");
    const s = makeSession(t);
    await s.start();
    expect(s.state().phase).toBe("error");
    t.pushPair("p2");
    await s.recover();
    expect(s.state().phase).toBe("ready");
    expect(s.state().banner).toBeNull();
  });

  it("shows the banner when a clip fails to load", async () => {
    const t = new FakeTransport();
    t.pushPair("p1");
    const s = makeSession(t, async () => {
      throw new Error("broken gif");
    });
    await s.start();
    expect(s.state().phase).toBe("error");
    expect(s.state().canRetry).toBe(true);
  });
});

describe("keyboard binding", () => {
  it("maps arrow keys to sides and ignores everything else", () => {
    expect(sideForKey("ArrowLeft")).toBe("left");
    expect(sideForKey("ArrowRight")).toBe("right");
    expect(sideForKey("ArrowUp")).toBeNull();
    expect(sideForKey("Enter")).toBeNull();
    expect(sideForKey("a")).toBeNull();
  });
});

describe("submitting a choice", () => {
  it("posts the chosen side and advances to the next pair", async () => {
    const t = new FakeTransport();
    t.pushPair("p1");
    t.pushPair("p2");
    t.submitQueue.push({ kind: "recorded" });
    const s = makeSession(t);
    await s.start();
    expect(await s.submit("left")).toBe("recorded");
    expect(t.posts).toEqual([{ pairId: "p1", choice: "left", raterId: "rater-1" }]);
    expect(s.state().answered).toBe(1);
    expect(s.state().pair?.pairId).toBe("p2");
    expect(s.state().phase).toBe("ready");
  });

  it("locks out a second submit until the next pair arrives", async () => {
    const t = new FakeTransport();
    t.pushPair("p1");
    t.pushPair("p2");
    const slow = deferred<SubmitOutcome>();
    t.submitQueue.push(slow);
    const s = makeSession(t);
    await s.start();

    const first = s.submit("left");
    const second = s.submit("right");
    slow.resolve({ kind: "recorded" });
    const [r1, r2] = await Promise.all([first, second]);
    expect(r1).toBe("recorded");
    expect(r2).toBe("ignored");
    expect(t.posts.length).toBe(1);
    expect(s.state().answered).toBe(1);
  });

  it("never posts for an unseen pair", async () => {
    const t = new FakeTransport();
    const s = makeSession(t);
    expect(await s.submit("left")).toBe("ignored");
    expect(t.posts.length).toBe(0);
  });

  it("counts a duplicate ack once and advances (lost-response replay)", async () => {
    const t = new FakeTransport();
    t.pushPair("p1");
    t.pushPair("p2");
    // first POST lands server-side but the response is lost ...
    t.submitQueue.push("down");
    // ... so the retry is answered with 409
    t.submitQueue.push({ kind: "duplicate" });
    const s = makeSession(t);
    await s.start();

    expect(await s.submit("left")).toBe("failed");
    expect(s.state().phase).toBe("ready");
    expect(s.state().banner).toBeTruthy();
    expect(s.state().answered).toBe(0);

    expect(await s.submit("left")).toBe("recorded");
    expect(s.state().answered).toBe(1);
    expect(s.state().pair?.pairId).toBe("p2");
    expect(t.posts.length).toBe(2);
  });

  it("prompts for a reset when the server forgot the pair", async () => {
    const t = new FakeTransport();
    t.pushPair("p1");
    t.submitQueue.push({ kind: "unknown-pair" });
    const s = makeSession(t);
    await s.start();
    expect(await s.submit("right")).toBe("failed");
    const state = s.state();
    expect(state.phase).toBe("error");
    expect(state.needsReset).toBe(true);
    expect(state.answered).toBe(0);

    t.pushPair("p9");
    await s.recover();
    expect(s.state().phase).toBe("ready");
    expect(s.state().pair?.pairId).toBe("p9");
  });

  it("increments the answered count by exactly one per accepted pair", async () => {
    const t = new FakeTransport();
    for (let i = 0; i < 6; i += 1) t.pushPair(`p${i}`);
    for (let i = 0; i < 5; i += 1) t.submitQueue.push({ kind: "recorded" });
    const s = makeSession(t);
    await s.start();
    for (let i = 0; i < 5; i += 1) {
      const side: Side = i % 2 === 0 ? "left" : "right";
      expect(await s.submit(side)).toBe("recorded");
      expect(s.state().answered).toBe(i + 1);
    }
    expect(t.posts.length).toBe(5);
  });
});
