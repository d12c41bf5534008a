/** End-to-end: the real backend process, the real HTTP transport, and
 * the session machine driven the way the page drives it (keyboard
 * events through sideForKey, media fetched before ready). Covers the
 * release criterion: 50 keyboard trials with server record count equal
 * to the UI answered count, and a rapid double click producing exactly
 * one record. */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync, writeFileSync, mkdirSync } from "node:fs";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterEach, describe, expect, it } from "vitest";

import { HttpTransport } from "../src/api.js";
import { MediaLoader, Session, sideForKey } from "../src/session.js";

const DIST = join(dirname(fileURLToPath(import.meta.url)), "..", "dist");

// 1x1 GIF; the backend only cares that media files exist and stream back.
const GIF = Buffer.from(
  "R0lGODlhAQABAIAAAAAAAP///yH5BAEAAAAALAAAAAABAAEAAAIBRAA7", "base64");

interface Backend {
  proc: ChildProcess;
  base: string;
  tmp: string;
}

const running: Backend[] = [];

function makeStudyDir(): string {
  const tmp = mkdtempSync(join(tmpdir(), "rater-e2e-"));
  mkdirSync(join(tmp, "media"));
  const experiment: Record<string, Array<{ file: string }>> = {};
  for (const model of ["two-stream", "real"]) {
    experiment[model] = [];
    for (let i = 0; i < 4; i += 1) {
      const file = `${model}-${i}.gif`;
      writeFileSync(join(tmp, "media", file), GIF);
      experiment[model].push({ file });
    }
  }
  writeFileSync(join(tmp, "experiment.json"), JSON.stringify(experiment));
  return tmp;
}

async function startBackend(): Promise<Backend> {
  const tmp = makeStudyDir();
  const proc = spawn("python3", [
    "-m", "tinyvidgan.cli", "serve-eval",
    "--experiment", join(tmp, "experiment.json"),
    "--log-path", join(tmp, "choices.jsonl"),
    "--media-dir", join(tmp, "media"),
    "--ui-dir", DIST,
    "--port", "0",
  ], { stdio: ["ignore", "pipe", "pipe"] });

  let stderr = "";
  proc.stderr?.on("data", (chunk) => { stderr += String(chunk); });

  const base = await new Promise<string>((resolve, reject) => {
    const timer = setTimeout(
      () => reject(new Error(`backend never came up\n${stderr}`)), 60_000);
    let out = "";
    proc.stdout?.on("data", (chunk) => {
      out += String(chunk);
      const m = out.match(/serving on ([\d.]+):(\d+)/);
      if (m) {
        clearTimeout(timer);
        resolve(`http://${m[1]}:${m[2]}`);
      }
    });
    proc.on("exit", (code) => {
      clearTimeout(timer);
      reject(new Error(`backend exited early (${code})\n${stderr}`));
    });
  });

  const backend = { proc, base, tmp };
  running.push(backend);
  return backend;
}

afterEach(() => {
  while (running.length > 0) {
    const b = running.pop()!;
    b.proc.kill("SIGKILL");
    rmSync(b.tmp, { recursive: true, force: true });
  }
});

/** Same media gate the page applies, minus the <img> elements: every
 * clip URL must stream back non-empty before controls unlock. */
function fetchingMediaLoader(base: string): MediaLoader {
  return async (urls) => {
    for (const url of urls) {
      const res = await fetch(base + url);
      if (!res.ok) throw new Error(`media ${url} -> ${res.status}`);
      const body = await res.arrayBuffer();
      if (body.byteLength === 0) throw new Error(`media ${url} is empty`);
    }
  };
}

/** Drive the session exactly like the page keydown handler does. */
async function pressArrow(session: Session, key: string) {
  const side = sideForKey(key);
  if (!side) throw new Error(`not a choice key: ${key}`);
  return session.submit(side);
}

async function serverRecordCount(base: string): Promise<number> {
  const res = await fetch(`${base}/api/results`);
  expect(res.status).toBe(200);
  const table = await res.json();
  return table.left_bias.n as number;
}

describe("rater UI against the real backend", () => {
  it("serves the static bundle at the root path", async () => {
    const { base } = await startBackend();
    const res = await fetch(`${base}/`);
    expect(res.status).toBe(200);
    expect(res.headers.get("content-type")).toContain("text/html");
    const page = await res.text();
    expect(page).toBe(readFileSync(join(DIST, "index.html"), "utf-8"));
    for (const asset of ["main.js", "session.js", "api.js", "styles.css"]) {
      const sub = await fetch(`${base}/${asset}`);
      expect(sub.status).toBe(200);
    }
  });

  it("matches the server record count over 50 keyboard trials", async () => {
    const { base } = await startBackend();
    const session = new Session(
      new HttpTransport(base), fetchingMediaLoader(base), "rater-e2e");
    await session.start();
    expect(session.state().phase).toBe("ready");
    expect(session.state().pair?.prompt).toBe("Which video is more realistic?");

    for (let trial = 0; trial < 50; trial += 1) {
      const key = trial % 3 === 0 ? "ArrowRight" : "ArrowLeft";
      const result = await pressArrow(session, key);
      expect(result).toBe("recorded");
      expect(session.state().answered).toBe(trial + 1);
      expect(session.state().phase).toBe("ready");
    }

    expect(session.state().answered).toBe(50);
    expect(await serverRecordCount(base)).toBe(50);
  }, 120_000);

  it("records exactly one choice for a rapid double click", async () => {
    const { base } = await startBackend();
    const session = new Session(
      new HttpTransport(base), fetchingMediaLoader(base), "rater-dbl");
    await session.start();
    expect(session.state().phase).toBe("ready");

    // two clicks in the same tick, no await between them
    const first = session.submit("left");
    const second = session.submit("left");
    const [r1, r2] = await Promise.all([first, second]);
    expect([r1, r2].sort()).toEqual(["ignored", "recorded"]);

    expect(session.state().answered).toBe(1);
    expect(await serverRecordCount(base)).toBe(1);
  });

  it("keeps counts aligned when a duplicate ack races the next pair", async () => {
    const { base } = await startBackend();
    const transport = new HttpTransport(base);
    const session = new Session(
      transport, fetchingMediaLoader(base), "rater-409");
    await session.start();
    const pairId = session.state().pair!.pairId;

    // a stray client posts the same pair for this rater first
    const stray = await transport.submitChoice(pairId, "right", "rater-409");
    expect(stray.kind).toBe("recorded");

    // the session's own submit now draws a 409: advance, count once
    const result = await session.submit("left");
    expect(result).toBe("recorded");
    expect(session.state().answered).toBe(1);
    expect(session.state().phase).toBe("ready");
    expect(await serverRecordCount(base)).toBe(1);
  });
});
