/** Page adapter: binds the session machine to the static page the
 * backend serves. All requests are sequential; one rater per tab. */

import { HttpTransport } from "./api.js";
import { Session, SessionState, controlsEnabled, sideForKey } from "./session.js";

const RATER_KEY = "rater-id";

function raterId(): string {
  const stored = window.localStorage.getItem(RATER_KEY);
  if (stored) return stored;
  const fresh = window.crypto && "randomUUID" in window.crypto
    ? window.crypto.randomUUID()
    : `rater-${Date.now()}-${Math.floor(Math.random() * 1e9)}`;
  window.localStorage.setItem(RATER_KEY, fresh);
  return fresh;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing page element #${id}`);
  return node as T;
}

/** Loads both animations into the visible <img> slots and resolves
 * once each has decoded; a broken clip rejects. GIFs loop on their
 * own, so "playable" is simply "loaded". */
function domMediaLoader(left: HTMLImageElement, right: HTMLImageElement) {
  const settle = (img: HTMLImageElement, url: string) =>
    new Promise<void>((resolve, reject) => {
      img.onload = () => resolve();
      img.onerror = () => reject(new Error(`failed to load ${url}`));
      img.src = url;
    });
  return (urls: string[]) => Promise.all(
    [settle(left, urls[0]), settle(right, urls[1])],
  ).then(() => undefined);
}

function main(): void {
  const leftImg = el<HTMLImageElement>("left-media");
  const rightImg = el<HTMLImageElement>("right-media");
  const leftBtn = el<HTMLButtonElement>("choose-left");
  const rightBtn = el<HTMLButtonElement>("choose-right");
  const prompt = el<HTMLElement>("prompt");
  const answered = el<HTMLElement>("answered");
  const banner = el<HTMLElement>("banner");
  const bannerText = el<HTMLElement>("banner-text");
  const recoverBtn = el<HTMLButtonElement>("recover");

  const render = (state: SessionState): void => {
    const live = controlsEnabled(state);
    leftBtn.disabled = !live;
    rightBtn.disabled = !live;
    prompt.textContent = state.pair ? state.pair.prompt : "";
    answered.textContent = String(state.answered);
    document.body.dataset.phase = state.phase;

    const showBanner = state.banner !== null;
    banner.hidden = !showBanner;
    bannerText.textContent = state.banner ?? "";
    recoverBtn.hidden = !(state.canRetry || state.needsReset);
    recoverBtn.textContent = state.needsReset ? "Start a fresh pair" : "Retry";

    if (!state.pair) {
      leftImg.removeAttribute("src");
      rightImg.removeAttribute("src");
    }
  };

  const session = new Session(
    new HttpTransport(),
    domMediaLoader(leftImg, rightImg),
    raterId(),
    render,
  );

  leftBtn.addEventListener("click", () => void session.submit("left"));
  rightBtn.addEventListener("click", () => void session.submit("right"));
  recoverBtn.addEventListener("click", () => void session.recover());
  document.addEventListener("keydown", (ev) => {
    const side = sideForKey(ev.key);
    if (side) void session.submit(side);
  });

  render(session.state());
  void session.start();
}

main();
