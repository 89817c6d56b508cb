/** DOM wiring: render loop + keyboard handlers. Logic lives in the modules;
 * this file only moves state onto the page. */

import { AnnotationApi } from "./api.js";
import { actionForKey } from "./keyboard.js";
import { BrowserStorage, VerdictOutbox } from "./outbox.js";
import { ReviewLoop, type ReviewState } from "./reviewLoop.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function render(root: HTMLElement, state: ReviewState, loop: ReviewLoop): void {
  root.replaceChildren();

  if (state.offline) {
    const banner = el("div", "banner", `Connection lost — ${state.queued} verdict(s) queued. `);
    const retry = el("button", "retry", "Retry");
    retry.addEventListener("click", () => void loop.retry());
    banner.append(retry);
    root.append(banner);
  }

  if (state.progress) {
    const { labeled, total } = state.progress;
    const wrap = el("div", "progress");
    const bar = el("div", "progress-bar");
    bar.style.width = total > 0 ? `${(100 * labeled) / total}%` : "0%";
    wrap.append(bar);
    root.append(wrap, el("div", "progress-text", `${labeled} / ${total} labeled`));
  }

  const task = state.current;
  if (!task) {
    root.append(el("p", "done", state.exhausted ? "All tasks reviewed." : "Loading…"));
    return;
  }

  root.append(el("h2", "entity", task.entityName));
  const abstractNode = el("p", "abstract");
  const mark = el("mark", "candidate", task.segments.mark);
  abstractNode.append(task.segments.before, mark, task.segments.after);
  root.append(abstractNode);
  root.append(el("div", "confidence", `candidate: “${task.surface}”  ·  score ${task.confidenceLabel}`));

  const controls = el("div", "controls");
  for (const [label, action] of [
    ["Accept (a)", "accept"],
    ["Reject (x)", "reject"],
    ["Skip (s)", "skip"],
  ] as const) {
    const button = el("button", `act-${action}`, label);
    button.addEventListener("click", () => void loop.act(action));
    controls.append(button);
  }
  root.append(controls);
}

export function mount(root: HTMLElement, serviceUrl: string, annotator: string): ReviewLoop {
  const api = new AnnotationApi(serviceUrl);
  const outbox = new VerdictOutbox(new BrowserStorage(), (entry) =>
    api.submitVerdict(entry.taskId, entry.verdict, entry.annotator).then(() => undefined),
  );
  const loop = new ReviewLoop(api, outbox, annotator, (state) => render(root, state, loop));

  window.addEventListener("keydown", (event) => {
    if (event.target instanceof HTMLInputElement || event.target instanceof HTMLTextAreaElement) {
      return;
    }
    const action = actionForKey(event.key);
    if (action) {
      event.preventDefault();
      void loop.act(action);
    }
  });

  void loop.start();
  return loop;
}

declare global {
  interface Window {
    conceptminerMount?: typeof mount;
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.conceptminerMount = mount;
  const root = document.getElementById("app");
  if (root) {
    const params = new URLSearchParams(window.location.search);
    const service = params.get("service") ?? window.location.origin;
    const annotator = params.get("annotator") ?? "anonymous";
    mount(root, service, annotator);
  }
}
