/** Training dashboard: start/pause/resume/stop, live counters, status label,
 * and a loss sparkline fed by the event stream. One stream subscription per
 * view; the stream resubscribes itself after connection loss. */

import type { ApiClient, TrainSnapshot } from "../api.js";
import { button, el } from "../dom.js";
import { EventStream, type EventStreamOptions } from "../sse.js";
import type { UiSessionState } from "../state.js";

const CHART_W = 320;
const CHART_H = 60;
const SVG_NS = "http://www.w3.org/2000/svg";

export interface TrainingView {
  el: HTMLElement;
  start(): Promise<void>;
  pause(): Promise<void>;
  resume(): Promise<void>;
  stop(): Promise<void>;
  exportWeights(): Promise<void>;
  deployAndReboot(): Promise<void>;
  deviceText(): string;
  subscribe(): void;
  dispose(): void;
  /** All events seen on the stream, including ones with no loss yet. */
  eventCount: number;
  /** Events that carried no plottable loss (before the first batch). */
  nullLossEventCount: number;
  chartPointCount(): number;
  stateText(): string;
  statusText(): string;
}

export function createTrainingView(
  api: ApiClient,
  state: UiSessionState,
  streamOpts: EventStreamOptions = {},
): TrainingView {
  const root = el("section", { id: "training", class: "panel" });
  root.appendChild(el("h2", {}, "Training"));

  const epochsInput = el("input", { type: "number", id: "train-epochs", value: "20", min: "1" });
  const holdoutInput = el("input", { type: "number", id: "train-holdout", value: "0", min: "0" });
  const seedInput = el("input", { type: "number", id: "train-seed", value: "0" });
  const form = el("div", { class: "train-form" });
  for (const [text, input] of [
    ["Epochs", epochsInput],
    ["Holdout/class", holdoutInput],
    ["Seed", seedInput],
  ] as const) {
    const lab = el("label", {}, `${text} `);
    lab.appendChild(input);
    form.appendChild(lab);
  }
  form.appendChild(button("Start", () => void start()));
  form.appendChild(button("Pause", () => void pause()));
  form.appendChild(button("Resume", () => void resume()));
  form.appendChild(button("Stop", () => void stopRun()));
  form.appendChild(button("Export", () => void exportWeights()));
  form.appendChild(button("Deploy + reboot", () => void deployAndReboot()));
  root.appendChild(form);

  const stateEl = el("span", { id: "train-state" }, "idle");
  const counterEl = el("span", { id: "train-counters" }, "epoch 0 batch 0");
  const lossEl = el("span", { id: "train-loss" }, "");
  const statusEl = el("strong", { id: "status-label" }, "");
  const lineEl = el("p", { class: "train-line" });
  lineEl.append("state ", stateEl, " | ", counterEl, " | avg loss ", lossEl, " | ", statusEl);
  root.appendChild(lineEl);

  const connEl = el("p", { class: "stream-state" }, "stream: connecting");
  root.appendChild(connEl);
  const deviceEl = el("p", { class: "device-line" }, "");
  root.appendChild(deviceEl);

  const svg = document.createElementNS(SVG_NS, "svg");
  svg.setAttribute("viewBox", `0 0 ${CHART_W} ${CHART_H}`);
  svg.setAttribute("class", "loss-chart");
  const polyline = document.createElementNS(SVG_NS, "polyline");
  polyline.setAttribute("fill", "none");
  polyline.setAttribute("stroke", "#2563eb");
  polyline.setAttribute("stroke-width", "1.5");
  svg.appendChild(polyline);
  root.appendChild(svg);

  const view: TrainingView = {
    el: root,
    start,
    pause,
    resume,
    stop: stopRun,
    exportWeights,
    deployAndReboot,
    deviceText: () => deviceEl.textContent ?? "",
    subscribe,
    dispose,
    eventCount: 0,
    nullLossEventCount: 0,
    chartPointCount: () =>
      (polyline.getAttribute("points") ?? "").split(" ").filter(Boolean).length,
    stateText: () => stateEl.textContent ?? "",
    statusText: () => statusEl.textContent ?? "",
  };

  function render(snap: TrainSnapshot): void {
    state.training = snap;
    stateEl.textContent = snap.state;
    counterEl.textContent = `epoch ${snap.epoch} batch ${snap.batch}`;
    lossEl.textContent = snap.avgLoss === null ? "n/a" : snap.avgLoss.toFixed(6);
    statusEl.textContent = snap.status ?? "";
  }

  function renderChart(): void {
    const losses = state.lossHistory;
    if (losses.length === 0) {
      polyline.setAttribute("points", "");
      return;
    }
    const top = Math.max(...losses, 1e-9);
    const step = losses.length > 1 ? CHART_W / (losses.length - 1) : 0;
    const points = losses
      .map((loss, i) => `${(i * step).toFixed(1)},${(CHART_H - (loss / top) * CHART_H).toFixed(1)}`)
      .join(" ");
    polyline.setAttribute("points", points);
  }

  function onEvent(snap: TrainSnapshot): void {
    view.eventCount += 1;
    if (snap.avgLoss === null) {
      view.nullLossEventCount += 1;
    } else {
      state.lossHistory.push(snap.avgLoss);
    }
    render(snap);
    renderChart();
  }

  const stream = new EventStream<TrainSnapshot>(
    api.base + "/api/train/events",
    onEvent,
    {
      ...streamOpts,
      onStateChange: (connected) => {
        connEl.textContent = connected ? "stream: live" : "stream: reconnecting";
        streamOpts.onStateChange?.(connected);
      },
    },
  );

  function subscribe(): void {
    stream.start();
  }

  function dispose(): void {
    stream.stop();
  }

  async function start(): Promise<void> {
    // fresh run, fresh chart; the stream-count bookkeeping restarts with it
    state.lossHistory.length = 0;
    view.eventCount = 0;
    view.nullLossEventCount = 0;
    renderChart();
    const snap = await api.trainStart({
      epochs: Number(epochsInput.value),
      holdout: Number(holdoutInput.value),
      seed: Number(seedInput.value),
    });
    render(snap);
  }

  async function pause(): Promise<void> {
    render(await api.trainPause());
  }

  async function resume(): Promise<void> {
    render(await api.trainResume());
  }

  async function stopRun(): Promise<void> {
    render(await api.trainStop());
  }

  async function exportWeights(): Promise<void> {
    try {
      const res = await api.exportWeights();
      deviceEl.textContent = `exported ${res.files.length} files, ${res.binBytes} bytes`;
    } catch (err) {
      deviceEl.textContent = `export failed: ${err instanceof Error ? err.message : err}`;
    }
  }

  async function deployAndReboot(): Promise<void> {
    const deployed = await api.deploy();
    const boot = await api.rebootDevice();
    const lastLine = boot.bootLog[boot.bootLog.length - 1] ?? "";
    deviceEl.textContent = `deployed ${deployed.deployed.length} files; ${lastLine}`;
  }

  return view;
}
