/** Assembles the six sections into one scrolling page and wires shared
 * dependencies (API client, camera, event-stream options) into the views. */

import { ApiClient } from "./api.js";
import type { CameraSource } from "./camera.js";
import { el } from "./dom.js";
import type { EventStreamOptions, FetchLike } from "./sse.js";
import { emptyState, type UiSessionState } from "./state.js";
import { createCaptureView, type CaptureView } from "./views/capture.js";
import { createConfigView, type ConfigView } from "./views/config.js";
import { createConfusionView, type ConfusionView } from "./views/confusion.js";
import { createHeatmapView, type HeatmapView } from "./views/heatmap.js";
import { createSdView, type SdView } from "./views/sd.js";
import { createTrainingView, type TrainingView } from "./views/training.js";

export interface AppDeps {
  base: string;
  camera: CameraSource;
  fetchFn?: FetchLike;
  stream?: EventStreamOptions;
}

export interface App {
  el: HTMLElement;
  state: UiSessionState;
  api: ApiClient;
  capture: CaptureView;
  training: TrainingView;
  confusion: ConfusionView;
  heatmap: HeatmapView;
  sd: SdView;
  config: ConfigView;
  init(): Promise<void>;
  dispose(): void;
}

export function createApp(deps: AppDeps): App {
  const state = emptyState();
  const api = new ApiClient(deps.base, deps.fetchFn);
  const stream: EventStreamOptions = { fetchFn: deps.fetchFn, ...deps.stream };

  const capture = createCaptureView(api, deps.camera, state);
  const training = createTrainingView(api, state, stream);
  const confusion = createConfusionView(api);
  const heatmap = createHeatmapView(deps.base, state, stream);
  const sd = createSdView(api, state);
  const config = createConfigView(api, state);

  const root = el("main", { class: "workbench" });
  root.appendChild(el("h1", {}, "tinyvision"));
  for (const view of [capture, training, confusion, heatmap, sd, config]) {
    root.appendChild(view.el);
  }

  return {
    el: root,
    state,
    api,
    capture,
    training,
    confusion,
    heatmap,
    sd,
    config,
    async init() {
      await capture.init();
      await config.load();
      training.subscribe();
    },
    dispose() {
      training.dispose();
      heatmap.unwatch();
    },
  };
}
