/** Capture section: camera preview plus one row per class label.
 *
 * Labels come from the server config (the single naming authority), never
 * from markup. Counters show whatever count the server last reported.
 */

import type { ApiClient } from "../api.js";
import type { CameraSource } from "../camera.js";
import { button, el } from "../dom.js";
import type { UiSessionState } from "../state.js";

export interface CaptureView {
  el: HTMLElement;
  init(): Promise<void>;
  captureOne(label: string): Promise<void>;
  refreshCounts(): Promise<void>;
  counts(): Record<string, number>;
  labels(): string[];
}

export function createCaptureView(
  api: ApiClient,
  camera: CameraSource,
  state: UiSessionState,
): CaptureView {
  const root = el("section", { id: "capture", class: "panel" });
  root.appendChild(el("h2", {}, "Capture"));

  const cameraSelect = el("select", { class: "camera-select" });
  const preview = el("video", { class: "camera-preview", autoplay: "", playsinline: "" });
  const cameraError = el("p", { class: "camera-error", hidden: "" });
  const rows = el("div", { class: "capture-rows" });
  const controls = el("div", { class: "camera-controls" });
  controls.appendChild(cameraSelect);
  controls.appendChild(button("Refresh counts", () => void refreshCounts()));
  root.appendChild(controls);
  root.appendChild(preview);
  root.appendChild(cameraError);
  root.appendChild(rows);

  let labelList: string[] = [];
  const countEls = new Map<string, HTMLElement>();

  function showCameraError(message: string): void {
    cameraError.textContent = message;
    cameraError.removeAttribute("hidden");
  }

  function renderCounts(): void {
    for (const label of labelList) {
      const span = countEls.get(label);
      if (span) span.textContent = String(state.captureCounts[label] ?? 0);
    }
  }

  function buildRows(): void {
    rows.textContent = "";
    countEls.clear();
    for (const label of labelList) {
      const row = el("div", { class: "capture-row", "data-label": label });
      row.appendChild(el("span", { class: "capture-label" }, label));
      const count = el("span", { class: "capture-count" }, "0");
      countEls.set(label, count);
      row.appendChild(count);
      row.appendChild(button("Capture", () => void captureOne(label)));
      rows.appendChild(row);
    }
    renderCounts();
  }

  async function captureOne(label: string): Promise<void> {
    let frame: Blob;
    try {
      frame = await camera.grabFrame();
    } catch (err) {
      showCameraError(String(err instanceof Error ? err.message : err));
      return;
    }
    const result = await api.capture(label, frame);
    state.captureCounts[result.label] = result.count;
    renderCounts();
  }

  async function refreshCounts(): Promise<void> {
    const payload = await api.getClasses();
    labelList = payload.labels;
    state.captureCounts = { ...payload.counts };
    if (countEls.size !== labelList.length) buildRows();
    renderCounts();
  }

  async function initCamera(): Promise<void> {
    let devices;
    try {
      devices = await camera.list();
    } catch (err) {
      showCameraError(`Camera unavailable: ${err instanceof Error ? err.message : err}`);
      return;
    }
    cameraSelect.textContent = "";
    for (const device of devices) {
      cameraSelect.appendChild(el("option", { value: device.id }, device.label));
    }
    cameraSelect.addEventListener("change", () => void openSelected());
    await openSelected();

    async function openSelected(): Promise<void> {
      const id = cameraSelect.value;
      try {
        await camera.open(id, preview);
        state.selectedCamera = id;
        cameraError.setAttribute("hidden", "");
      } catch (err) {
        // Denied permission must not take the rest of the page down.
        showCameraError(`Camera error: ${err instanceof Error ? err.message : err}`);
      }
    }
  }

  return {
    el: root,
    async init() {
      await refreshCounts();
      buildRows();
      await initCamera();
    },
    captureOne,
    refreshCounts,
    counts: () => ({ ...state.captureCounts }),
    labels: () => [...labelList],
  };
}
