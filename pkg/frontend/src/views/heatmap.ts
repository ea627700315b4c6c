/** Live activation heatmap: rows x cols server-colormapped RGB cells painted
 * at a fixed 6x nearest-neighbor scale (29x29 stream -> 174x174 canvas).
 * Subscribing turns the device stream on; the server switches it back off
 * when the last subscriber leaves. */

import { el, button } from "../dom.js";
import type { HeatmapFramePayload } from "../api.js";
import { decodeBase64, expandNearest } from "../pixels.js";
import { EventStream, type EventStreamOptions } from "../sse.js";
import type { UiSessionState } from "../state.js";

export const HEATMAP_SCALE = 6;

export interface HeatmapView {
  el: HTMLElement;
  watch(): void;
  unwatch(): void;
  frameCount: number;
  canvas: HTMLCanvasElement;
}

export function createHeatmapView(
  base: string,
  state: UiSessionState,
  streamOpts: EventStreamOptions = {},
): HeatmapView {
  const root = el("section", { id: "heatmap", class: "panel" });
  root.appendChild(el("h2", {}, "Heatmap"));
  const controls = el("div", {});
  controls.appendChild(button("Watch", () => view.watch()));
  controls.appendChild(button("Stop", () => view.unwatch()));
  root.appendChild(controls);
  const caption = el("p", { class: "heatmap-caption" }, "not watching");
  root.appendChild(caption);
  const canvas = el("canvas", { class: "heatmap-canvas" });
  canvas.width = 0;
  canvas.height = 0;
  root.appendChild(canvas);

  function paint(frame: HeatmapFramePayload): void {
    state.heatmapFrame = frame;
    view.frameCount += 1;
    const width = frame.cols * HEATMAP_SCALE;
    const height = frame.rows * HEATMAP_SCALE;
    if (canvas.width !== width) canvas.width = width;
    if (canvas.height !== height) canvas.height = height;
    caption.textContent = `${frame.rows}x${frame.cols} at ${HEATMAP_SCALE}x`;
    const ctx = canvas.getContext("2d");
    if (ctx) {
      const rgba = expandNearest(decodeBase64(frame.rgb), frame.rows, frame.cols, HEATMAP_SCALE);
      ctx.putImageData(new ImageData(rgba, width, height), 0, 0);
    }
  }

  const stream = new EventStream<HeatmapFramePayload>(
    base + "/api/heatmap/events",
    paint,
    streamOpts,
  );

  const view: HeatmapView = {
    el: root,
    frameCount: 0,
    canvas,
    watch() {
      caption.textContent = "waiting for frames";
      stream.start();
    },
    unwatch() {
      stream.stop();
      caption.textContent = "not watching";
    },
  };
  return view;
}
