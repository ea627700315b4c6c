/** What the page knows at any moment. Views write into this as payloads
 * arrive; nothing in here is computed client-side. */

import type { ConfigDoc, HeatmapFramePayload, SdEntry, TrainSnapshot } from "./api.js";

export interface UiSessionState {
  selectedCamera: string | null;
  captureCounts: Record<string, number>;
  training: TrainSnapshot | null;
  lossHistory: number[];
  heatmapFrame: HeatmapFramePayload | null;
  sdTree: Record<string, SdEntry[]>;
  configDoc: ConfigDoc | null;
}

export function emptyState(): UiSessionState {
  return {
    selectedCamera: null,
    captureCounts: {},
    training: null,
    lossHistory: [],
    heatmapFrame: null,
    sdTree: {},
    configDoc: null,
  };
}
