/** Scripted UI session against the real service (simulator endpoint, mocked
 * camera, no hardware): capture three images per class, run training and
 * watch the dashboard, check the confusion matrix against the API payload,
 * and verify the heatmap canvas geometry and colors. */

import { afterAll, beforeAll, describe, expect, test } from "vitest";
import { createApp, type App } from "../src/app.js";
import { decodeBase64, expandNearest } from "../src/pixels.js";
import {
  FakeCamera,
  colormapReference,
  recordingFetch,
  sleep,
  startService,
  waitFor,
  type Service,
} from "./helpers.js";

const LABELS = ["0Blank", "1Cup", "2Pen"];

let service: Service;
let app: App;
let camera: FakeCamera;
const traffic: { method: string; url: string }[] = [];

beforeAll(async () => {
  service = await startService(64);
  camera = new FakeCamera(service.probeBytes);
  app = createApp({
    base: service.base,
    camera,
    fetchFn: recordingFetch(traffic),
    stream: { initialBackoffMs: 100, maxBackoffMs: 500 },
  });
  document.body.appendChild(app.el);
  await app.init();
});

afterAll(async () => {
  app?.dispose();
  await service?.stop();
});

describe("capture", () => {
  test("rows come from the server's class labels", () => {
    expect(app.capture.labels()).toEqual(LABELS);
    const rows = app.el.querySelectorAll(".capture-row");
    expect(Array.from(rows).map((r) => r.getAttribute("data-label"))).toEqual(LABELS);
  });

  test("three captures per class leave counters at (3,3,3)", async () => {
    // one capture through the actual button, the rest through the view API
    const firstButton = app.el.querySelector<HTMLButtonElement>(
      '.capture-row[data-label="0Blank"] button',
    );
    expect(firstButton).not.toBeNull();
    firstButton!.click();
    await waitFor(
      () => app.el.querySelector('.capture-row[data-label="0Blank"] .capture-count')
        ?.textContent === "1",
      10_000,
      "first capture counter",
    );

    await app.capture.captureOne("0Blank");
    await app.capture.captureOne("0Blank");
    for (const label of ["1Cup", "2Pen"]) {
      for (let i = 0; i < 3; i++) await app.capture.captureOne(label);
    }
    expect(camera.grabs).toBe(9);
    expect(app.capture.counts()).toEqual({ "0Blank": 3, "1Cup": 3, "2Pen": 3 });
  });

  test("counters equal server-side file counts after refresh", async () => {
    await app.capture.refreshCounts();
    expect(app.capture.counts()).toEqual({ "0Blank": 3, "1Cup": 3, "2Pen": 3 });
    for (const label of LABELS) {
      const listing = await app.api.sdList(`/${label}`);
      const files = listing.entries.filter((e) => !e.isDir);
      expect(files.length).toBe(app.capture.counts()[label]);
    }
    const counterTexts = Array.from(
      app.el.querySelectorAll(".capture-row .capture-count"),
    ).map((n) => n.textContent);
    expect(counterTexts).toEqual(["3", "3", "3"]);
  });

  test("camera failure is an inline message, page keeps working", async () => {
    const errorEl = app.el.querySelector(".camera-error")!;
    camera.denyOpen = true;
    const select = app.el.querySelector<HTMLSelectElement>(".camera-select")!;
    select.dispatchEvent(new Event("change"));
    await waitFor(() => !errorEl.hasAttribute("hidden"), 10_000, "camera error shown");
    expect(errorEl.textContent).toContain("Permission denied");
    camera.denyOpen = false;

    // a failed frame grab surfaces the same way and stores nothing
    const origGrab = camera.grabFrame.bind(camera);
    camera.grabFrame = async () => {
      throw new Error("no frame available");
    };
    await app.capture.captureOne("1Cup");
    camera.grabFrame = origGrab;
    expect(errorEl.textContent).toContain("no frame available");
    await app.capture.refreshCounts();
    expect(app.capture.counts()).toEqual({ "0Blank": 3, "1Cup": 3, "2Pen": 3 });

    // other sections keep responding
    await app.sd.open("/");
    expect(app.sd.entries().length).toBeGreaterThan(0);
  });
});

describe("training dashboard", () => {
  test("start, pause freezes the counters, resume, stop", async () => {
    app.el.querySelector<HTMLInputElement>("#train-epochs")!.value = "400";
    app.el.querySelector<HTMLInputElement>("#train-holdout")!.value = "0";
    app.el.querySelector<HTMLInputElement>("#train-seed")!.value = "3";
    await app.training.start();
    expect(app.training.stateText()).toBe("running");

    await waitFor(() => app.training.eventCount >= 2, 30_000, "first progress event");
    await app.training.pause();
    // Progress events emitted just before the pause landed may still be in
    // flight; let them drain before reading the frozen counters.
    await sleep(300);
    expect(app.training.stateText()).toBe("paused");
    const frozenBatch = app.state.training!.batch;
    await sleep(400);
    expect(app.state.training!.batch).toBe(frozenBatch);

    await app.training.resume();
    expect(app.training.stateText()).toBe("running");
    await waitFor(
      () => app.state.training!.batch > frozenBatch,
      30_000,
      "progress after resume",
    );
    await app.training.stop();
    await sleep(300);
    expect(app.training.stateText()).toBe("stopped");
  });

  test("a short run finishes; status label is one of the three verbatim", async () => {
    await sleep(300); // let the stopped run's last events drain
    app.el.querySelector<HTMLInputElement>("#train-epochs")!.value = "8";
    await app.training.start();
    await waitFor(() => app.training.stateText() === "finished", 60_000, "run finished");
    expect(["Improving", "Converging", "Well Trained"]).toContain(app.training.statusText());
    const counters = app.el.querySelector("#train-counters")!.textContent!;
    expect(counters).toContain("epoch 8");
  });

  test("loss chart length equals events received once losses exist", async () => {
    // let the tail of the stream drain
    await sleep(300);
    const points = app.training.chartPointCount();
    expect(points).toBeGreaterThan(0);
    expect(points).toBe(app.training.eventCount - app.training.nullLossEventCount);
    expect(points).toBe(app.state.lossHistory.length);
    expect(app.training.nullLossEventCount).toBeLessThanOrEqual(1);
  });
});

describe("confusion matrix", () => {
  test("cells equal the API payload", async () => {
    await app.confusion.refresh();
    const payload = await app.api.confusion();
    expect(payload.labels).toEqual(LABELS);
    payload.matrix.forEach((row, r) => {
      row.forEach((value, c) => {
        expect(app.confusion.cellText(r, c)).toBe(String(value));
      });
    });
    expect(app.el.querySelector(".confusion-total")!.textContent).toBe("9 images");
  });

  test("percent mode rows sum to 100 within rounding", async () => {
    app.confusion.toggleMode();
    expect(app.confusion.mode()).toBe("percent");
    for (let r = 0; r < 3; r++) {
      let sum = 0;
      for (let c = 0; c < 3; c++) sum += Number(app.confusion.cellText(r, c));
      expect(Math.abs(sum - 100)).toBeLessThanOrEqual(0.3);
    }
    app.confusion.toggleMode();
  });

  test("zero cells are uncolored, nonzero diagonal is green-shaded", async () => {
    const payload = await app.api.confusion();
    const table = app.el.querySelector(".confusion-table")!;
    payload.matrix.forEach((row, r) => {
      row.forEach((value, c) => {
        const td = table.querySelector<HTMLElement>(
          `td[data-row="${r}"][data-col="${c}"]`,
        )!;
        if (value === 0) {
          expect(td.style.backgroundColor).toBe("transparent");
        } else if (r === c) {
          expect(td.style.backgroundColor).toContain("22, 163, 74");
        } else {
          expect(td.style.backgroundColor).toContain("220, 38, 38");
        }
      });
    });
  });
});

describe("heatmap", () => {
  test("export, deploy, reboot puts weights on the device", async () => {
    // frames only flow once the simulated board has weights, like hardware
    await app.training.exportWeights();
    expect(app.training.deviceText()).toContain("exported 2 files");
    await app.training.deployAndReboot();
    expect(app.training.deviceText()).toContain("Weights loaded");
    expect((await app.api.deviceStatus()).weightsLoaded).toBe(true);
  });

  test("29x29 stream paints a 174x174 canvas", async () => {
    app.heatmap.watch();
    await waitFor(() => app.heatmap.frameCount >= 1, 60_000, "first heatmap frame");
    const frame = app.state.heatmapFrame!;
    expect(frame.rows).toBe(29);
    expect(frame.cols).toBe(29);
    expect(app.heatmap.canvas.width).toBe(174);
    expect(app.heatmap.canvas.height).toBe(174);
  });

  test("pixel (0,0) equals the core colormap of raw byte 0", () => {
    const frame = app.state.heatmapFrame!;
    const raw = decodeBase64(frame.data);
    const rgb = decodeBase64(frame.rgb);
    expect(raw.length).toBe(29 * 29);
    expect(rgb.length).toBe(29 * 29 * 3);
    const expected = colormapReference(raw[0]);
    expect([rgb[0], rgb[1], rgb[2]]).toEqual(expected);
    const rgba = expandNearest(rgb, frame.rows, frame.cols, 6);
    expect([rgba[0], rgba[1], rgba[2], rgba[3]]).toEqual([...expected, 255]);
  });

  test("unsubscribing turns the device stream off", async () => {
    app.heatmap.unwatch();
    await waitFor(
      async () => !(await app.api.deviceStatus()).heatmapOn,
      20_000,
      "heatmap off after last subscriber",
    );
    const count = app.heatmap.frameCount;
    await sleep(500);
    expect(app.heatmap.frameCount).toBe(count);
  });
});

describe("sd browser", () => {
  test("listing matches the API and navigation works", async () => {
    await app.sd.open("/");
    const names = app.sd.entries().map((e) => e.name).sort();
    expect(names).toContain("header");
    for (const label of LABELS) expect(names).toContain(label);

    await app.sd.open("/header");
    expect(app.sd.currentPath()).toBe("/header");
    const files = app.sd.entries();
    const listing = await app.api.sdList("/header");
    expect(files).toEqual(listing.entries);
    expect(files.some((e) => e.name === "config.json")).toBe(true);

    const rows = app.el.querySelectorAll(".sd-list tr");
    expect(rows.length).toBe(files.length);
  });
});

describe("config editor", () => {
  test("edits persist and unknown fields survive the UI round trip", async () => {
    // plant a field this UI knows nothing about
    const doc = await app.api.getConfig();
    await app.api.putConfig({ ...doc, customField: "keep me" });

    await app.config.load();
    expect(app.el.querySelector(".config-summary")!.textContent).toContain("input 64");
    app.config.setField("learningRate", "0.0005");
    await app.config.save();

    const updated = await app.api.getConfig();
    expect(updated.learningRate).toBe(0.0005);
    expect(updated.customField).toBe("keep me");

    // restore so nothing downstream trains at the altered rate
    app.config.setField("learningRate", "0.0003");
    await app.config.save();
    expect((await app.api.getConfig()).learningRate).toBe(0.0003);
  });

  test("a rejected config shows the server's message", async () => {
    app.config.setField("batchSize", "0");
    await app.config.save();
    const note = app.el.querySelector(".config-note")!.textContent!;
    expect(note).toContain("rejected");
    expect(note).toContain("batchSize");
    app.config.setField("batchSize", "6");
    await app.config.save();
    expect(app.el.querySelector(".config-note")!.textContent).toBe("saved");
  });
});

describe("thin client", () => {
  test("every request went to the service API, nowhere else", () => {
    expect(traffic.length).toBeGreaterThan(20);
    for (const { url } of traffic) {
      expect(url.startsWith(`${service.base}/api/`)).toBe(true);
    }
    const paths = new Set(traffic.map((t) => new URL(t.url).pathname));
    for (const used of [
      "/api/classes",
      "/api/capture",
      "/api/train/start",
      "/api/train/events",
      "/api/confusion",
      "/api/heatmap/events",
      "/api/config",
      "/api/sd",
    ]) {
      expect(paths).toContain(used);
    }
  });
});
