import * as http from "node:http";
import { afterEach, describe, expect, test } from "vitest";
import { decodeBase64, expandNearest } from "../src/pixels.js";
import { EventStream, SseParser } from "../src/sse.js";
import { cellColor, rowPercents } from "../src/views/confusion.js";

describe("sse parser", () => {
  test("reassembles events split across arbitrary chunk boundaries", () => {
    const parser = new SseParser();
    const wire = 'data: {"a": 1}\n\ndata: {"b": 2}\n\n';
    const got: string[] = [];
    for (const ch of wire) got.push(...parser.feed(ch));
    expect(got).toEqual(['{"a": 1}', '{"b": 2}']);
  });

  test("keep-alive comment blocks produce nothing", () => {
    const parser = new SseParser();
    expect(parser.feed(": keep-alive\n\n")).toEqual([]);
    expect(parser.feed('data: {"x": 1}\n\n')).toEqual(['{"x": 1}']);
  });

  test("multi-line data joins with newline", () => {
    const parser = new SseParser();
    expect(parser.feed("data: one\ndata: two\n\n")).toEqual(["one\ntwo"]);
  });
});

describe("event stream reconnect", () => {
  let server: http.Server | null = null;
  afterEach(() => {
    server?.close();
    server = null;
  });

  test("resubscribes after the server closes each connection", async () => {
    let served = 0;
    server = http.createServer((_req, res) => {
      served += 1;
      res.writeHead(200, { "content-type": "text/event-stream" });
      res.write(`data: {"n": ${served}}\n\n`);
      setTimeout(() => res.end(), 20);
    });
    await new Promise<void>((resolve) => server!.listen(0, "127.0.0.1", resolve));
    const port = (server!.address() as { port: number }).port;

    const seen: number[] = [];
    const transitions: boolean[] = [];
    const stream = new EventStream<{ n: number }>(
      `http://127.0.0.1:${port}/events`,
      (e) => seen.push(e.n),
      { initialBackoffMs: 30, maxBackoffMs: 100, onStateChange: (c) => transitions.push(c) },
    );
    stream.start();
    const deadline = Date.now() + 15_000;
    while (seen.length < 3 && Date.now() < deadline) {
      await new Promise((r) => setTimeout(r, 25));
    }
    stream.stop();
    expect(seen.length).toBeGreaterThanOrEqual(3);
    expect(stream.connections).toBeGreaterThanOrEqual(3);
    expect(seen.slice(0, 3)).toEqual([1, 2, 3]);
    expect(transitions).toContain(true);
    expect(transitions).toContain(false);

    // no new connections once stopped
    const settled = stream.connections;
    await new Promise((r) => setTimeout(r, 250));
    expect(stream.connections).toBe(settled);
  });
});

describe("pixel expansion", () => {
  test("base64 round trip", () => {
    const bytes = new Uint8Array([0, 1, 2, 250, 255]);
    const b64 = Buffer.from(bytes).toString("base64");
    expect(Array.from(decodeBase64(b64))).toEqual(Array.from(bytes));
  });

  test("nearest neighbor blocks at 3x", () => {
    // 2x2 frame, distinct corner colors
    const rgb = new Uint8Array([
      255, 0, 0,   0, 255, 0,
      0, 0, 255,   9, 9, 9,
    ]);
    const out = expandNearest(rgb, 2, 2, 3);
    expect(out.length).toBe(6 * 6 * 4);
    const px = (x: number, y: number) => {
      const i = (y * 6 + x) * 4;
      return [out[i], out[i + 1], out[i + 2], out[i + 3]];
    };
    expect(px(0, 0)).toEqual([255, 0, 0, 255]);
    expect(px(2, 2)).toEqual([255, 0, 0, 255]); // still inside the first block
    expect(px(3, 0)).toEqual([0, 255, 0, 255]);
    expect(px(0, 3)).toEqual([0, 0, 255, 255]);
    expect(px(5, 5)).toEqual([9, 9, 9, 255]);
  });

  test("length mismatch is rejected", () => {
    expect(() => expandNearest(new Uint8Array(5), 2, 2, 3)).toThrow();
  });
});

describe("confusion helpers", () => {
  test("row percentages sum to 100 within rounding", () => {
    for (const row of [[2, 1, 1], [7, 0, 2], [1, 1, 1]]) {
      const sum = rowPercents(row).reduce((a, b) => a + b, 0);
      expect(Math.abs(sum - 100)).toBeLessThan(1e-9);
    }
    expect(rowPercents([0, 0, 0])).toEqual([0, 0, 0]);
  });

  test("zero cells stay uncolored, scaling follows value", () => {
    expect(cellColor(0, 9, true)).toBe("transparent");
    expect(cellColor(0, 9, false)).toBe("transparent");
    const weak = cellColor(1, 9, false);
    const strong = cellColor(9, 9, false);
    expect(weak).toContain("220, 38, 38");
    expect(cellColor(9, 9, true)).toContain("22, 163, 74");
    const alpha = (c: string) => Number(c.slice(c.lastIndexOf(",") + 1, -1));
    expect(alpha(strong)).toBeGreaterThan(alpha(weak));
  });
});
