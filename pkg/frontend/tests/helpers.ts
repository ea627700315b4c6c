/** Spins up the real workbench service (simulator endpoint, no hardware)
 * against a throwaway project, and provides the fake camera the session
 * script captures with. */

import { execFileSync, spawn, type ChildProcess } from "node:child_process";
import * as fs from "node:fs";
import * as http from "node:http";
import * as os from "node:os";
import * as path from "node:path";
import type { CameraDevice, CameraSource } from "../src/camera.js";

const SETUP_SCRIPT = `
import os, sys
import numpy as np
from PIL import Image
from tinyvision import codec, dataset as ds

root, cam, size = sys.argv[1], sys.argv[2], int(sys.argv[3])
cfg = codec.default_config(("0Blank", "1Cup", "2Pen"), input_size=size)
ds.init_project(root, cfg)
os.makedirs(cam, exist_ok=True)
rng = np.random.default_rng(7)
for i in range(2):
    arr = rng.integers(0, 255, (size, size, 3), dtype=np.uint8)
    Image.fromarray(arr, "RGB").save(os.path.join(cam, f"f{i}.png"))
probe = rng.integers(0, 255, (size, size, 3), dtype=np.uint8)
Image.fromarray(probe, "RGB").save(os.path.join(os.path.dirname(root), "probe.png"))
`;

export interface Service {
  base: string;
  root: string;
  probeBytes: Uint8Array;
  stop(): Promise<void>;
}

export async function startService(inputSize: number): Promise<Service> {
  const tmp = fs.mkdtempSync(path.join(os.tmpdir(), "tv-ui-"));
  const root = path.join(tmp, "proj");
  const cam = path.join(tmp, "cam");
  execFileSync("python3", ["-c", SETUP_SCRIPT, root, cam, String(inputSize)]);
  const probeBytes = new Uint8Array(fs.readFileSync(path.join(tmp, "probe.png")));

  const port = 20000 + Math.floor(Math.random() * 20000);
  const base = `http://127.0.0.1:${port}`;
  const proc: ChildProcess = spawn(
    "python3",
    ["-m", "tinyvision.cli", "serve", "--project", root,
     "--port", String(port), "--camera-dir", cam],
    { stdio: ["ignore", "ignore", "pipe"] },
  );
  let stderr = "";
  proc.stderr?.on("data", (chunk: Buffer) => (stderr += chunk.toString()));

  // plain node request for the readiness poll; the DOM fetch logs refusals
  const probeOnce = () =>
    new Promise<boolean>((resolve) => {
      const req = http.get(`${base}/api/config`, (res) => {
        res.resume();
        resolve(res.statusCode === 200);
      });
      req.on("error", () => resolve(false));
      req.setTimeout(1000, () => {
        req.destroy();
        resolve(false);
      });
    });

  const deadline = Date.now() + 30_000;
  for (;;) {
    if (proc.exitCode !== null) {
      throw new Error(`service exited early (${proc.exitCode}): ${stderr}`);
    }
    if (await probeOnce()) break;
    if (Date.now() > deadline) {
      proc.kill("SIGKILL");
      throw new Error(`service never came up: ${stderr}`);
    }
    await sleep(150);
  }

  return {
    base,
    root,
    probeBytes,
    async stop() {
      proc.kill("SIGTERM");
      await new Promise<void>((resolve) => {
        const timer = setTimeout(() => {
          proc.kill("SIGKILL");
          resolve();
        }, 5000);
        proc.once("exit", () => {
          clearTimeout(timer);
          resolve();
        });
      });
      fs.rmSync(tmp, { recursive: true, force: true });
    },
  };
}

export function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export async function waitFor(
  check: () => boolean | Promise<boolean>,
  timeoutMs = 30_000,
  label = "condition",
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (await check()) return;
    await sleep(50);
  }
  throw new Error(`timed out waiting for ${label}`);
}

export class FakeCamera implements CameraSource {
  grabs = 0;
  denyOpen = false;

  constructor(private readonly frame: Uint8Array) {}

  async list(): Promise<CameraDevice[]> {
    return [{ id: "fake0", label: "Mock camera" }];
  }

  async open(_id: string, _preview: HTMLVideoElement): Promise<void> {
    if (this.denyOpen) throw new Error("Permission denied");
  }

  async grabFrame(): Promise<Blob> {
    this.grabs += 1;
    return new Blob([this.frame as BlobPart], { type: "image/png" });
  }
}

/** python oracle for the server-side colormap; the UI never computes it. */
export function colormapReference(value: number): [number, number, number] {
  const out = execFileSync("python3", [
    "-c",
    "import sys\nfrom tinyvision.protocol import colormap\nprint(*colormap(int(sys.argv[1])))",
    String(value),
  ]);
  const [r, g, b] = out.toString().trim().split(/\s+/).map(Number);
  return [r, g, b];
}

/** fetch wrapper that records method + url of every request. */
export function recordingFetch(log: { method: string; url: string }[]) {
  return (input: string, init?: RequestInit): Promise<Response> => {
    log.push({ method: (init?.method ?? "GET").toUpperCase(), url: input });
    return globalThis.fetch(input, init);
  };
}
