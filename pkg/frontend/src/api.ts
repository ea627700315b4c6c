/** Typed client for the workbench HTTP API.
 *
 * Every request funnels through one method so a test (or a debug build) can
 * watch the traffic by injecting a wrapped fetch. The UI computes nothing
 * itself; whatever it displays arrived in one of these payloads.
 */

export interface ConfigDoc {
  version: number;
  inputSize: number;
  numClasses: number;
  classLabels: string[];
  learningRate: number;
  batchSize: number;
  targetEpochs: number;
  useAugmentation: boolean;
  useGrayscale: boolean;
  imagesToPsram: boolean;
  validationImages: number;
  weightsFile: string;
  [extra: string]: unknown;
}

export interface TrainSnapshot {
  state: string;
  batch: number;
  epoch: number;
  targetEpochs: number | null;
  avgLoss: number | null;
  status: string | null;
  error: string | null;
  event?: string;
}

export interface TrainStartOpts {
  epochs?: number;
  batchSize?: number;
  learningRate?: number;
  mode?: "all" | "random";
  seed?: number;
  augment?: boolean;
  holdout?: number;
}

export interface ClassCounts {
  labels: string[];
  counts: Record<string, number>;
}

export interface CaptureResult {
  path: string;
  label: string;
  count: number;
}

export interface SdEntry {
  name: string;
  isDir: boolean;
  size: number;
}

export interface SdListing {
  path: string;
  entries: SdEntry[];
}

export interface ConfusionPayload {
  labels: string[];
  matrix: number[][];
  total: number;
}

export interface HeatmapFramePayload {
  rows: number;
  cols: number;
  data: string; // base64 raw heatmap bytes
  rgb: string;  // base64 colormapped RGB triples
}

export interface DeviceStatus {
  connected: boolean;
  endpoint: string | null;
  simulated: boolean;
  weightsLoaded: boolean;
  heatmapOn: boolean;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private readonly fetchFn: FetchLike;

  constructor(readonly base: string, fetchFn?: FetchLike) {
    this.fetchFn = fetchFn ?? ((input, init) => globalThis.fetch(input, init));
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const res = await this.fetchFn(this.base + path, init);
    if (!res.ok) {
      let message = `${res.status}`;
      try {
        const body = (await res.json()) as { error?: { message?: string } };
        if (body.error?.message) message = body.error.message;
      } catch {
        // non-JSON error body, keep the status text
      }
      throw new ApiError(res.status, message);
    }
    return res;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.request(path, init);
    return (await res.json()) as T;
  }

  getConfig(): Promise<ConfigDoc> {
    return this.json("/api/config");
  }

  putConfig(doc: ConfigDoc): Promise<ConfigDoc> {
    return this.json("/api/config", { method: "PUT", body: JSON.stringify(doc) });
  }

  getClasses(): Promise<ClassCounts> {
    return this.json("/api/classes");
  }

  async capture(label: string, image: Blob | Uint8Array): Promise<CaptureResult> {
    // Blob bodies vary across fetch implementations; a plain buffer does not.
    const body: ArrayBuffer = image instanceof Uint8Array
      ? image.slice().buffer
      : await image.arrayBuffer();
    return this.json(`/api/capture?label=${encodeURIComponent(label)}`, {
      method: "POST",
      body,
    });
  }

  sdList(path: string): Promise<SdListing> {
    return this.json(`/api/sd?path=${encodeURIComponent(path)}`);
  }

  async sdReadFile(path: string): Promise<Uint8Array> {
    const res = await this.request(`/api/sd/file?path=${encodeURIComponent(path)}`);
    return new Uint8Array(await res.arrayBuffer());
  }

  sdDeleteFile(path: string): Promise<{ deleted: string }> {
    return this.json(`/api/sd/file?path=${encodeURIComponent(path)}`, { method: "DELETE" });
  }

  sdDeleteDir(path: string): Promise<{ deleted: string }> {
    return this.json(`/api/sd/dir?path=${encodeURIComponent(path)}`, { method: "DELETE" });
  }

  trainStart(opts: TrainStartOpts): Promise<TrainSnapshot> {
    return this.json("/api/train/start", { method: "POST", body: JSON.stringify(opts) });
  }

  trainPause(): Promise<TrainSnapshot> {
    return this.json("/api/train/pause", { method: "POST" });
  }

  trainResume(): Promise<TrainSnapshot> {
    return this.json("/api/train/resume", { method: "POST" });
  }

  trainStop(): Promise<TrainSnapshot> {
    return this.json("/api/train/stop", { method: "POST" });
  }

  trainStatus(): Promise<TrainSnapshot> {
    return this.json("/api/train/status");
  }

  confusion(): Promise<ConfusionPayload> {
    return this.json("/api/confusion");
  }

  exportWeights(): Promise<{ files: string[]; binBytes: number }> {
    return this.json("/api/export", { method: "POST" });
  }

  deploy(): Promise<{ deployed: string[] }> {
    return this.json("/api/deploy", { method: "POST" });
  }

  rebootDevice(): Promise<{ bootLog: string[] }> {
    return this.json("/api/device/reboot", { method: "POST" });
  }

  deviceStatus(): Promise<DeviceStatus> {
    return this.json("/api/device/status");
  }
}
