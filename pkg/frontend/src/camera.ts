/** Camera access behind a small interface so tests can substitute a fake. */

export interface CameraDevice {
  id: string;
  label: string;
}

export interface CameraSource {
  list(): Promise<CameraDevice[]>;
  /** Start streaming into the preview element. Rejects on denied permission. */
  open(id: string, preview: HTMLVideoElement): Promise<void>;
  /** Encode the current frame as an image. */
  grabFrame(): Promise<Blob>;
}

export class MediaDevicesCamera implements CameraSource {
  private video: HTMLVideoElement | null = null;
  private stream: MediaStream | null = null;

  async list(): Promise<CameraDevice[]> {
    const devices = await navigator.mediaDevices.enumerateDevices();
    return devices
      .filter((d) => d.kind === "videoinput")
      .map((d, i) => ({ id: d.deviceId, label: d.label || `Camera ${i + 1}` }));
  }

  async open(id: string, preview: HTMLVideoElement): Promise<void> {
    this.stream?.getTracks().forEach((t) => t.stop());
    this.stream = await navigator.mediaDevices.getUserMedia({
      video: id ? { deviceId: { exact: id } } : true,
    });
    this.video = preview;
    preview.srcObject = this.stream;
    await preview.play();
  }

  async grabFrame(): Promise<Blob> {
    const video = this.video;
    if (!video || video.videoWidth === 0) throw new Error("camera is not streaming");
    const canvas = document.createElement("canvas");
    canvas.width = video.videoWidth;
    canvas.height = video.videoHeight;
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("no 2d canvas support");
    ctx.drawImage(video, 0, 0);
    return new Promise((resolve, reject) => {
      canvas.toBlob(
        (blob) => (blob ? resolve(blob) : reject(new Error("frame encode failed"))),
        "image/jpeg",
        0.9,
      );
    });
  }
}
