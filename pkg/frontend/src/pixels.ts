/** Pixel plumbing for the heatmap canvas. The server already applied the
 * colormap; this module only unpacks base64 and scales up. */

export function decodeBase64(b64: string): Uint8Array {
  const bin = atob(b64);
  const out = new Uint8Array(bin.length);
  for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
  return out;
}

/** rows x cols RGB triples -> RGBA buffer at an integer scale, nearest
 * neighbor, fully opaque. Output is (cols*scale) x (rows*scale). */
export function expandNearest(
  rgb: Uint8Array,
  rows: number,
  cols: number,
  scale: number,
): Uint8ClampedArray<ArrayBuffer> {
  if (rgb.length !== rows * cols * 3) {
    throw new Error(`expected ${rows * cols * 3} bytes, got ${rgb.length}`);
  }
  const width = cols * scale;
  const height = rows * scale;
  const out = new Uint8ClampedArray(width * height * 4);
  for (let y = 0; y < height; y++) {
    const sy = Math.floor(y / scale);
    for (let x = 0; x < width; x++) {
      const sx = Math.floor(x / scale);
      const src = (sy * cols + sx) * 3;
      const dst = (y * width + x) * 4;
      out[dst] = rgb[src];
      out[dst + 1] = rgb[src + 1];
      out[dst + 2] = rgb[src + 2];
      out[dst + 3] = 255;
    }
  }
  return out;
}
