// Minimal PNG codec covering the dataset formats: 8-bit grayscale/RGB/RGBA
// and 16-bit grayscale, non-interlaced. Encoding always uses filter 0;
// decoding understands all five standard row filters so server-produced
// PNGs (which are usually filtered) parse correctly.

import { unzlibSync, zlibSync } from "fflate";

export interface PngImage {
  width: number;
  height: number;
  channels: 1 | 3 | 4;
  bitDepth: 8 | 16;
  data: Uint8Array | Uint16Array; // row-major, interleaved samples
}

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(bytes: Uint8Array): number {
  let crc = 0xffffffff;
  for (let i = 0; i < bytes.length; i++) {
    crc = CRC_TABLE[(crc ^ bytes[i]) & 0xff] ^ (crc >>> 8);
  }
  return (crc ^ 0xffffffff) >>> 0;
}

function chunk(type: string, payload: Uint8Array): Uint8Array {
  const out = new Uint8Array(12 + payload.length);
  const view = new DataView(out.buffer);
  view.setUint32(0, payload.length);
  for (let i = 0; i < 4; i++) out[4 + i] = type.charCodeAt(i);
  out.set(payload, 8);
  out.set(new Uint8Array(4), 8 + payload.length);
  view.setUint32(8 + payload.length, crc32(out.subarray(4, 8 + payload.length)));
  return out;
}

function colorType(channels: number): number {
  if (channels === 1) return 0;
  if (channels === 3) return 2;
  if (channels === 4) return 6;
  throw new Error(`unsupported channel count ${channels}`);
}

export function encodePng(img: PngImage): Uint8Array {
  const { width, height, channels, bitDepth } = img;
  if (bitDepth === 16 && channels !== 1) {
    throw new Error("16-bit encoding supported for grayscale only");
  }
  const bytesPerSample = bitDepth / 8;
  const stride = width * channels * bytesPerSample;
  const raw = new Uint8Array((stride + 1) * height);
  for (let y = 0; y < height; y++) {
    const rowStart = y * (stride + 1);
    raw[rowStart] = 0; // filter: None
    for (let x = 0; x < width * channels; x++) {
      const v = img.data[y * width * channels + x];
      if (bitDepth === 8) {
        raw[rowStart + 1 + x] = v;
      } else {
        raw[rowStart + 1 + 2 * x] = (v >> 8) & 0xff;
        raw[rowStart + 2 + 2 * x] = v & 0xff;
      }
    }
  }
  const ihdr = new Uint8Array(13);
  const view = new DataView(ihdr.buffer);
  view.setUint32(0, width);
  view.setUint32(4, height);
  ihdr[8] = bitDepth;
  ihdr[9] = colorType(channels);
  const idat = zlibSync(raw, { level: 6 });
  const parts = [
    new Uint8Array(SIGNATURE),
    chunk("IHDR", ihdr),
    chunk("IDAT", idat),
    chunk("IEND", new Uint8Array(0)),
  ];
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const p of parts) {
    out.set(p, offset);
    offset += p.length;
  }
  return out;
}

function paeth(a: number, b: number, c: number): number {
  const p = a + b - c;
  const pa = Math.abs(p - a);
  const pb = Math.abs(p - b);
  const pc = Math.abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

export function decodePng(bytes: Uint8Array): PngImage {
  for (let i = 0; i < 8; i++) {
    if (bytes[i] !== SIGNATURE[i]) throw new Error("not a PNG file");
  }
  let width = 0;
  let height = 0;
  let bitDepth: 8 | 16 = 8;
  let channels: 1 | 3 | 4 = 1;
  const idatParts: Uint8Array[] = [];
  let pos = 8;
  while (pos < bytes.length) {
    const view = new DataView(bytes.buffer, bytes.byteOffset + pos);
    const length = view.getUint32(0);
    const type = String.fromCharCode(bytes[pos + 4], bytes[pos + 5], bytes[pos + 6], bytes[pos + 7]);
    const payload = bytes.subarray(pos + 8, pos + 8 + length);
    if (type === "IHDR") {
      const hv = new DataView(payload.buffer, payload.byteOffset);
      width = hv.getUint32(0);
      height = hv.getUint32(4);
      const depth = payload[8];
      const color = payload[9];
      if (payload[12] !== 0) throw new Error("interlaced PNG not supported");
      if (depth !== 8 && depth !== 16) throw new Error(`unsupported bit depth ${depth}`);
      bitDepth = depth as 8 | 16;
      if (color === 0) channels = 1;
      else if (color === 2) channels = 3;
      else if (color === 6) channels = 4;
      else throw new Error(`unsupported color type ${color}`);
      if (bitDepth === 16 && channels !== 1) {
        throw new Error("16-bit decoding supported for grayscale only");
      }
    } else if (type === "IDAT") {
      idatParts.push(payload);
    } else if (type === "IEND") {
      break;
    }
    pos += 12 + length;
  }
  const compressed = new Uint8Array(idatParts.reduce((n, p) => n + p.length, 0));
  let off = 0;
  for (const p of idatParts) {
    compressed.set(p, off);
    off += p.length;
  }
  const raw = unzlibSync(compressed);
  const bytesPerSample = bitDepth / 8;
  const bpp = channels * bytesPerSample;
  const stride = width * bpp;
  const unfiltered = new Uint8Array(stride * height);
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)];
    const row = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1));
    const out = unfiltered.subarray(y * stride, (y + 1) * stride);
    const prev = y > 0 ? unfiltered.subarray((y - 1) * stride, y * stride) : null;
    for (let x = 0; x < stride; x++) {
      const a = x >= bpp ? out[x - bpp] : 0;
      const b = prev ? prev[x] : 0;
      const c = prev && x >= bpp ? prev[x - bpp] : 0;
      let v = row[x];
      if (filter === 1) v += a;
      else if (filter === 2) v += b;
      else if (filter === 3) v += (a + b) >> 1;
      else if (filter === 4) v += paeth(a, b, c);
      else if (filter !== 0) throw new Error(`unknown row filter ${filter}`);
      out[x] = v & 0xff;
    }
  }
  if (bitDepth === 8) {
    return { width, height, channels, bitDepth, data: unfiltered };
  }
  const data = new Uint16Array(width * height);
  for (let i = 0; i < data.length; i++) {
    data[i] = (unfiltered[2 * i] << 8) | unfiltered[2 * i + 1];
  }
  return { width, height, channels: 1, bitDepth: 16, data };
}

export function b64encode(bytes: Uint8Array): string {
  if (typeof Buffer !== "undefined") {
    return Buffer.from(bytes).toString("base64");
  }
  let binary = "";
  for (let i = 0; i < bytes.length; i++) binary += String.fromCharCode(bytes[i]);
  return btoa(binary);
}

export function b64decode(text: string): Uint8Array {
  if (typeof Buffer !== "undefined") {
    return new Uint8Array(Buffer.from(text, "base64"));
  }
  const binary = atob(text);
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) out[i] = binary.charCodeAt(i);
  return out;
}
