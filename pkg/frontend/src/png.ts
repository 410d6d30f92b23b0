/**
 * Minimal deterministic PNG codec for 8-bit grayscale images.
 *
 * The encoder emits stored (uncompressed) deflate blocks, so identical
 * pixel buffers always produce identical bytes in any runtime, and the
 * output stays a valid PNG for the service side.  The decoder handles
 * exactly the subset the encoder emits (used by the round-trip test).
 */

const SIGNATURE = [0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a];

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

function crc32(data: Uint8Array): number {
  let c = 0xffffffff;
  for (let i = 0; i < data.length; i++) {
    c = CRC_TABLE[(c ^ data[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

function adler32(data: Uint8Array): number {
  let a = 1;
  let b = 0;
  for (let i = 0; i < data.length; i++) {
    a = (a + data[i]) % 65521;
    b = (b + a) % 65521;
  }
  return ((b << 16) | a) >>> 0;
}

function u32be(value: number): number[] {
  return [(value >>> 24) & 0xff, (value >>> 16) & 0xff, (value >>> 8) & 0xff, value & 0xff];
}

function chunk(type: string, data: Uint8Array): number[] {
  const typed = new Uint8Array(4 + data.length);
  for (let i = 0; i < 4; i++) typed[i] = type.charCodeAt(i);
  typed.set(data, 4);
  return [...u32be(data.length), ...typed, ...u32be(crc32(typed))];
}

export function encodeGrayPng(pixels: Uint8ClampedArray | Uint8Array, size: number): Uint8Array {
  if (pixels.length !== size * size) {
    throw new Error(`pixel buffer length ${pixels.length} != ${size}x${size}`);
  }
  const ihdr = new Uint8Array([...u32be(size), ...u32be(size), 8, 0, 0, 0, 0]);

  // raw scanlines: filter byte 0 + row bytes
  const raw = new Uint8Array(size * (size + 1));
  for (let y = 0; y < size; y++) {
    raw[y * (size + 1)] = 0;
    raw.set(pixels.subarray(y * size, (y + 1) * size), y * (size + 1) + 1);
  }

  // zlib stream with stored deflate blocks
  const blocks: number[] = [0x78, 0x01];
  const maxBlock = 65535;
  for (let off = 0; off < raw.length; off += maxBlock) {
    const len = Math.min(maxBlock, raw.length - off);
    const final = off + len >= raw.length ? 1 : 0;
    blocks.push(final, len & 0xff, (len >>> 8) & 0xff, ~len & 0xff, (~len >>> 8) & 0xff);
    for (let i = 0; i < len; i++) blocks.push(raw[off + i]);
  }
  blocks.push(...u32be(adler32(raw)));

  const out = [
    ...SIGNATURE,
    ...chunk("IHDR", ihdr),
    ...chunk("IDAT", new Uint8Array(blocks)),
    ...chunk("IEND", new Uint8Array(0)),
  ];
  return new Uint8Array(out);
}

export interface DecodedPng {
  size: number;
  pixels: Uint8ClampedArray;
}

export function decodeGrayPng(data: Uint8Array): DecodedPng {
  for (let i = 0; i < 8; i++) {
    if (data[i] !== SIGNATURE[i]) throw new Error("not a PNG file");
  }
  let off = 8;
  let size = 0;
  const idat: number[] = [];
  while (off < data.length) {
    const len = (data[off] << 24) | (data[off + 1] << 16) | (data[off + 2] << 8) | data[off + 3];
    const type = String.fromCharCode(data[off + 4], data[off + 5], data[off + 6], data[off + 7]);
    const body = data.subarray(off + 8, off + 8 + len);
    if (type === "IHDR") {
      const width = (body[0] << 24) | (body[1] << 16) | (body[2] << 8) | body[3];
      const height = (body[4] << 24) | (body[5] << 16) | (body[6] << 8) | body[7];
      if (width !== height) throw new Error("expected a square image");
      if (body[8] !== 8 || body[9] !== 0) throw new Error("expected 8-bit grayscale");
      size = width;
    } else if (type === "IDAT") {
      for (let i = 0; i < body.length; i++) idat.push(body[i]);
    } else if (type === "IEND") {
      break;
    }
    off += 12 + len;
  }
  if (size === 0) throw new Error("missing IHDR");

  // inflate: stored blocks only (what our encoder writes)
  const z = new Uint8Array(idat);
  let p = 2; // skip zlib header
  const raw: number[] = [];
  for (;;) {
    const header = z[p++];
    const btype = (header >>> 1) & 3;
    if (btype !== 0) throw new Error("only stored deflate blocks supported");
    const len = z[p] | (z[p + 1] << 8);
    p += 4;
    for (let i = 0; i < len; i++) raw.push(z[p + i]);
    p += len;
    if (header & 1) break;
  }
  const pixels = new Uint8ClampedArray(size * size);
  for (let y = 0; y < size; y++) {
    if (raw[y * (size + 1)] !== 0) throw new Error("only filter 0 supported");
    for (let x = 0; x < size; x++) {
      pixels[y * size + x] = raw[y * (size + 1) + 1 + x];
    }
  }
  return { size, pixels };
}

export function toBase64(data: Uint8Array): string {
  if (typeof btoa === "function") {
    let bin = "";
    for (let i = 0; i < data.length; i++) bin += String.fromCharCode(data[i]);
    return btoa(bin);
  }
  return Buffer.from(data).toString("base64");
}

/** Stable content hash (FNV-1a, hex) for export stability checks. */
export function contentHash(data: Uint8Array): string {
  let h = 0x811c9dc5;
  for (let i = 0; i < data.length; i++) {
    h ^= data[i];
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h.toString(16).padStart(8, "0");
}
