/** Image decoding and preprocessing.
 *
 * Supported containers: binary PGM (P5), binary PPM (P6), and uncompressed
 * 24-bit BMP. Everything is reduced to a grayscale float image in [0, 1]
 * and bilinearly resampled to the encoder's input resolution.
 */

export interface GrayImage {
  width: number;
  height: number;
  pixels: Float64Array; // row-major, [0, 1]
}

export class DecodeError extends Error {}

function parseNetpbmHeader(buf: Buffer): { fields: number[]; offset: number } {
  // magic, width, height, maxval as whitespace-separated tokens with
  // '#' comments; pixel data starts after the single whitespace byte
  // that terminates maxval
  const fields: number[] = [];
  let i = 2;
  while (fields.length < 3) {
    while (i < buf.length && /\s/.test(String.fromCharCode(buf[i]))) i++;
    if (i < buf.length && buf[i] === 0x23) {
      while (i < buf.length && buf[i] !== 0x0a) i++;
      continue;
    }
    let start = i;
    while (i < buf.length && !/\s/.test(String.fromCharCode(buf[i]))) i++;
    if (start === i) throw new DecodeError('truncated netpbm header');
    fields.push(parseInt(buf.subarray(start, i).toString('ascii'), 10));
  }
  return { fields, offset: i + 1 };
}

function decodePgm(buf: Buffer): GrayImage {
  const { fields, offset } = parseNetpbmHeader(buf);
  const [width, height, maxval] = fields;
  if (!(width > 0 && height > 0 && maxval > 0 && maxval < 256)) {
    throw new DecodeError('bad PGM dimensions');
  }
  if (buf.length < offset + width * height) {
    throw new DecodeError('PGM pixel data truncated');
  }
  const pixels = new Float64Array(width * height);
  for (let p = 0; p < width * height; p++) {
    pixels[p] = buf[offset + p] / maxval;
  }
  return { width, height, pixels };
}

function decodePpm(buf: Buffer): GrayImage {
  const { fields, offset } = parseNetpbmHeader(buf);
  const [width, height, maxval] = fields;
  if (!(width > 0 && height > 0 && maxval > 0 && maxval < 256)) {
    throw new DecodeError('bad PPM dimensions');
  }
  if (buf.length < offset + 3 * width * height) {
    throw new DecodeError('PPM pixel data truncated');
  }
  const pixels = new Float64Array(width * height);
  for (let p = 0; p < width * height; p++) {
    const r = buf[offset + 3 * p];
    const g = buf[offset + 3 * p + 1];
    const b = buf[offset + 3 * p + 2];
    pixels[p] = (0.299 * r + 0.587 * g + 0.114 * b) / maxval;
  }
  return { width, height, pixels };
}

function decodeBmp(buf: Buffer): GrayImage {
  if (buf.length < 54) throw new DecodeError('BMP header truncated');
  const dataOffset = buf.readUInt32LE(10);
  const width = buf.readInt32LE(18);
  const heightRaw = buf.readInt32LE(22);
  const bpp = buf.readUInt16LE(28);
  const compression = buf.readUInt32LE(30);
  if (bpp !== 24 || compression !== 0) {
    throw new DecodeError(`unsupported BMP variant (bpp=${bpp})`);
  }
  const height = Math.abs(heightRaw);
  const topDown = heightRaw < 0;
  const rowSize = Math.ceil((3 * width) / 4) * 4; // rows pad to 4 bytes
  if (buf.length < dataOffset + rowSize * height) {
    throw new DecodeError('BMP pixel data truncated');
  }
  const pixels = new Float64Array(width * height);
  for (let y = 0; y < height; y++) {
    const srcRow = topDown ? y : height - 1 - y;
    for (let x = 0; x < width; x++) {
      const o = dataOffset + srcRow * rowSize + 3 * x;
      const b = buf[o];
      const g = buf[o + 1];
      const r = buf[o + 2];
      pixels[y * width + x] = (0.299 * r + 0.587 * g + 0.114 * b) / 255;
    }
  }
  return { width, height, pixels };
}

export function decodeImage(buf: Buffer): GrayImage {
  if (buf.length >= 2 && buf[0] === 0x50 && buf[1] === 0x35) return decodePgm(buf);
  if (buf.length >= 2 && buf[0] === 0x50 && buf[1] === 0x36) return decodePpm(buf);
  if (buf.length >= 2 && buf[0] === 0x42 && buf[1] === 0x4d) return decodeBmp(buf);
  throw new DecodeError('unrecognized image container');
}

/** Bilinear resample to size x size. */
export function resize(img: GrayImage, size: number): Float64Array {
  const out = new Float64Array(size * size);
  const sx = img.width / size;
  const sy = img.height / size;
  for (let y = 0; y < size; y++) {
    const fy = Math.min((y + 0.5) * sy - 0.5, img.height - 1);
    const y0 = Math.max(0, Math.floor(fy));
    const y1 = Math.min(img.height - 1, y0 + 1);
    const wy = fy - y0;
    for (let x = 0; x < size; x++) {
      const fx = Math.min((x + 0.5) * sx - 0.5, img.width - 1);
      const x0 = Math.max(0, Math.floor(fx));
      const x1 = Math.min(img.width - 1, x0 + 1);
      const wx = fx - x0;
      const p = img.pixels;
      const top = p[y0 * img.width + x0] * (1 - wx) + p[y0 * img.width + x1] * wx;
      const bot = p[y1 * img.width + x0] * (1 - wx) + p[y1 * img.width + x1] * wx;
      out[y * size + x] = top * (1 - wy) + bot * wy;
    }
  }
  return out;
}
