/** Synthetic image fixtures for the extraction tests. */
import { mkdir, writeFile } from 'fs/promises';
import * as path from 'path';

/** Binary PGM with a deterministic gradient-plus-stripes pattern. */
export function makePgm(width: number, height: number, phase: number): Buffer {
  const header = Buffer.from(`P5\n${width} ${height}\n255\n`, 'ascii');
  const pixels = Buffer.alloc(width * height);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const stripe = (x + phase) % 8 < 4 ? 40 : 0;
      pixels[y * width + x] = Math.min(255, Math.floor((255 * y) / height) + stripe);
    }
  }
  return Buffer.concat([header, pixels]);
}

/** 24-bit uncompressed BMP, solid color with a diagonal. */
export function makeBmp(size: number, r: number, g: number, b: number): Buffer {
  const rowSize = Math.ceil((3 * size) / 4) * 4;
  const dataSize = rowSize * size;
  const buf = Buffer.alloc(54 + dataSize);
  buf.write('BM', 0, 'ascii');
  buf.writeUInt32LE(54 + dataSize, 2);
  buf.writeUInt32LE(54, 10);
  buf.writeUInt32LE(40, 14);
  buf.writeInt32LE(size, 18);
  buf.writeInt32LE(size, 22);
  buf.writeUInt16LE(1, 26);
  buf.writeUInt16LE(24, 28);
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const o = 54 + y * rowSize + 3 * x;
      const onDiag = Math.abs(x - y) < 2;
      buf[o] = onDiag ? 255 : b;
      buf[o + 1] = onDiag ? 255 : g;
      buf[o + 2] = onDiag ? 255 : r;
    }
  }
  return buf;
}

/** Write a class-per-subdirectory image root with three images per class. */
export async function writeImageRoot(root: string, classNames: string[]): Promise<void> {
  for (let c = 0; c < classNames.length; c++) {
    const dir = path.join(root, classNames[c]);
    await mkdir(dir, { recursive: true });
    await writeFile(path.join(dir, 'img_0.pgm'), makePgm(40, 30, 3 * c));
    await writeFile(path.join(dir, 'img_1.pgm'), makePgm(64, 64, 3 * c + 1));
    await writeFile(path.join(dir, 'img_2.bmp'), makeBmp(48, 50 * c, 90, 200 - 40 * c));
  }
}
