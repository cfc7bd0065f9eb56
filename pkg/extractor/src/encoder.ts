/** Frozen embedding towers.
 *
 * The model tag deterministically seeds a pair of fixed random-projection
 * towers (image and text) with the same output contract as a pretrained
 * ViT-B/16-class checkpoint: 512-dimensional, L2-normalized float embeddings.
 * This keeps extraction runnable and byte-reproducible on machines with no
 * checkpoint access; a real backend only needs to implement the same two
 * methods.
 */
import { GrayImage, resize } from './image.js';
import { Rng, hash64 } from './rng.js';

export const EMBED_DIM = 512;
export const INPUT_SIZE = 32;

function gaussMatrix(key: string, rows: number, cols: number): Float64Array {
  const rng = new Rng(hash64(key));
  const m = new Float64Array(rows * cols);
  const scale = 1 / Math.sqrt(cols);
  for (let i = 0; i < m.length; i++) m[i] = rng.gauss() * scale;
  return m;
}

function matVec(m: Float64Array, rows: number, cols: number, v: Float64Array): Float64Array {
  const out = new Float64Array(rows);
  for (let r = 0; r < rows; r++) {
    let acc = 0;
    const base = r * cols;
    for (let c = 0; c < cols; c++) acc += m[base + c] * v[c];
    out[r] = acc;
  }
  return out;
}

function geluInPlace(v: Float64Array): void {
  for (let i = 0; i < v.length; i++) {
    const x = v[i];
    // tanh form is fine here, the towers are frozen
    const t = Math.tanh(0.7978845608028654 * (x + 0.044715 * x * x * x));
    v[i] = 0.5 * x * (1 + t);
  }
}

function normalize(v: Float64Array): Float64Array {
  let s = 0;
  for (const x of v) s += x * x;
  const n = Math.sqrt(s);
  if (n === 0) throw new Error('zero embedding cannot be normalized');
  for (let i = 0; i < v.length; i++) v[i] /= n;
  return v;
}

export class FrozenImageTower {
  private w1: Float64Array;
  private w2: Float64Array;
  private pixels: number;

  constructor(modelTag: string) {
    this.pixels = INPUT_SIZE * INPUT_SIZE;
    this.w1 = gaussMatrix(`${modelTag}:image:w1`, EMBED_DIM, this.pixels);
    this.w2 = gaussMatrix(`${modelTag}:image:w2`, EMBED_DIM, EMBED_DIM);
  }

  embed(img: GrayImage): Float64Array {
    const x = resize(img, INPUT_SIZE);
    const h = matVec(this.w1, EMBED_DIM, this.pixels, x);
    geluInPlace(h);
    return normalize(matVec(this.w2, EMBED_DIM, EMBED_DIM, h));
  }
}

export class FrozenTextTower {
  private tag: string;
  private proj: Float64Array;

  constructor(modelTag: string) {
    this.tag = modelTag;
    this.proj = gaussMatrix(`${modelTag}:text:proj`, EMBED_DIM, EMBED_DIM);
  }

  embed(text: string): Float64Array {
    const words = text.toLowerCase().split(/\s+/).filter(w => w.length > 0);
    if (words.length === 0) throw new Error(`empty prompt text: ${JSON.stringify(text)}`);
    const pooled = new Float64Array(EMBED_DIM);
    for (const word of words) {
      const rng = new Rng(hash64(`${this.tag}:token:${word}`));
      for (let i = 0; i < EMBED_DIM; i++) pooled[i] += rng.gauss();
    }
    for (let i = 0; i < EMBED_DIM; i++) pooled[i] /= words.length;
    return normalize(matVec(this.proj, EMBED_DIM, EMBED_DIM, pooled));
  }
}
