/** Binary embedding dataset writer and an independent validating parser.
 *
 * Layout (little-endian): magic "FDNE" | u32 version | u32 d |
 * u32 n_classes | u32 n_domains | u64 n_records | u32 flags (bit0
 * text_bank present, bit1 variant count follows) | [u32 Z] | class-name
 * table | domain-name table | records (u32 class, u32 domain, d float32) |
 * optional text_bank Z*C*d float32. Name tables are u16 length-prefixed
 * UTF-8. Trailing bytes are a format error.
 */

export const MAGIC = 'FDNE';
export const VERSION = 1;
export const FLAG_TEXT_BANK = 1;
export const FLAG_VARIANT_COUNT = 2;

export class FormatError extends Error {}

export interface DatasetFile {
  d: number;
  classNames: string[];
  domainNames: string[];
  labels: number[];
  domains: number[];
  features: Float32Array[]; // one row per record
  textBank: Float32Array[][] | null; // [variant][class] rows
}

function packNames(names: string[]): Buffer {
  const parts: Buffer[] = [];
  for (const name of names) {
    const raw = Buffer.from(name, 'utf-8');
    if (raw.length > 0xffff) throw new FormatError(`name too long: ${name.slice(0, 32)}`);
    const len = Buffer.alloc(2);
    len.writeUInt16LE(raw.length);
    parts.push(len, raw);
  }
  return Buffer.concat(parts);
}

function f32Bytes(row: Float32Array): Buffer {
  const buf = Buffer.alloc(4 * row.length);
  for (let i = 0; i < row.length; i++) buf.writeFloatLE(row[i], 4 * i);
  return buf;
}

export function encodeDataset(ds: DatasetFile): Buffer {
  const n = ds.features.length;
  if (ds.labels.length !== n || ds.domains.length !== n) {
    throw new FormatError('record index arrays do not match feature count');
  }
  const hasBank = ds.textBank !== null;
  const flags = hasBank ? FLAG_TEXT_BANK | FLAG_VARIANT_COUNT : 0;
  const z = hasBank ? ds.textBank!.length : 0;

  const header = Buffer.alloc(hasBank ? 36 : 32);
  header.write(MAGIC, 0, 'ascii');
  header.writeUInt32LE(VERSION, 4);
  header.writeUInt32LE(ds.d, 8);
  header.writeUInt32LE(ds.classNames.length, 12);
  header.writeUInt32LE(ds.domainNames.length, 16);
  header.writeBigUInt64LE(BigInt(n), 20);
  header.writeUInt32LE(flags, 28);
  if (hasBank) header.writeUInt32LE(z, 32);

  const parts: Buffer[] = [header, packNames(ds.classNames), packNames(ds.domainNames)];
  const idx = Buffer.alloc(8);
  for (let i = 0; i < n; i++) {
    if (ds.features[i].length !== ds.d) {
      throw new FormatError(`record ${i} has dim ${ds.features[i].length}, expected ${ds.d}`);
    }
    idx.writeUInt32LE(ds.labels[i], 0);
    idx.writeUInt32LE(ds.domains[i], 4);
    parts.push(Buffer.from(idx), f32Bytes(ds.features[i]));
  }
  if (hasBank) {
    for (const variant of ds.textBank!) {
      if (variant.length !== ds.classNames.length) {
        throw new FormatError('text bank variant does not cover every class');
      }
      for (const row of variant) parts.push(f32Bytes(row));
    }
  }
  return Buffer.concat(parts);
}

class Cursor {
  pos = 0;
  constructor(private buf: Buffer) {}

  take(n: number, what: string): Buffer {
    if (this.pos + n > this.buf.length) {
      throw new FormatError(`truncated while reading ${what} at offset ${this.pos}`);
    }
    const out = this.buf.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }

  u16(what: string): number {
    return this.take(2, what).readUInt16LE();
  }

  u32(what: string): number {
    return this.take(4, what).readUInt32LE();
  }

  u64(what: string): number {
    const v = this.take(8, what).readBigUInt64LE();
    if (v > BigInt(Number.MAX_SAFE_INTEGER)) throw new FormatError(`${what} too large`);
    return Number(v);
  }

  remaining(): number {
    return this.buf.length - this.pos;
  }
}

export function decodeDataset(blob: Buffer): DatasetFile {
  const c = new Cursor(blob);
  const magic = c.take(4, 'magic').toString('ascii');
  if (magic !== MAGIC) {
    throw new FormatError(`bad magic ${JSON.stringify(magic)}, expected ${MAGIC}`);
  }
  const version = c.u32('version');
  if (version !== VERSION) throw new FormatError(`unsupported version ${version}`);
  const d = c.u32('d');
  const nClasses = c.u32('class count');
  const nDomains = c.u32('domain count');
  const nRecords = c.u64('record count');
  const flags = c.u32('flags');
  let z = 0;
  if (flags & FLAG_VARIANT_COUNT) z = c.u32('variant count');
  else if (flags & FLAG_TEXT_BANK) z = 1;

  const readNames = (count: number, what: string): string[] => {
    const names: string[] = [];
    for (let i = 0; i < count; i++) {
      const len = c.u16(`${what} length`);
      names.push(c.take(len, what).toString('utf-8'));
    }
    return names;
  };
  const classNames = readNames(nClasses, 'class name');
  const domainNames = readNames(nDomains, 'domain name');

  const labels: number[] = [];
  const domains: number[] = [];
  const features: Float32Array[] = [];
  for (let i = 0; i < nRecords; i++) {
    const label = c.u32(`record ${i} class`);
    const domain = c.u32(`record ${i} domain`);
    if (label >= nClasses) throw new FormatError(`record ${i} class index out of range`);
    if (domain >= nDomains) throw new FormatError(`record ${i} domain index out of range`);
    labels.push(label);
    domains.push(domain);
    const raw = c.take(4 * d, `record ${i} features`);
    const row = new Float32Array(d);
    for (let j = 0; j < d; j++) row[j] = raw.readFloatLE(4 * j);
    features.push(row);
  }

  let textBank: Float32Array[][] | null = null;
  if (flags & FLAG_TEXT_BANK) {
    textBank = [];
    for (let v = 0; v < z; v++) {
      const variant: Float32Array[] = [];
      for (let cIdx = 0; cIdx < nClasses; cIdx++) {
        const raw = c.take(4 * d, `text bank variant ${v} class ${cIdx}`);
        const row = new Float32Array(d);
        for (let j = 0; j < d; j++) row[j] = raw.readFloatLE(4 * j);
        variant.push(row);
      }
      textBank.push(variant);
    }
  }
  if (c.remaining() !== 0) {
    throw new FormatError(`${c.remaining()} trailing bytes after dataset`);
  }
  for (const row of features) {
    for (const x of row) {
      if (!Number.isFinite(x)) throw new FormatError('non-finite feature value');
    }
  }
  return { d, classNames, domainNames, labels, domains, features, textBank };
}

export interface ValidationReport {
  d: number;
  nClasses: number;
  nDomains: number;
  nRecords: number;
  textBankVariants: number;
  maxNormDeviation: number;
}

export function validateBlob(blob: Buffer): ValidationReport {
  const ds = decodeDataset(blob);
  let worst = 0;
  for (const row of ds.features) {
    let s = 0;
    for (const x of row) s += x * x;
    worst = Math.max(worst, Math.abs(Math.sqrt(s) - 1));
  }
  return {
    d: ds.d,
    nClasses: ds.classNames.length,
    nDomains: ds.domainNames.length,
    nRecords: ds.features.length,
    textBankVariants: ds.textBank === null ? 0 : ds.textBank.length,
    maxNormDeviation: worst,
  };
}
