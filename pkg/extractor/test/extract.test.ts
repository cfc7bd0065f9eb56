import { execFile } from 'child_process';
import { mkdir, mkdtemp, readFile, writeFile } from 'fs/promises';
import * as os from 'os';
import * as path from 'path';
import { promisify } from 'util';
import { beforeAll, describe, expect, it } from 'vitest';

import { EMBED_DIM, FrozenImageTower, FrozenTextTower } from '../src/encoder.js';
import { decodeImage } from '../src/image.js';
import { extract } from '../src/extract.js';
import { decodeDataset, validateBlob } from '../src/format.js';
import { makePgm, writeImageRoot } from './fixtures.js';

const run = promisify(execFile);

const TEMPLATES = ['a photo of a {}', 'satellite photo of a {}'];
let root: string;
let scratch: string;

beforeAll(async () => {
  scratch = await mkdtemp(path.join(os.tmpdir(), 'extractor-'));
  root = path.join(scratch, 'images');
  await writeImageRoot(root, ['harbor', 'airport_runway']);
});

async function runExtract(out: string) {
  const templates = path.join(scratch, 'templates.txt');
  await writeFile(templates, TEMPLATES.join('\n') + '\n');
  return extract(
    { root, modelTag: 'vit-b16-rs', templates: TEMPLATES, outPath: out },
    () => {},
  );
}

describe('extraction', () => {
  it('emits one unit-norm 512-d record per image, classes sorted', async () => {
    const out = path.join(scratch, 'a.fdne');
    const stats = await runExtract(out);
    expect(stats.nClasses).toBe(2);
    expect(stats.nRecords).toBe(6);
    expect(stats.skipped).toEqual([]);

    const ds = decodeDataset(await readFile(out));
    expect(ds.d).toBe(EMBED_DIM);
    expect(ds.classNames).toEqual(['airport_runway', 'harbor']);
    expect(ds.labels).toEqual([0, 0, 0, 1, 1, 1]);
    expect(ds.textBank!.length).toBe(TEMPLATES.length);
    for (const row of ds.features) {
      let s = 0;
      for (const x of row) s += x * x;
      expect(Math.abs(Math.sqrt(s) - 1)).toBeLessThan(1e-3);
    }
  });

  it('repeated embedding of one image is identical', () => {
    const tower = new FrozenImageTower('vit-b16-rs');
    const img = decodeImage(makePgm(40, 30, 0));
    const a = tower.embed(img);
    const b = tower.embed(img);
    let dot = 0;
    for (let i = 0; i < a.length; i++) dot += a[i] * b[i];
    expect(Math.abs(dot - 1)).toBeLessThan(1e-6);
    expect(a).toEqual(b);
  });

  it('different model tags give different towers', () => {
    const img = decodeImage(makePgm(40, 30, 0));
    const a = new FrozenImageTower('vit-b16-rs').embed(img);
    const b = new FrozenImageTower('vit-l14-rs').embed(img);
    let dot = 0;
    for (let i = 0; i < a.length; i++) dot += a[i] * b[i];
    expect(Math.abs(dot)).toBeLessThan(0.5);
  });

  it('text tower fills the template slot from the folder name', () => {
    const tower = new FrozenTextTower('vit-b16-rs');
    const fromPhrase = tower.embed('a photo of a airport runway');
    const direct = tower.embed('a photo of a airport_runway'.replace(/_/g, ' '));
    expect(fromPhrase).toEqual(direct);
  });

  it('skips undecodable files with a warning but keeps the class', async () => {
    const dirtyRoot = path.join(scratch, 'dirty');
    await writeImageRoot(dirtyRoot, ['beach']);
    await writeFile(path.join(dirtyRoot, 'beach', 'notes.txt'), 'not an image');
    const out = path.join(scratch, 'dirty.fdne');
    const warnings: string[] = [];
    const stats = await extract(
      { root: dirtyRoot, modelTag: 'vit-b16-rs', templates: TEMPLATES, outPath: out },
      msg => warnings.push(msg),
    );
    expect(stats.nRecords).toBe(3);
    expect(stats.skipped.length).toBe(1);
    expect(warnings[0]).toContain('notes.txt');
  });

  it('fails hard when a class directory yields no records', async () => {
    const emptyRoot = path.join(scratch, 'empty');
    await mkdir(path.join(emptyRoot, 'void'), { recursive: true });
    await expect(
      extract(
        { root: emptyRoot, modelTag: 'vit-b16-rs', templates: TEMPLATES, outPath: '/dev/null' },
        () => {},
      ),
    ).rejects.toThrow(/no records/);
  });

  it('B2: re-running extract yields byte-identical output', async () => {
    const out1 = path.join(scratch, 'run1.fdne');
    const out2 = path.join(scratch, 'run2.fdne');
    await runExtract(out1);
    await runExtract(out2);
    const a = await readFile(out1);
    const b = await readFile(out2);
    console.log(`B2: ${a.equals(b) ? 'PASS' : 'FAIL'} (${a.length} bytes)`);
    expect(a.equals(b)).toBe(true);
  });

  it('B1: emitted file passes the primary inspect with zero warnings', async () => {
    const out = path.join(scratch, 'interop.fdne');
    await runExtract(out);

    const local = validateBlob(await readFile(out));
    expect(local.d).toBe(512);
    expect(local.maxNormDeviation).toBeLessThan(1e-3);

    const { stdout, stderr } = await run('freqprompt', ['inspect', out]);
    console.log(
      `B1: ${stderr.trim() === '' ? 'PASS' : 'FAIL'} ` +
        `(max_norm_deviation ${local.maxNormDeviation.toExponential(2)})`,
    );
    expect(stderr.trim()).toBe('');
    expect(stdout).toContain('d=512');
    expect(stdout).toContain('records=6');
    expect(stdout).toContain('text_bank=present Z=2');
  });
});
