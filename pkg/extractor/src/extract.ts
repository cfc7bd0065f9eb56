/** Folder-to-dataset extraction.
 *
 * The image root holds one subdirectory per class; every decodable image
 * inside becomes one record. Record order is deterministic: class
 * subdirectories sorted by name, files sorted by name within each class.
 * Prompt templates are embedded once per class into the text bank, with
 * the "{}" slot filled by the class name lowercased and with underscores
 * replaced by spaces.
 */
import { readFile, readdir, stat, writeFile } from 'fs/promises';
import * as path from 'path';

import { EMBED_DIM, FrozenImageTower, FrozenTextTower } from './encoder.js';
import { decodeImage } from './image.js';
import { DatasetFile, encodeDataset } from './format.js';

export interface ExtractionJob {
  root: string;
  modelTag: string;
  templates: string[];
  outPath: string;
}

export interface ExtractionStats {
  nClasses: number;
  nRecords: number;
  skipped: { file: string; reason: string }[];
}

export class ExtractionError extends Error {}

function toF32(row: Float64Array): Float32Array {
  return Float32Array.from(row);
}

export function classPhrase(dirName: string): string {
  return dirName.toLowerCase().replace(/_/g, ' ');
}

export async function extract(
  job: ExtractionJob,
  warn: (msg: string) => void = msg => console.error(msg),
): Promise<ExtractionStats> {
  if (job.templates.length === 0) throw new ExtractionError('template list is empty');
  for (const tpl of job.templates) {
    if (!tpl.includes('{}')) throw new ExtractionError(`template has no "{}" slot: ${tpl}`);
  }

  const entries = await readdir(job.root, { withFileTypes: true });
  const classDirs = entries
    .filter(e => e.isDirectory())
    .map(e => e.name)
    .sort();
  if (classDirs.length === 0) throw new ExtractionError(`no class subdirectories in ${job.root}`);

  const imageTower = new FrozenImageTower(job.modelTag);
  const textTower = new FrozenTextTower(job.modelTag);

  const labels: number[] = [];
  const domains: number[] = [];
  const features: Float32Array[] = [];
  const skipped: { file: string; reason: string }[] = [];

  for (let classId = 0; classId < classDirs.length; classId++) {
    const dir = path.join(job.root, classDirs[classId]);
    const files = (await readdir(dir)).sort();
    let kept = 0;
    for (const file of files) {
      const full = path.join(dir, file);
      if (!(await stat(full)).isFile()) continue;
      try {
        const img = decodeImage(await readFile(full));
        features.push(toF32(imageTower.embed(img)));
        labels.push(classId);
        domains.push(0);
        kept++;
      } catch (err) {
        const reason = err instanceof Error ? err.message : String(err);
        skipped.push({ file: full, reason });
        warn(`skipping ${full}: ${reason}`);
      }
    }
    if (kept === 0) {
      throw new ExtractionError(`class directory ${dir} produced no records`);
    }
  }
  if (features.length === 0) throw new ExtractionError('extraction produced zero records');

  const textBank: Float32Array[][] = [];
  for (const tpl of job.templates) {
    const variant: Float32Array[] = [];
    for (const name of classDirs) {
      variant.push(toF32(textTower.embed(tpl.replace('{}', classPhrase(name)))));
    }
    textBank.push(variant);
  }

  const ds: DatasetFile = {
    d: EMBED_DIM,
    classNames: classDirs,
    domainNames: [path.basename(path.resolve(job.root))],
    labels,
    domains,
    features,
    textBank,
  };
  await writeFile(job.outPath, encodeDataset(ds));
  return { nClasses: classDirs.length, nRecords: features.length, skipped };
}
