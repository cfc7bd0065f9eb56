#!/usr/bin/env node
/** Command line front end.
 *
 *   clip-extractor extract --root DIR --model TAG --templates FILE --out PATH
 *   clip-extractor validate PATH
 *
 * The templates file holds one prompt template per line; blank lines and
 * lines starting with '#' are ignored. `validate` re-parses an emitted
 * file with its own reader and reports header fields and norm statistics.
 */
import { readFile } from 'fs/promises';
import { pathToFileURL } from 'url';

import { extract } from './extract.js';
import { FormatError, validateBlob } from './format.js';

const USAGE = `usage:
  clip-extractor extract --root DIR --model TAG --templates FILE --out PATH
  clip-extractor validate PATH`;

function parseFlags(argv: string[], known: string[]): Map<string, string> {
  const out = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!known.includes(key)) throw new Error(`unknown flag ${key}`);
    if (i + 1 >= argv.length) throw new Error(`flag ${key} needs a value`);
    out.set(key, argv[i + 1]);
  }
  return out;
}

async function readTemplates(path: string): Promise<string[]> {
  const text = await readFile(path, 'utf-8');
  return text
    .split('\n')
    .map(line => line.trim())
    .filter(line => line.length > 0 && !line.startsWith('#'));
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;

  if (command === 'extract') {
    let flags: Map<string, string>;
    try {
      flags = parseFlags(rest, ['--root', '--model', '--templates', '--out']);
      for (const need of ['--root', '--model', '--templates', '--out']) {
        if (!flags.has(need)) throw new Error(`missing required flag ${need}`);
      }
    } catch (err) {
      console.error(`${(err as Error).message}\n${USAGE}`);
      return 1;
    }
    const stats = await extract({
      root: flags.get('--root')!,
      modelTag: flags.get('--model')!,
      templates: await readTemplates(flags.get('--templates')!),
      outPath: flags.get('--out')!,
    });
    console.log(
      `wrote ${flags.get('--out')}: classes=${stats.nClasses} ` +
        `records=${stats.nRecords} skipped=${stats.skipped.length}`,
    );
    return 0;
  }

  if (command === 'validate') {
    if (rest.length !== 1) {
      console.error(USAGE);
      return 1;
    }
    let blob: Buffer;
    try {
      blob = await readFile(rest[0]);
    } catch {
      console.error(`cannot read ${rest[0]}`);
      return 2;
    }
    try {
      const report = validateBlob(blob);
      console.log(`d=${report.d}`);
      console.log(`classes=${report.nClasses}`);
      console.log(`domains=${report.nDomains}`);
      console.log(`records=${report.nRecords}`);
      console.log(`text_bank_variants=${report.textBankVariants}`);
      console.log(`max_norm_deviation=${report.maxNormDeviation.toExponential(3)}`);
      if (report.maxNormDeviation > 1e-3) {
        console.error('norm deviation exceeds 1e-3');
        return 2;
      }
    } catch (err) {
      if (err instanceof FormatError) {
        console.error(`format error: ${err.message}`);
        return 2;
      }
      throw err;
    }
    return 0;
  }

  console.error(USAGE);
  return 1;
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url === pathToFileURL(process.argv[1]).href;
if (invokedDirectly) {
  main(process.argv.slice(2)).then(
    code => process.exit(code),
    err => {
      console.error(err instanceof Error ? err.message : String(err));
      process.exit(2);
    },
  );
}
