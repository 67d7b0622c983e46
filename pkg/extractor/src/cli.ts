#!/usr/bin/env node
/**
 * Feature extraction CLI.
 *
 *   make-backbone --out DIR [--seed N]   synthesize the deterministic
 *                                        stand-in network
 *   extract --model DIR --images PATH --out FILE [--batch N]
 */

import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'
import { makeBackbone } from './backbone'
import { extract } from './extract'

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .command('make-backbone', 'write a seeded stand-in backbone', (y) =>
      y
        .option('out', { type: 'string', demandOption: true })
        .option('seed', { type: 'number', default: 0 }),
    )
    .command('extract', 'export spatial features for a directory of images', (y) =>
      y
        .option('model', { type: 'string', demandOption: true })
        .option('images', { type: 'string', demandOption: true })
        .option('out', { type: 'string', demandOption: true })
        .option('batch', { type: 'number', default: 4 }),
    )
    .demandCommand(1)
    .strict()
    .parse()

  const command = argv._[0]
  if (command === 'make-backbone') {
    await makeBackbone(argv.out as string, argv.seed as number)
    console.log(`wrote backbone to ${argv.out}`)
    return 0
  }
  if (command === 'extract') {
    const summary = await extract({
      modelDir: argv.model as string,
      imagesPath: argv.images as string,
      outPath: argv.out as string,
      batchSize: argv.batch as number,
      log: (msg) => console.error(msg),
    })
    console.log(`extracted ${summary.written} images (${summary.skipped.length} skipped)`)
    return summary.written > 0 ? 0 : 2
  }
  console.error(`unknown command ${command}`)
  return 2
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(String(err?.stack ?? err))
    process.exit(1)
  },
)
