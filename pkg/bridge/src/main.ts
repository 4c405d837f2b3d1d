#!/usr/bin/env node
/** Entry point: `sam-bridge` serves stdio; `sam-bridge --tcp [port]` serves TCP. */

import { serve } from './server.js';

function parseArgs(argv: string[]) {
  if (argv.length === 0) return { mode: 'stdio' as const };
  if (argv[0] === '--tcp') {
    const port = argv.length > 1 ? Number(argv[1]) : 0;
    if (!Number.isInteger(port) || port < 0 || port > 65535) {
      throw new Error(`bad port: ${argv[1]}`);
    }
    return { mode: 'tcp' as const, port };
  }
  throw new Error(`unknown argument: ${argv[0]}`);
}

try {
  await serve(parseArgs(process.argv.slice(2)));
} catch (exc) {
  process.stderr.write(`${(exc as Error).message}\n`);
  process.exit(1);
}
