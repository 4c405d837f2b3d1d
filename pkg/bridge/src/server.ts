/** NDJSON service loops: stdio subprocess mode and local TCP mode.
 *
 * Requests are handled serially per connection (the protocol is
 * one-in-flight) and every failure turns into an error reply on the same
 * stream; the loop itself never dies on bad input.
 */

import * as net from 'node:net';
import * as readline from 'node:readline';
import type { Readable, Writable } from 'node:stream';

import { DEFAULT_CONFIG, type ModelConfig } from './model.js';
import { handleLine } from './protocol.js';

export interface ServeConfig {
  mode: 'stdio' | 'tcp';
  port?: number;
  host?: string;
  model?: ModelConfig;
}

/** Answer NDJSON requests from `input` on `output` until EOF. */
export function serveStream(
  input: Readable,
  output: Writable,
  model: ModelConfig = DEFAULT_CONFIG,
): Promise<void> {
  const rl = readline.createInterface({ input, crlfDelay: Infinity });
  return new Promise((resolve) => {
    rl.on('line', (line) => {
      if (line.trim() === '') return;
      output.write(JSON.stringify(handleLine(line, model)) + '\n');
    });
    rl.on('close', resolve);
  });
}

export interface TcpHandle {
  port: number;
  close: () => Promise<void>;
}

export function serveTcp(config: ServeConfig): Promise<TcpHandle> {
  const model = config.model ?? DEFAULT_CONFIG;
  const server = net.createServer((socket) => {
    socket.on('error', () => socket.destroy());
    void serveStream(socket, socket, model);
  });
  return new Promise((resolve, reject) => {
    server.once('error', reject);
    server.listen(config.port ?? 0, config.host ?? '127.0.0.1', () => {
      const address = server.address() as net.AddressInfo;
      resolve({
        port: address.port,
        close: () => new Promise((done) => server.close(() => done())),
      });
    });
  });
}

export async function serve(config: ServeConfig): Promise<void> {
  if (config.mode === 'stdio') {
    await serveStream(process.stdin, process.stdout, config.model);
    return;
  }
  const handle = await serveTcp(config);
  process.stderr.write(`listening on ${config.host ?? '127.0.0.1'}:${handle.port}\n`);
  await new Promise(() => {}); // run until killed
}
