// Scripted protocol conformance transcripts: hello, segment, detect, and
// malformed-request recovery, run against the service over in-memory
// streams, a spawned stdio subprocess, and a TCP connection.

import { spawn } from 'node:child_process';
import { readFileSync } from 'node:fs';
import * as net from 'node:net';
import { PassThrough } from 'node:stream';
import { fileURLToPath } from 'node:url';
import { describe, expect, it } from 'vitest';

import { decodeRle, type Rle } from '../src/rle.js';
import { serveStream, serveTcp } from '../src/server.js';

const scene = JSON.parse(
  readFileSync(new URL('./fixtures/scene.json', import.meta.url), 'utf8'),
);

const transcript: Array<Record<string, unknown>> = [
  { id: 1, op: 'hello', proto: 1 },
  {
    id: 2,
    op: 'segment',
    image: scene.image_base64,
    points: [[12, 15, 1]],
    box: null,
  },
  { id: 3, op: 'detect', image: scene.image_base64, text: 'object' },
];
const malformedLine = '{"id": 4, "op": "segm'; // truncated JSON

function checkReplies(replies: Array<Record<string, any>>) {
  expect(replies.length).toBe(5);

  expect(replies[0]).toEqual({ id: 1, proto: 1 });

  expect(replies[1].id).toBe(2);
  expect(replies[1].mask.size).toEqual([scene.height, scene.width]);
  const bits = decodeRle(replies[1].mask as Rle);
  expect(bits.length).toBe(scene.height * scene.width);
  expect(bits.reduce((a: number, b) => a + b, 0)).toBe(scene.red_area);
  expect(replies[1].score).toBeGreaterThan(0);
  expect(replies[1].score).toBeLessThanOrEqual(1);

  expect(replies[2].id).toBe(3);
  expect(replies[2].boxes.length).toBe(2);
  const scores = replies[2].boxes.map((b: any) => b.score);
  expect(scores).toEqual([...scores].sort((a, b) => b - a));
  for (const b of replies[2].boxes) expect(b.xyxy.length).toBe(4);

  // Malformed JSON: error reply with id null, and the following request
  // still gets answered (the loop survived).
  expect(replies[3].id).toBe(null);
  expect(replies[3].error.code).toBe('bad-json');
  expect(typeof replies[3].error.message).toBe('string');
  expect(replies[4]).toEqual({ id: 5, proto: 1 });
}

function lines(): string[] {
  return [
    ...transcript.map((r) => JSON.stringify(r)),
    malformedLine,
    JSON.stringify({ id: 5, op: 'hello', proto: 1 }),
  ];
}

describe('protocol transcripts', () => {
  it('pass over in-memory streams', async () => {
    const input = new PassThrough();
    const output = new PassThrough();
    const done = serveStream(input, output);
    for (const line of lines()) input.write(line + '\n');
    input.end();
    await done;
    const replies = output
      .read()
      .toString()
      .trim()
      .split('\n')
      .map((l: string) => JSON.parse(l));
    checkReplies(replies);
  });

  it('pass against the stdio subprocess', async () => {
    const entry = fileURLToPath(new URL('../dist/main.js', import.meta.url));
    const child = spawn(process.execPath, [entry], { stdio: ['pipe', 'pipe', 'inherit'] });
    const chunks: Buffer[] = [];
    child.stdout.on('data', (c) => chunks.push(c));
    for (const line of lines()) child.stdin.write(line + '\n');
    child.stdin.end();
    const code = await new Promise<number | null>((resolve) => child.on('close', resolve));
    expect(code).toBe(0);
    const replies = Buffer.concat(chunks)
      .toString()
      .trim()
      .split('\n')
      .map((l) => JSON.parse(l));
    checkReplies(replies);
  });

  it('pass over TCP', async () => {
    const handle = await serveTcp({ mode: 'tcp', port: 0 });
    const socket = net.connect(handle.port, '127.0.0.1');
    await new Promise((resolve) => socket.on('connect', resolve));
    const chunks: Buffer[] = [];
    socket.on('data', (c) => chunks.push(c));
    for (const line of lines()) socket.write(line + '\n');
    // One reply line per request line; wait until all five arrive.
    await new Promise<void>((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error('timed out')), 5000);
      socket.on('data', () => {
        const text = Buffer.concat(chunks).toString();
        if (text.split('\n').filter((l) => l.trim()).length >= 5) {
          clearTimeout(timer);
          resolve();
        }
      });
    });
    socket.end();
    await handle.close();
    const replies = Buffer.concat(chunks)
      .toString()
      .trim()
      .split('\n')
      .map((l) => JSON.parse(l));
    checkReplies(replies);
  });

  it('reports schema violations without dropping the connection', async () => {
    const input = new PassThrough();
    const output = new PassThrough();
    const done = serveStream(input, output);
    input.write(JSON.stringify({ id: 9, op: 'segment', image: '' }) + '\n');
    input.write(JSON.stringify({ id: 10, op: 'teleport' }) + '\n');
    input.write(JSON.stringify({ id: 11, op: 'hello', proto: 99 }) + '\n');
    input.write(JSON.stringify({ id: 12, op: 'hello', proto: 1 }) + '\n');
    input.end();
    await done;
    const replies = output
      .read()
      .toString()
      .trim()
      .split('\n')
      .map((l: string) => JSON.parse(l));
    expect(replies[0].id).toBe(9);
    expect(replies[0].error.code).toBe('bad-request');
    expect(replies[1].id).toBe(10);
    expect(replies[1].error.code).toBe('bad-request');
    expect(replies[2].id).toBe(11);
    expect(replies[2].error.code).toBe('bad-proto');
    expect(replies[3]).toEqual({ id: 12, proto: 1 });
  });

  it('turns an undecodable image into an error reply', async () => {
    const input = new PassThrough();
    const output = new PassThrough();
    const done = serveStream(input, output);
    const bogus = Buffer.from('not a png at all').toString('base64');
    input.write(
      JSON.stringify({ id: 20, op: 'segment', image: bogus, points: [[1, 1, 1]], box: null }) +
        '\n',
    );
    input.end();
    await done;
    const reply = JSON.parse(output.read().toString().trim());
    expect(reply.id).toBe(20);
    expect(reply.error.code).toBe('bad-image');
  });
});
