/** Wire protocol (proto 1): one JSON object per line.
 *
 *   -> {"id": n, "op": "hello", "proto": 1}
 *   <- {"id": n, "proto": 1}
 *   -> {"id": n, "op": "segment", "image": <base64 PNG>,
 *       "points": [[u, v, 1|0], ...], "box": [x0, y0, x1, y1] | null}
 *   <- {"id": n, "mask": {"size": [H, W], "counts": [...]}, "score": s}
 *   -> {"id": n, "op": "detect", "image": <base64 PNG>, "text": "..."}
 *   <- {"id": n, "boxes": [{"xyxy": [x0, y0, x1, y1], "score": s}, ...]}
 *   error replies: {"id": n | null, "error": {"code": "...", "message": "..."}}
 *
 * Masks are row-major run-length counts, first run counting zeros.
 */

import { z } from 'zod';

import { DEFAULT_CONFIG, detect, segment, type ModelConfig } from './model.js';
import { decodePng } from './png.js';
import { encodeRle } from './rle.js';

export const PROTO_VERSION = 1;

const helloSchema = z.object({
  id: z.number().int(),
  op: z.literal('hello'),
  proto: z.number().int(),
});

const segmentSchema = z.object({
  id: z.number().int(),
  op: z.literal('segment'),
  image: z.string().min(1),
  points: z.array(z.tuple([z.number(), z.number(), z.number()])).default([]),
  box: z.tuple([z.number(), z.number(), z.number(), z.number()]).nullable().default(null),
});

const detectSchema = z.object({
  id: z.number().int(),
  op: z.literal('detect'),
  image: z.string().min(1),
  text: z.string().min(1),
});

const requestSchema = z.discriminatedUnion('op', [
  helloSchema,
  segmentSchema,
  detectSchema,
]);

export type Reply = Record<string, unknown>;

export function errorReply(id: number | null, code: string, message: string): Reply {
  return { id, error: { code, message } };
}

function decodeImage(field: string) {
  let raw: Buffer;
  try {
    raw = Buffer.from(field, 'base64');
  } catch {
    throw new Error('image is not valid base64');
  }
  return decodePng(raw);
}

/** One request line in, one reply object out. Never throws. */
export function handleLine(line: string, config: ModelConfig = DEFAULT_CONFIG): Reply {
  let parsed: unknown;
  try {
    parsed = JSON.parse(line);
  } catch (exc) {
    return errorReply(null, 'bad-json', `unparseable request: ${(exc as Error).message}`);
  }

  // Salvage the id for error replies when the envelope is a non-conforming
  // object; malformed JSON above has no id to salvage.
  const rawId =
    typeof parsed === 'object' && parsed !== null && 'id' in parsed
      ? (parsed as { id: unknown }).id
      : null;
  const replyId = typeof rawId === 'number' && Number.isInteger(rawId) ? rawId : null;

  const result = requestSchema.safeParse(parsed);
  if (!result.success) {
    const issue = result.error.issues[0];
    const where = issue.path.length > 0 ? ` at ${issue.path.join('.')}` : '';
    return errorReply(replyId, 'bad-request', `${issue.message}${where}`);
  }
  const req = result.data;

  try {
    switch (req.op) {
      case 'hello': {
        if (req.proto !== PROTO_VERSION) {
          return errorReply(req.id, 'bad-proto', `unsupported protocol version ${req.proto}`);
        }
        return { id: req.id, proto: PROTO_VERSION };
      }
      case 'segment': {
        if (req.points.length === 0 && req.box === null) {
          return errorReply(req.id, 'bad-request', 'segment needs points or a box');
        }
        const image = decodeImage(req.image);
        const { mask, score } = segment(
          image,
          req.points as Array<[number, number, number]>,
          req.box,
          config,
        );
        return {
          id: req.id,
          mask: encodeRle(mask, image.height, image.width),
          score,
        };
      }
      case 'detect': {
        const image = decodeImage(req.image);
        return { id: req.id, boxes: detect(image, req.text, config) };
      }
    }
  } catch (exc) {
    return errorReply(req.id, 'bad-image', (exc as Error).message);
  }
}
