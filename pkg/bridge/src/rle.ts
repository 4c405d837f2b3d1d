/** Row-major run-length mask codec.
 *
 * Counts alternate zero-run, one-run, ... and always start with the zero
 * run (possibly 0), matching COCO's uncompressed counts convention except
 * for the row-major pixel order.
 */

export interface Rle {
  size: [number, number]; // [height, width]
  counts: number[];
}

export function encodeRle(bits: Uint8Array, height: number, width: number): Rle {
  if (bits.length !== height * width) {
    throw new Error(`mask has ${bits.length} pixels, expected ${height * width}`);
  }
  const counts: number[] = [];
  let current = 0; // runs start counting zeros
  let run = 0;
  for (const b of bits) {
    const v = b ? 1 : 0;
    if (v === current) {
      run += 1;
    } else {
      counts.push(run);
      current = v;
      run = 1;
    }
  }
  if (run > 0 || counts.length === 0) counts.push(run);
  return { size: [height, width], counts };
}

export function decodeRle(rle: Rle): Uint8Array {
  const [h, w] = rle.size;
  const total = rle.counts.reduce((a, b) => a + b, 0);
  if (total !== h * w) {
    throw new Error(`RLE counts sum to ${total}, expected ${h * w}`);
  }
  const bits = new Uint8Array(h * w);
  let pos = 0;
  let value = 0;
  for (const c of rle.counts) {
    if (value) bits.fill(1, pos, pos + c);
    pos += c;
    value = 1 - value;
  }
  return bits;
}
