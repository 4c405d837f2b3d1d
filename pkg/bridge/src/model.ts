/** Builtin deterministic segmenter and detector.
 *
 * Stands in for neural promptable-segmentation / text-grounded-detection
 * models behind the same reply shapes: segmentation grows color-coherent
 * regions from the prompts, detection boxes color-coherent connected
 * components. Deterministic by construction, so conformance tests are
 * reproducible. Swapping in real models means replacing these two
 * functions only.
 */

import type { RgbImage } from './png.js';

export interface SegmentResult {
  mask: Uint8Array; // height * width, 0/1
  score: number;
}

export interface DetectedBox {
  xyxy: [number, number, number, number];
  score: number;
}

export interface ModelConfig {
  colorTolerance: number; // per-channel max difference for region growing
  minComponentArea: number; // detection ignores smaller components
}

export const DEFAULT_CONFIG: ModelConfig = {
  colorTolerance: 24,
  minComponentArea: 16,
};

function similar(rgb: Uint8Array, i: number, j: number, tol: number): boolean {
  return (
    Math.abs(rgb[i * 3] - rgb[j * 3]) <= tol &&
    Math.abs(rgb[i * 3 + 1] - rgb[j * 3 + 1]) <= tol &&
    Math.abs(rgb[i * 3 + 2] - rgb[j * 3 + 2]) <= tol
  );
}

/** 4-connected region of pixels color-similar to the seed pixel. */
function floodFill(image: RgbImage, seed: number, tol: number): Uint8Array {
  const { width, height, rgb } = image;
  const out = new Uint8Array(width * height);
  const stack = [seed];
  out[seed] = 1;
  while (stack.length > 0) {
    const p = stack.pop()!;
    const x = p % width;
    const neighbors = [
      x > 0 ? p - 1 : -1,
      x < width - 1 ? p + 1 : -1,
      p - width,
      p + width,
    ];
    for (const q of neighbors) {
      if (q < 0 || q >= width * height || out[q]) continue;
      if (similar(rgb, seed, q, tol)) {
        out[q] = 1;
        stack.push(q);
      }
    }
  }
  return out;
}

function clampPixel(v: number, limit: number): number {
  return Math.min(Math.max(Math.round(v), 0), limit - 1);
}

export function segment(
  image: RgbImage,
  points: Array<[number, number, number]>,
  box: [number, number, number, number] | null,
  config: ModelConfig = DEFAULT_CONFIG,
): SegmentResult {
  const { width, height } = image;
  const mask = new Uint8Array(width * height);

  const positives = points.filter((p) => p[2] === 1);
  const negatives = points.filter((p) => p[2] !== 1);
  const seeds: number[] = positives.map(
    ([u, v]) => clampPixel(v, height) * width + clampPixel(u, width),
  );
  if (seeds.length === 0 && box) {
    // Box-only prompt: grow from the box center.
    seeds.push(
      clampPixel((box[1] + box[3]) / 2, height) * width +
        clampPixel((box[0] + box[2]) / 2, width),
    );
  }
  for (const seed of seeds) {
    const region = floodFill(image, seed, config.colorTolerance);
    for (let i = 0; i < mask.length; i += 1) mask[i] |= region[i];
  }
  for (const [u, v] of negatives) {
    const seed = clampPixel(v, height) * width + clampPixel(u, width);
    const region = floodFill(image, seed, config.colorTolerance);
    for (let i = 0; i < mask.length; i += 1) if (region[i]) mask[i] = 0;
  }
  if (box) {
    const [x0, y0, x1, y1] = box;
    for (let y = 0; y < height; y += 1) {
      for (let x = 0; x < width; x += 1) {
        if (x < x0 || x > x1 || y < y0 || y > y1) mask[y * width + x] = 0;
      }
    }
  }

  // Confidence from color coherence: tight regions score high, regions
  // that leaked across a soft edge score lower.
  let area = 0;
  const mean = [0, 0, 0];
  for (let i = 0; i < mask.length; i += 1) {
    if (!mask[i]) continue;
    area += 1;
    mean[0] += image.rgb[i * 3];
    mean[1] += image.rgb[i * 3 + 1];
    mean[2] += image.rgb[i * 3 + 2];
  }
  if (area === 0) return { mask, score: 0 };
  mean[0] /= area;
  mean[1] /= area;
  mean[2] /= area;
  let spread = 0;
  for (let i = 0; i < mask.length; i += 1) {
    if (!mask[i]) continue;
    spread +=
      (image.rgb[i * 3] - mean[0]) ** 2 +
      (image.rgb[i * 3 + 1] - mean[1]) ** 2 +
      (image.rgb[i * 3 + 2] - mean[2]) ** 2;
  }
  const rms = Math.sqrt(spread / (area * 3));
  const score = Math.min(Math.max(1 - rms / 96, 0), 1);
  return { mask, score };
}

/** Most common border color; treated as background for detection. */
function borderColor(image: RgbImage): [number, number, number] {
  const { width, height, rgb } = image;
  const votes = new Map<string, { n: number; c: [number, number, number] }>();
  const record = (p: number) => {
    const c: [number, number, number] = [rgb[p * 3], rgb[p * 3 + 1], rgb[p * 3 + 2]];
    const key = c.map((v) => v >> 4).join(',');
    const entry = votes.get(key);
    if (entry) entry.n += 1;
    else votes.set(key, { n: 1, c });
  };
  for (let x = 0; x < width; x += 1) {
    record(x);
    record((height - 1) * width + x);
  }
  for (let y = 0; y < height; y += 1) {
    record(y * width);
    record(y * width + width - 1);
  }
  let best: { n: number; c: [number, number, number] } = { n: -1, c: [0, 0, 0] };
  for (const entry of votes.values()) if (entry.n > best.n) best = entry;
  return best.c;
}

export function detect(
  image: RgbImage,
  text: string,
  config: ModelConfig = DEFAULT_CONFIG,
): DetectedBox[] {
  const { width, height, rgb } = image;
  const bg = borderColor(image);
  const tol = config.colorTolerance;
  const foreground = new Uint8Array(width * height);
  for (let i = 0; i < foreground.length; i += 1) {
    const off =
      Math.abs(rgb[i * 3] - bg[0]) > tol ||
      Math.abs(rgb[i * 3 + 1] - bg[1]) > tol ||
      Math.abs(rgb[i * 3 + 2] - bg[2]) > tol;
    if (off) foreground[i] = 1;
  }

  // An optional "rgb:R,G,B" query restricts detections to components whose
  // mean color is close to the requested one; any other text matches all
  // foreground components.
  const colorQuery = /^\s*rgb:(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*$/.exec(text);
  const wanted = colorQuery
    ? [Number(colorQuery[1]), Number(colorQuery[2]), Number(colorQuery[3])]
    : null;

  const visited = new Uint8Array(width * height);
  const raw: Array<{ box: [number, number, number, number]; area: number }> = [];
  for (let start = 0; start < foreground.length; start += 1) {
    if (!foreground[start] || visited[start]) continue;
    const stack = [start];
    visited[start] = 1;
    let x0 = width;
    let y0 = height;
    let x1 = 0;
    let y1 = 0;
    let area = 0;
    const mean = [0, 0, 0];
    while (stack.length > 0) {
      const p = stack.pop()!;
      const x = p % width;
      const y = (p - x) / width;
      area += 1;
      mean[0] += rgb[p * 3];
      mean[1] += rgb[p * 3 + 1];
      mean[2] += rgb[p * 3 + 2];
      if (x < x0) x0 = x;
      if (y < y0) y0 = y;
      if (x > x1) x1 = x;
      if (y > y1) y1 = y;
      const neighbors = [
        x > 0 ? p - 1 : -1,
        x < width - 1 ? p + 1 : -1,
        p - width,
        p + width,
      ];
      for (const q of neighbors) {
        if (q < 0 || q >= foreground.length || visited[q] || !foreground[q]) continue;
        // Grow only through color-coherent pixels so touching instances of
        // different colors become separate components.
        if (similar(rgb, p, q, tol)) {
          visited[q] = 1;
          stack.push(q);
        }
      }
    }
    if (area < config.minComponentArea) continue;
    if (wanted) {
      const dist = Math.max(
        Math.abs(mean[0] / area - wanted[0]),
        Math.abs(mean[1] / area - wanted[1]),
        Math.abs(mean[2] / area - wanted[2]),
      );
      if (dist > 2.5 * tol) continue;
    }
    raw.push({ box: [x0, y0, x1 + 1, y1 + 1], area });
  }

  const maxArea = raw.reduce((a, b) => Math.max(a, b.area), 0);
  const boxes = raw.map(({ box, area }) => ({
    xyxy: box,
    score: maxArea > 0 ? area / maxArea : 0,
  }));
  boxes.sort((a, b) => b.score - a.score);
  return boxes;
}
