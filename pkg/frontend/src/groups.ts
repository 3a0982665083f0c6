import type { Point } from './types.js';

// 300-W Multi-PIE index layout
export const GROUP_RANGES: Record<string, [number, number]> = {
  jaw: [0, 17],
  rightBrow: [17, 22],
  leftBrow: [22, 27],
  nose: [27, 36],
  rightEye: [36, 42],
  leftEye: [42, 48],
  mouth: [48, 68],
};

export const GROUP_COLORS: Record<string, string> = {
  jaw: '#c8c8c8',
  rightBrow: '#50dc50',
  leftBrow: '#50dc50',
  nose: '#5078ff',
  rightEye: '#00dcdc',
  leftEye: '#00dcdc',
  mouth: '#ff5050',
};

export function groupOf(index: number): string {
  for (const [name, [lo, hi]] of Object.entries(GROUP_RANGES)) {
    if (index >= lo && index < hi) return name;
  }
  throw new Error(`landmark index out of range: ${index}`);
}

export function colorOf(index: number): string {
  return GROUP_COLORS[groupOf(index)];
}

/** A neutral 68-point face layout (in a 256-unit frame) for annotating from
 * scratch, scaled into the target image frame. */
export function templateLayout(width: number, height: number): Point[] {
  const pts: Point[] = [];
  for (let i = 0; i < 17; i++) {
    const ang = (Math.PI * i) / 16;
    pts.push({ x: 128 - 70 * Math.cos(ang), y: 120 + 95 * Math.sin(ang) });
  }
  for (let k = 0; k < 5; k++) {
    pts.push({ x: 75 + 10 * k, y: 95 - 6 * Math.sin((Math.PI * k) / 4) });
  }
  for (let k = 0; k < 5; k++) {
    pts.push({ x: 141 + 10 * k, y: 95 - 6 * Math.sin((Math.PI * (4 - k)) / 4) });
  }
  for (let k = 0; k < 4; k++) pts.push({ x: 128 + 0.6 * k, y: 112 + 11 * k });
  for (let k = 0; k < 5; k++) {
    pts.push({ x: 112 + 8 * k, y: 155 + (k === 0 || k === 4 ? 0 : 3) });
  }
  const eye: [number, number][] = [[-13, 0], [-6, -4], [3, -4], [10, 0], [3, 4], [-6, 4]];
  for (const [dx, dy] of eye) pts.push({ x: 95 + dx, y: 115 + dy });
  for (const [dx, dy] of eye) pts.push({ x: 161 - dx, y: 115 + dy });
  const outer: [number, number][] = [
    [-28, 0], [-20, -6], [-9, -9], [0, -8], [9, -9], [20, -6], [28, 0],
    [20, 7], [9, 10], [0, 11], [-9, 10], [-20, 7],
  ];
  const inner: [number, number][] = [
    [-22, 0], [-10, -3], [0, -2], [10, -3], [22, 0], [10, 3], [0, 4], [-10, 3],
  ];
  for (const [dx, dy] of outer) pts.push({ x: 128 + dx, y: 185 + dy });
  for (const [dx, dy] of inner) pts.push({ x: 128 + dx, y: 185 + dy });
  const s = Math.min(width, height) / 256;
  const ox = (width - 256 * s) / 2;
  const oy = (height - 256 * s) / 2;
  return pts.map((p) => ({ x: p.x * s + ox, y: p.y * s + oy }));
}
