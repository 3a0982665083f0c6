import type { Point } from './types.js';

/** screen = image * zoom + pan; the transform is always invertible since
 * zoom is clamped positive. */
export interface Viewport {
  zoom: number;
  panX: number;
  panY: number;
}

export const MIN_ZOOM = 0.05;
export const MAX_ZOOM = 64;

export function imageToScreen(v: Viewport, p: Point): Point {
  return { x: p.x * v.zoom + v.panX, y: p.y * v.zoom + v.panY };
}

export function screenToImage(v: Viewport, p: Point): Point {
  return { x: (p.x - v.panX) / v.zoom, y: (p.y - v.panY) / v.zoom };
}

/** A screen-space drag delta, expressed in image pixels. */
export function screenDeltaToImage(v: Viewport, d: Point): Point {
  return { x: d.x / v.zoom, y: d.y / v.zoom };
}

/** Zoom by `factor` keeping the given screen point fixed. */
export function zoomAt(v: Viewport, anchor: Point, factor: number): Viewport {
  const zoom = Math.min(MAX_ZOOM, Math.max(MIN_ZOOM, v.zoom * factor));
  const eff = zoom / v.zoom;
  return {
    zoom,
    panX: anchor.x - (anchor.x - v.panX) * eff,
    panY: anchor.y - (anchor.y - v.panY) * eff,
  };
}

export function pan(v: Viewport, d: Point): Viewport {
  return { zoom: v.zoom, panX: v.panX + d.x, panY: v.panY + d.y };
}

/** Fit the image into the canvas, centered. */
export function fitView(imageW: number, imageH: number, canvasW: number, canvasH: number): Viewport {
  const zoom = Math.min(canvasW / imageW, canvasH / imageH);
  return {
    zoom,
    panX: (canvasW - imageW * zoom) / 2,
    panY: (canvasH - imageH * zoom) / 2,
  };
}
