/** Zoom/pan mapping between screen space and image space.
 *
 * Continuous image coordinates (row, col) map to screen (x, y) as
 *     x = col * scale + panX,   y = row * scale + panY
 * so image pixel (r, c) covers the screen square [c*s+panX, (c+1)*s+panX) x
 * [r*s+panY, (r+1)*s+panY) and a pointer position inverts to exact pixel
 * indices with floor(). At zoom 2 with zero pan, screen (200, 200) lands on
 * image pixel (100, 100).
 */

import { ImagePoint } from "./types.js";

export interface ViewTransform {
  scale: number;
  panX: number;
  panY: number;
}

export interface ScreenPoint {
  x: number;
  y: number;
}

export function identityTransform(): ViewTransform {
  return { scale: 1, panX: 0, panY: 0 };
}

/** Continuous image point -> screen point. */
export function imageToScreen(t: ViewTransform, rowF: number, colF: number): ScreenPoint {
  return { x: colF * t.scale + t.panX, y: rowF * t.scale + t.panY };
}

/** Screen point -> the image pixel under it (floor semantics). */
export function screenToImagePixel(t: ViewTransform, p: ScreenPoint): ImagePoint {
  return {
    row: Math.floor((p.y - t.panY) / t.scale),
    col: Math.floor((p.x - t.panX) / t.scale),
  };
}

export function inBounds(p: ImagePoint, height: number, width: number): boolean {
  return p.row >= 0 && p.row < height && p.col >= 0 && p.col < width;
}

/** Zoom about a fixed screen point so the pixel under the cursor stays put. */
export function zoomAbout(t: ViewTransform, anchor: ScreenPoint, factor: number): ViewTransform {
  const scale = t.scale * factor;
  return {
    scale,
    panX: anchor.x - (anchor.x - t.panX) * factor,
    panY: anchor.y - (anchor.y - t.panY) * factor,
  };
}

export function pan(t: ViewTransform, dx: number, dy: number): ViewTransform {
  return { scale: t.scale, panX: t.panX + dx, panY: t.panY + dy };
}
