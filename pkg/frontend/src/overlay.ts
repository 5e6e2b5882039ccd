/** Detection and probability overlays: screen placement and coloring.
 *
 * Detection dots use the same blue-to-red confidence scale as the server's
 * rendered overlays, with a legend built from the same function, so colors
 * mean the same thing everywhere.
 */

import { ScreenPoint, ViewTransform, imageToScreen } from "./transform.js";
import { DetectionRecord } from "./types.js";

export interface Rgb {
  r: number;
  g: number;
  b: number;
}

/** Blue (confidence 0) to red (confidence 1); mirrors the server scale. */
export function confidenceColor(confidence: number): Rgb {
  const c = Math.min(Math.max(confidence, 0), 1);
  return { r: Math.round(255 * c), g: 64, b: Math.round(255 * (1 - c)) };
}

export function cssColor(color: Rgb): string {
  return `rgb(${color.r},${color.g},${color.b})`;
}

export interface PlacedDetection {
  screen: ScreenPoint;
  color: Rgb;
  detection: DetectionRecord;
}

/** Where each detection dot renders under the current transform. The
 * centroid is a continuous image coordinate, so the mapping is exact. */
export function placeDetections(
  detections: DetectionRecord[],
  transform: ViewTransform,
): PlacedDetection[] {
  return detections.map((d) => ({
    screen: imageToScreen(transform, d.row, d.col),
    color: confidenceColor(d.confidence),
    detection: d,
  }));
}

/** Legend stops for the confidence color bar. */
export function legendStops(steps = 5): { value: number; color: Rgb }[] {
  return Array.from({ length: steps + 1 }, (_, i) => {
    const value = i / steps;
    return { value, color: confidenceColor(value) };
  });
}

/** Alpha-composite one probability-heat pixel over the base image pixel. */
export function compositeHeatPixel(base: Rgb, probability: number, opacity: number): Rgb {
  const heat = confidenceColor(probability);
  const a = Math.min(Math.max(opacity, 0), 1);
  return {
    r: Math.round(base.r * (1 - a) + heat.r * a),
    g: Math.round(base.g * (1 - a) + heat.g * a),
    b: Math.round(base.b * (1 - a) + heat.b * a),
  };
}
