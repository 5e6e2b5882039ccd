/** Canonical wire encoding of annotation records.
 *
 * The server contract is one record per annotation:
 *     {"fov_id": ..., "kind": "PP"|"NP"|"PS"|"NS", "points": [[row, col], ...]}
 * Serialization here is byte-stable: fixed key order, no whitespace, integer
 * coordinates. The submit body wraps records as {"records": [...]}.
 */

import { AnnotationKind, CanvasAnnotation, ImagePoint } from "./types.js";

const KINDS: AnnotationKind[] = ["PP", "NP", "PS", "NS"];

export function serializeRecord(fovId: string, kind: AnnotationKind, points: ImagePoint[]): string {
  if (!KINDS.includes(kind)) {
    throw new Error(`unknown annotation kind ${kind}`);
  }
  if (points.length === 0) {
    throw new Error("a record needs at least one point");
  }
  const pts = points
    .map((p) => `[${Math.round(p.row)},${Math.round(p.col)}]`)
    .join(",");
  return `{"fov_id":${JSON.stringify(fovId)},"kind":"${kind}","points":[${pts}]}`;
}

export function serializeSubmitBody(fovId: string, annotations: CanvasAnnotation[]): string {
  const records = annotations.map((a) => serializeRecord(fovId, a.kind, a.points));
  return `{"records":[${records.join(",")}]}`;
}

/** Parse a stored record's points back into image points. */
export function recordPoints(points: [number, number][]): ImagePoint[] {
  return points.map(([row, col]) => ({ row, col }));
}
