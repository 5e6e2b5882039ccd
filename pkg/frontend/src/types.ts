/** Shared types for the annotation UI. Image coordinates are (row, col)
 * integer pixels with the origin at the top-left, matching the server. */

export type AnnotationKind = "PP" | "NP" | "PS" | "NS";

export const CLICK_KINDS: AnnotationKind[] = ["PP", "NP"];
export const SCRIBBLE_KINDS: AnnotationKind[] = ["PS", "NS"];

export interface ImagePoint {
  row: number;
  col: number;
}

/** One drawn annotation: a click (single point) or a scribble (polyline). */
export interface CanvasAnnotation {
  kind: AnnotationKind;
  /** Ordered image-pixel points; length 1 for clicks. */
  points: ImagePoint[];
  state: "pending" | "submitted";
}

export interface DetectionRecord {
  row: number;
  col: number;
  confidence: number;
  area: number;
  eccentricity: number;
}

export interface DetectResponse {
  image_id: string;
  model_id: string;
  threshold: number;
  count: number;
  detections: DetectionRecord[];
  probmap: string;
  detections_file: string;
}

export interface UploadResponse {
  image_id: string;
  height: number;
  width: number;
}

export interface AnnotateResponse {
  accepted: number;
  unconsumed_count: number;
  finetune_triggered: boolean;
  finetune_running: boolean;
}

export interface StoredRecord {
  id: number;
  fov_id: string;
  kind: AnnotationKind;
  points: [number, number][];
  author: string;
  timestamp: number;
  consumed_by_model_id: string | null;
}

export interface ModelEntry {
  model_id: string;
  parent_id: string | null;
  path: string;
  threshold: number;
  created: number;
  status: "training" | "ready" | "finetuning";
}

export interface ModelsResponse {
  active_model_id: string | null;
  finetune_running: boolean;
  finetune_error: string | null;
  models: ModelEntry[];
}
