/** Typed client for the detection service HTTP API. All state lives on the
 * server; this wrapper only shapes requests and responses. */

import { serializeSubmitBody } from "./schema.js";
import {
  AnnotateResponse,
  CanvasAnnotation,
  DetectResponse,
  ModelsResponse,
  StoredRecord,
  UploadResponse,
} from "./types.js";

export type FetchFn = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(readonly status: number, detail: unknown) {
    super(`HTTP ${status}: ${JSON.stringify(detail)}`);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchFn = (url, init) => fetch(url, init),
  ) {}

  private async json<T>(response: Response): Promise<T> {
    const body = await response.json();
    if (!response.ok) {
      throw new ApiError(response.status, (body as { detail?: unknown }).detail ?? body);
    }
    return body as T;
  }

  async uploadImage(png: ArrayBuffer | Uint8Array): Promise<UploadResponse> {
    const response = await this.fetchFn(`${this.baseUrl}/images`, {
      method: "POST",
      headers: { "content-type": "image/png" },
      body: png as BodyInit,
    });
    return this.json<UploadResponse>(response);
  }

  async detect(imageId: string): Promise<DetectResponse> {
    const response = await this.fetchFn(`${this.baseUrl}/images/${imageId}/detect`, {
      method: "POST",
    });
    return this.json<DetectResponse>(response);
  }

  overlayUrl(imageId: string): string {
    return `${this.baseUrl}/images/${imageId}/overlay`;
  }

  /** Submit pending annotations with the byte-stable record encoding. */
  async submitAnnotations(
    imageId: string,
    annotations: CanvasAnnotation[],
  ): Promise<AnnotateResponse> {
    const response = await this.fetchFn(`${this.baseUrl}/images/${imageId}/annotations`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: serializeSubmitBody(imageId, annotations),
    });
    return this.json<AnnotateResponse>(response);
  }

  async fetchAnnotations(imageId: string): Promise<StoredRecord[]> {
    const response = await this.fetchFn(`${this.baseUrl}/images/${imageId}/annotations`);
    const body = await this.json<{ records: StoredRecord[] }>(response);
    return body.records;
  }

  async models(): Promise<ModelsResponse> {
    const response = await this.fetchFn(`${this.baseUrl}/models`);
    return this.json<ModelsResponse>(response);
  }

  async triggerFinetune(): Promise<{ status: string }> {
    const response = await this.fetchFn(`${this.baseUrl}/finetune`, { method: "POST" });
    return this.json<{ status: string }>(response);
  }
}
