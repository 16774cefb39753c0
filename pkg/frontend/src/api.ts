// Client for the /v1 inference service. Errors surface the machine-readable
// `field` from the error body so the UI can name the offending layer.

import { b64decode, b64encode, decodePng, encodePng } from "./png.js";
import { CompletionResult, GuidanceKind, Layers, ServiceMeta } from "./types.js";

export class ApiFieldError extends Error {
  constructor(
    public status: number,
    message: string,
    public field: string,
  ) {
    super(message);
  }
}

export function rgbToPngB64(rgb: Uint8Array, width: number, height: number): string {
  return b64encode(encodePng({ width, height, channels: 3, bitDepth: 8, data: rgb }));
}

export function grayToPngB64(
  gray: Uint8Array,
  width: number,
  height: number,
  scale = 1,
): string {
  const data = scale === 1 ? gray : gray.map((v) => v * scale);
  return b64encode(encodePng({ width, height, channels: 1, bitDepth: 8, data }));
}

export function gray16ToPngB64(gray: Uint16Array, width: number, height: number): string {
  return b64encode(encodePng({ width, height, channels: 1, bitDepth: 16, data: gray }));
}

export function pngB64ToImage(payload: string) {
  return decodePng(b64decode(payload));
}

export function completionPayload(
  source: Uint8Array,
  layers: Layers,
  guidanceKind: GuidanceKind,
  modelTag: string | null,
): Record<string, string> {
  const { width, height } = layers;
  const payload: Record<string, string> = {
    image: rgbToPngB64(source, width, height),
    mask: grayToPngB64(layers.mask, width, height, 255),
    guidance_kind: guidanceKind,
  };
  if (guidanceKind === "edge") {
    payload.edge = grayToPngB64(layers.edge, width, height, 255);
  } else if (guidanceKind === "semantic") {
    payload.semantic = grayToPngB64(layers.semantic, width, height);
  } else if (guidanceKind === "panoptic") {
    payload.semantic = grayToPngB64(layers.semantic, width, height);
    payload.instance = gray16ToPngB64(layers.instance, width, height);
  }
  if (modelTag) payload.model = modelTag;
  return payload;
}

export class ServiceClient {
  constructor(
    private baseUrl: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<any> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const body = await response.json().catch(() => ({}));
    if (!response.ok) {
      throw new ApiFieldError(
        response.status,
        body.error ?? `HTTP ${response.status}`,
        body.field ?? "",
      );
    }
    return body;
  }

  async meta(): Promise<ServiceMeta> {
    return this.request("/v1/meta");
  }

  async complete(payload: Record<string, string>): Promise<CompletionResult> {
    const body = await this.request("/v1/complete", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(payload),
    });
    const image = pngB64ToImage(body.image);
    if (image.channels !== 3 || image.bitDepth !== 8) {
      throw new ApiFieldError(502, "service returned a non-RGB image", "image");
    }
    const result: CompletionResult = {
      image: image.data as Uint8Array,
      model: body.model,
      elapsedMs: body.elapsed_ms ?? 0,
      noChange: false,
    };
    if (body.semantic) {
      result.predictedSemantic = pngB64ToImage(body.semantic).data as Uint8Array;
    }
    if (body.instance) {
      const inst = pngB64ToImage(body.instance);
      result.predictedInstance =
        inst.bitDepth === 16
          ? (inst.data as Uint16Array)
          : Uint16Array.from(inst.data as Uint8Array);
    }
    return result;
  }
}
