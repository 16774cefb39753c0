// Editor state machine: action application with undo/redo, completion
// round trips with at most one in-flight request, and lossless session
// export/import as a zip of dataset-format PNGs plus a session JSON.

import { strToU8, strFromU8, unzipSync, zipSync } from "fflate";

import { ApiFieldError, ServiceClient, completionPayload } from "./api.js";
import { History } from "./history.js";
import {
  cloneLayers,
  createLayers,
  deleteInstance,
  insertStencil,
  layersEqual,
  moveInstance,
  paintPath,
} from "./layers.js";
import { decodePng, encodePng } from "./png.js";
import {
  ActionRejected,
  CompletionResult,
  EditorSession,
  GuidanceKind,
  Layers,
  ToolAction,
} from "./types.js";

export function createSession(
  source: Uint8Array,
  width: number,
  height: number,
  k: number,
  options: Partial<Pick<EditorSession, "guidanceKind" | "modelTag" | "classNames">> = {},
): EditorSession {
  if (source.length !== width * height * 3) {
    throw new Error(`source must be RGB u8 of ${width}x${height}`);
  }
  return {
    width,
    height,
    source: source.slice(),
    layers: createLayers(width, height),
    guidanceKind: options.guidanceKind ?? "panoptic",
    modelTag: options.modelTag ?? "",
    k,
    classNames: options.classNames ?? [],
    result: null,
    requestPending: false,
    statusMessage: "",
  };
}

function editedLayers(session: EditorSession, action: ToolAction): Layers {
  const layers = session.layers;
  switch (action.kind) {
    case "brush-mask":
    case "erase-mask": {
      const next = cloneLayers(layers);
      paintPath(next.mask, layers.width, layers.height, action.points ?? [],
                action.radius ?? 1, action.kind === "brush-mask" ? 1 : 0);
      return next;
    }
    case "draw-edge": {
      const next = cloneLayers(layers);
      paintPath(next.edge, layers.width, layers.height, action.points ?? [],
                action.radius ?? 1, 1);
      return next;
    }
    case "paint-class": {
      const classIndex = action.classIndex ?? -1;
      if (classIndex < 0 || classIndex >= session.k) {
        throw new ActionRejected(`class index ${classIndex} out of range [0, ${session.k})`);
      }
      const next = cloneLayers(layers);
      paintPath(next.semantic, layers.width, layers.height, action.points ?? [],
                action.radius ?? 1, classIndex);
      return next;
    }
    case "delete-instance":
      return deleteInstance(layers, action.instanceId ?? 0);
    case "insert-stencil": {
      if (!action.stencil || !action.points?.length) {
        throw new ActionRejected("insert-stencil needs a stencil and a position");
      }
      return insertStencil(layers, action.stencil, action.classIndex ?? 0,
                           action.points[0], session.k);
    }
    case "move-instance": {
      if (!action.displacement) throw new ActionRejected("move-instance needs a displacement");
      return moveInstance(layers, action.instanceId ?? 0, action.displacement);
    }
    default:
      throw new ActionRejected(`unknown tool ${(action as ToolAction).kind}`);
  }
}

export class Editor {
  readonly history = new History();
  private queued: (() => void) | null = null;

  constructor(public session: EditorSession) {}

  /** Apply a tool action; on rejection the session is left untouched. */
  applyAction(action: ToolAction): void {
    let next: Layers;
    try {
      next = editedLayers(this.session, action);
    } catch (err) {
      if (err instanceof ActionRejected) {
        this.session = { ...this.session, statusMessage: err.message };
        return;
      }
      throw err;
    }
    this.history.push(this.session.layers);
    this.session = { ...this.session, layers: next, statusMessage: "" };
  }

  undo(): boolean {
    const previous = this.history.undo(this.session.layers);
    if (!previous) return false;
    this.session = { ...this.session, layers: previous };
    return true;
  }

  redo(): boolean {
    const next = this.history.redo(this.session.layers);
    if (!next) return false;
    this.session = { ...this.session, layers: next };
    return true;
  }

  /** POST the current layers to /v1/complete; one request in flight at a
   * time, with the latest re-request coalesced behind it. */
  async requestCompletion(client: ServiceClient): Promise<CompletionResult> {
    if (this.session.requestPending) {
      return new Promise((resolve, reject) => {
        this.queued = () => this.requestCompletion(client).then(resolve, reject);
      });
    }
    this.session = { ...this.session, requestPending: true };
    try {
      const payload = completionPayload(
        this.session.source, this.session.layers,
        this.session.guidanceKind, this.session.modelTag || null,
      );
      const result = await client.complete(payload);
      result.noChange = bytesEqual(result.image, this.session.source);
      this.session = {
        ...this.session,
        requestPending: false,
        result,
        statusMessage: result.noChange ? "no change" : "",
      };
      return result;
    } catch (err) {
      const message = err instanceof ApiFieldError && err.field
        ? `${err.field}: ${err.message}`
        : String(err);
      this.session = { ...this.session, requestPending: false, statusMessage: message };
      throw err;
    } finally {
      const queued = this.queued;
      this.queued = null;
      queued?.();
    }
  }

  /** Adopt the completion as the new source and keep iterating. */
  adoptResult(): void {
    const result = this.session.result;
    if (!result) throw new ActionRejected("no completion result to adopt");
    const layers = cloneLayers(this.session.layers);
    layers.mask.fill(0);
    if (result.predictedSemantic) layers.semantic.set(result.predictedSemantic);
    if (result.predictedInstance) layers.instance.set(result.predictedInstance);
    this.history.push(this.session.layers);
    this.session = {
      ...this.session,
      source: result.image.slice(),
      layers,
      result: null,
      statusMessage: "adopted result",
    };
  }

  exportSession(): Uint8Array {
    const { width, height } = this.session;
    const gray = (data: Uint8Array, scale = 1) =>
      encodePng({
        width, height, channels: 1, bitDepth: 8,
        data: scale === 1 ? data : data.map((v) => v * scale),
      });
    const files: Record<string, Uint8Array> = {
      "source.png": encodePng({
        width, height, channels: 3, bitDepth: 8, data: this.session.source,
      }),
      "mask.png": gray(this.session.layers.mask, 255),
      "sem.png": gray(this.session.layers.semantic),
      "inst.png": encodePng({
        width, height, channels: 1, bitDepth: 16, data: this.session.layers.instance,
      }),
      "edge.png": gray(this.session.layers.edge, 255),
      "session.json": strToU8(JSON.stringify({
        width, height,
        k: this.session.k,
        guidance_kind: this.session.guidanceKind,
        model: this.session.modelTag,
        class_names: this.session.classNames,
      })),
    };
    return zipSync(files);
  }

  static importSession(archive: Uint8Array): Editor {
    const files = unzipSync(archive);
    const meta = JSON.parse(strFromU8(files["session.json"]));
    const source = decodePng(files["source.png"]);
    if (source.channels !== 3) throw new Error("source.png must be RGB");
    const editor = new Editor(createSession(
      source.data as Uint8Array, meta.width, meta.height, meta.k,
      {
        guidanceKind: meta.guidance_kind as GuidanceKind,
        modelTag: meta.model,
        classNames: meta.class_names,
      },
    ));
    const layers = editor.session.layers;
    const mask = decodePng(files["mask.png"]).data as Uint8Array;
    for (let i = 0; i < mask.length; i++) layers.mask[i] = mask[i] >= 128 ? 1 : 0;
    layers.semantic.set(decodePng(files["sem.png"]).data as Uint8Array);
    const inst = decodePng(files["inst.png"]);
    layers.instance.set(inst.data as unknown as Uint16Array);
    const edge = decodePng(files["edge.png"]).data as Uint8Array;
    for (let i = 0; i < edge.length; i++) layers.edge[i] = edge[i] >= 128 ? 1 : 0;
    return editor;
  }
}

export function bytesEqual(a: Uint8Array, b: Uint8Array): boolean {
  if (a.length !== b.length) return false;
  for (let i = 0; i < a.length; i++) if (a[i] !== b[i]) return false;
  return true;
}

export { layersEqual };
