export type GuidanceKind = "edge" | "semantic" | "panoptic" | "none";

export type ToolKind =
  | "brush-mask"
  | "erase-mask"
  | "paint-class"
  | "move-instance"
  | "delete-instance"
  | "insert-stencil"
  | "draw-edge";

export interface Point {
  x: number;
  y: number;
}

export interface Stencil {
  width: number;
  height: number;
  // row-major 0/1 footprint
  data: Uint8Array;
}

export interface ToolAction {
  kind: ToolKind;
  points?: Point[];          // brush path / placement anchor
  radius?: number;           // brush radius in pixels (>= 1)
  classIndex?: number;       // paint-class / insert-stencil
  instanceId?: number;       // move- / delete-instance
  displacement?: Point;      // move-instance
  stencil?: Stencil;         // insert-stencil
}

export interface Layers {
  width: number;
  height: number;
  mask: Uint8Array;        // 0/1, 1 = hole
  semantic: Uint8Array;    // class indices < K
  instance: Uint16Array;   // 0 = none, dense 1..n
  edge: Uint8Array;        // 0/1
}

export interface ServiceMeta {
  model_tags: string[];
  default_model: string;
  K: number;
  class_names: string[];
  guidance_kinds: string[];
  crop_size: number;
}

export interface CompletionResult {
  image: Uint8Array;       // RGB interleaved, same resolution as source
  model: string;
  elapsedMs: number;
  noChange: boolean;
  predictedSemantic?: Uint8Array;
  predictedInstance?: Uint16Array;
}

export interface EditorSession {
  width: number;
  height: number;
  source: Uint8Array;      // RGB interleaved u8
  layers: Layers;
  guidanceKind: GuidanceKind;
  modelTag: string;
  k: number;
  classNames: string[];
  result: CompletionResult | null;
  requestPending: boolean;
  statusMessage: string;
}

export class ActionRejected extends Error {}
