// Canvas UI: draws the layer stack over the source image, routes pointer
// input to tool actions, and drives completion requests.

import { ServiceClient } from "./api.js";
import { Editor, createSession } from "./session.js";
import { GuidanceKind, Point, ToolKind } from "./types.js";

const SERVICE_URL = (window as any).GCLAB_SERVICE_URL ?? "http://127.0.0.1:8321";

const CLASS_COLORS = [
  [64, 64, 64], [220, 70, 70], [70, 200, 70], [70, 70, 230],
  [220, 200, 60], [220, 70, 220], [70, 200, 220], [230, 230, 230],
];

class App {
  editor: Editor | null = null;
  client = new ServiceClient(SERVICE_URL);
  tool: ToolKind = "brush-mask";
  radius = 4;
  classIndex = 1;
  stroke: Point[] = [];
  drawing = false;

  canvas = document.getElementById("canvas") as HTMLCanvasElement;
  status = document.getElementById("status") as HTMLElement;

  constructor() {
    this.canvas.addEventListener("pointerdown", (e) => this.onDown(e));
    this.canvas.addEventListener("pointermove", (e) => this.onMove(e));
    window.addEventListener("pointerup", () => this.onUp());
    document.getElementById("file")!.addEventListener("change", (e) => this.onFile(e));
    document.getElementById("complete")!.addEventListener("click", () => this.complete());
    document.getElementById("adopt")!.addEventListener("click", () => this.adopt());
    document.getElementById("undo")!.addEventListener("click", () => this.undoRedo(true));
    document.getElementById("redo")!.addEventListener("click", () => this.undoRedo(false));
    document.getElementById("export")!.addEventListener("click", () => this.export());
    (document.getElementById("tool") as HTMLSelectElement).addEventListener(
      "change", (e) => { this.tool = (e.target as HTMLSelectElement).value as ToolKind; });
    (document.getElementById("radius") as HTMLInputElement).addEventListener(
      "change", (e) => { this.radius = Number((e.target as HTMLInputElement).value); });
    (document.getElementById("class") as HTMLInputElement).addEventListener(
      "change", (e) => { this.classIndex = Number((e.target as HTMLInputElement).value); });
    (document.getElementById("kind") as HTMLSelectElement).addEventListener(
      "change", (e) => {
        if (this.editor) {
          this.editor.session.guidanceKind =
            (e.target as HTMLSelectElement).value as GuidanceKind;
        }
      });
    this.say("load an image to start");
  }

  say(message: string) {
    this.status.textContent = message;
  }

  async onFile(event: Event) {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    const bitmap = await createImageBitmap(file);
    const scratch = document.createElement("canvas");
    scratch.width = bitmap.width;
    scratch.height = bitmap.height;
    const ctx = scratch.getContext("2d")!;
    ctx.drawImage(bitmap, 0, 0);
    const rgba = ctx.getImageData(0, 0, bitmap.width, bitmap.height).data;
    const rgb = new Uint8Array(bitmap.width * bitmap.height * 3);
    for (let i = 0; i < bitmap.width * bitmap.height; i++) {
      rgb[3 * i] = rgba[4 * i];
      rgb[3 * i + 1] = rgba[4 * i + 1];
      rgb[3 * i + 2] = rgba[4 * i + 2];
    }
    let k = 4;
    let model = "";
    try {
      const meta = await this.client.meta();
      k = meta.K;
      model = meta.default_model;
      this.say(`connected: models ${meta.model_tags.join(", ")}`);
    } catch {
      this.say("service unreachable; editing offline");
    }
    this.editor = new Editor(createSession(rgb, bitmap.width, bitmap.height, k,
                                           { modelTag: model }));
    this.canvas.width = bitmap.width;
    this.canvas.height = bitmap.height;
    this.render();
  }

  canvasPoint(event: PointerEvent): Point {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: ((event.clientX - rect.left) / rect.width) * this.canvas.width,
      y: ((event.clientY - rect.top) / rect.height) * this.canvas.height,
    };
  }

  onDown(event: PointerEvent) {
    if (!this.editor) return;
    this.drawing = true;
    this.stroke = [this.canvasPoint(event)];
  }

  onMove(event: PointerEvent) {
    if (!this.drawing || !this.editor) return;
    this.stroke.push(this.canvasPoint(event));
    this.render(); // live preview of the stroke path
  }

  onUp() {
    if (!this.drawing || !this.editor || this.stroke.length === 0) return;
    this.drawing = false;
    const action = {
      kind: this.tool,
      points: this.stroke,
      radius: this.radius,
      classIndex: this.classIndex,
    };
    this.editor.applyAction(action);
    if (this.editor.session.statusMessage) this.say(this.editor.session.statusMessage);
    this.stroke = [];
    this.render();
  }

  undoRedo(undo: boolean) {
    if (!this.editor) return;
    if (undo ? this.editor.undo() : this.editor.redo()) this.render();
  }

  async complete() {
    if (!this.editor) return;
    this.say("completing...");
    try {
      const result = await this.editor.requestCompletion(this.client);
      this.say(result.noChange ? "no change (empty mask?)" : `done in ${result.elapsedMs} ms`);
    } catch {
      this.say(this.editor.session.statusMessage || "request failed");
    }
    this.render();
  }

  adopt() {
    if (!this.editor?.session.result) return;
    this.editor.adoptResult();
    this.say("adopted result as new source");
    this.render();
  }

  export() {
    if (!this.editor) return;
    const bytes = this.editor.exportSession();
    const blob = new Blob([bytes as BlobPart], { type: "application/zip" });
    const link = document.createElement("a");
    link.href = URL.createObjectURL(blob);
    link.download = "gclab-session.zip";
    link.click();
    URL.revokeObjectURL(link.href);
  }

  render() {
    if (!this.editor) return;
    const { width, height, source, layers, result } = this.editor.session;
    const ctx = this.canvas.getContext("2d")!;
    const frame = ctx.createImageData(width, height);
    const base = result ? result.image : source;
    for (let i = 0; i < width * height; i++) {
      let r = base[3 * i];
      let g = base[3 * i + 1];
      let b = base[3 * i + 2];
      const cls = layers.semantic[i];
      if (cls > 0) {
        const c = CLASS_COLORS[cls % CLASS_COLORS.length];
        r = (r + c[0]) >> 1;
        g = (g + c[1]) >> 1;
        b = (b + c[2]) >> 1;
      }
      if (layers.edge[i]) { r = 255; g = 255; b = 255; }
      if (layers.mask[i]) { r = (r + 255) >> 1; g >>= 1; b >>= 1; }
      frame.data[4 * i] = r;
      frame.data[4 * i + 1] = g;
      frame.data[4 * i + 2] = b;
      frame.data[4 * i + 3] = 255;
    }
    ctx.putImageData(frame, 0, 0);
  }
}

new App();
