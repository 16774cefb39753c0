import { describe, expect, it } from "vitest";

import { decodePng } from "../src/png.js";
import { Editor, bytesEqual, createSession, layersEqual } from "../src/session.js";
import { unzipSync } from "fflate";
import { Stencil } from "../src/types.js";

const W = 32;
const H = 32;
const K = 4;

function makeEditor(): Editor {
  const source = new Uint8Array(W * H * 3);
  for (let i = 0; i < W * H; i++) {
    source[3 * i] = (i * 7) % 256;
    source[3 * i + 1] = (i * 13) % 256;
    source[3 * i + 2] = (i * 29) % 256;
  }
  return new Editor(createSession(source, W, H, K));
}

function squareStencil(side: number): Stencil {
  return { width: side, height: side, data: new Uint8Array(side * side).fill(1) };
}

describe("apply / undo / redo", () => {
  it("brush-mask then undo restores the pre-action state exactly", () => {
    const editor = makeEditor();
    const before = structuredClone(editor.session.layers);
    editor.applyAction({ kind: "brush-mask", points: [{ x: 10, y: 10 }], radius: 3 });
    expect(layersEqual(editor.session.layers, before)).toBe(false);
    expect(editor.undo()).toBe(true);
    expect(layersEqual(editor.session.layers, before)).toBe(true);
  });

  it("undo/redo are exact inverses over a chain of edits", () => {
    const editor = makeEditor();
    const snapshots = [structuredClone(editor.session.layers)];
    const actions = [
      { kind: "brush-mask" as const, points: [{ x: 5, y: 5 }, { x: 20, y: 18 }], radius: 2 },
      { kind: "paint-class" as const, points: [{ x: 12, y: 12 }], radius: 4, classIndex: 2 },
      { kind: "draw-edge" as const, points: [{ x: 3, y: 30 }, { x: 28, y: 3 }], radius: 1 },
      { kind: "erase-mask" as const, points: [{ x: 5, y: 5 }], radius: 1 },
    ];
    for (const action of actions) {
      editor.applyAction(action);
      snapshots.push(structuredClone(editor.session.layers));
    }
    for (let i = snapshots.length - 2; i >= 0; i--) {
      expect(editor.undo()).toBe(true);
      expect(layersEqual(editor.session.layers, snapshots[i])).toBe(true);
    }
    expect(editor.undo()).toBe(false);
    for (let i = 1; i < snapshots.length; i++) {
      expect(editor.redo()).toBe(true);
      expect(layersEqual(editor.session.layers, snapshots[i])).toBe(true);
    }
    expect(editor.redo()).toBe(false);
  });

  it("rejects paint-class with index K and leaves the session unchanged", () => {
    const editor = makeEditor();
    const before = structuredClone(editor.session.layers);
    editor.applyAction({ kind: "paint-class", points: [{ x: 8, y: 8 }],
                         radius: 3, classIndex: K });
    expect(layersEqual(editor.session.layers, before)).toBe(true);
    expect(editor.session.statusMessage).toMatch(/out of range/);
    expect(editor.history.canUndo()).toBe(false);
  });

  it("no action mutates pixels outside its footprint", () => {
    const editor = makeEditor();
    const before = structuredClone(editor.session.layers);
    const radius = 3;
    const center = { x: 16, y: 16 };
    editor.applyAction({ kind: "brush-mask", points: [center], radius });
    const after = editor.session.layers;
    for (let y = 0; y < H; y++) {
      for (let x = 0; x < W; x++) {
        const dist2 = (x - center.x) ** 2 + (y - center.y) ** 2;
        if (dist2 > (radius + 1) ** 2) {
          expect(after.mask[y * W + x]).toBe(before.mask[y * W + x]);
        }
        expect(after.semantic[y * W + x]).toBe(before.semantic[y * W + x]);
        expect(after.edge[y * W + x]).toBe(before.edge[y * W + x]);
      }
    }
  });
});

describe("instance tools", () => {
  it("insert occludes and delete re-densifies", () => {
    const editor = makeEditor();
    editor.applyAction({ kind: "insert-stencil", stencil: squareStencil(8),
                         points: [{ x: 4, y: 4 }], classIndex: 1 });
    editor.applyAction({ kind: "insert-stencil", stencil: squareStencil(8),
                         points: [{ x: 16, y: 16 }], classIndex: 2 });
    editor.applyAction({ kind: "insert-stencil", stencil: squareStencil(8),
                         points: [{ x: 20, y: 4 }], classIndex: 3 });
    let ids = new Set(editor.session.layers.instance);
    expect([...ids].sort()).toEqual([0, 1, 2, 3]);

    editor.applyAction({ kind: "delete-instance", instanceId: 2 });
    ids = new Set(editor.session.layers.instance);
    expect([...ids].sort()).toEqual([0, 1, 2]); // re-densified, no gap
    expect(editor.session.statusMessage).toBe("");
  });

  it("deleting a missing instance is rejected without changes", () => {
    const editor = makeEditor();
    const before = structuredClone(editor.session.layers);
    editor.applyAction({ kind: "delete-instance", instanceId: 9 });
    expect(layersEqual(editor.session.layers, before)).toBe(true);
    expect(editor.session.statusMessage).toMatch(/not present/);
  });

  it("move-instance translates pixels and vacates the origin", () => {
    const editor = makeEditor();
    editor.applyAction({ kind: "insert-stencil", stencil: squareStencil(4),
                         points: [{ x: 2, y: 2 }], classIndex: 1 });
    editor.applyAction({ kind: "move-instance", instanceId: 1,
                         displacement: { x: 10, y: 6 } });
    const layers = editor.session.layers;
    expect(layers.instance[(2 + 6) * W + (2 + 10)]).toBe(1);
    expect(layers.instance[2 * W + 2]).toBe(0);
    expect(layers.semantic[2 * W + 2]).toBe(0);
  });
});

describe("session export / import", () => {
  it("round-trips the full layer stack bit-exactly", () => {
    const editor = makeEditor();
    editor.applyAction({ kind: "brush-mask", points: [{ x: 9, y: 21 }], radius: 5 });
    editor.applyAction({ kind: "insert-stencil", stencil: squareStencil(6),
                         points: [{ x: 12, y: 3 }], classIndex: 2 });
    editor.applyAction({ kind: "draw-edge", points: [{ x: 0, y: 0 }, { x: 31, y: 31 }],
                         radius: 1 });
    const archive = editor.exportSession();
    const back = Editor.importSession(archive);
    expect(bytesEqual(back.session.source, editor.session.source)).toBe(true);
    expect(layersEqual(back.session.layers, editor.session.layers)).toBe(true);
    expect(back.session.k).toBe(K);
    expect(back.session.guidanceKind).toBe(editor.session.guidanceKind);
  });

  it("exported instance PNG lacks deleted ids and stays dense", () => {
    const editor = makeEditor();
    editor.applyAction({ kind: "insert-stencil", stencil: squareStencil(6),
                         points: [{ x: 2, y: 2 }], classIndex: 1 });
    editor.applyAction({ kind: "insert-stencil", stencil: squareStencil(6),
                         points: [{ x: 14, y: 14 }], classIndex: 2 });
    editor.applyAction({ kind: "delete-instance", instanceId: 1 });
    const files = unzipSync(editor.exportSession());
    const inst = decodePng(files["inst.png"]);
    const ids = [...new Set(inst.data as Uint16Array)].sort();
    expect(ids).toEqual([0, 1]);
    expect(inst.bitDepth).toBe(16);
  });
});
