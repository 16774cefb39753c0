// Layer edits. Every operation touches only its declared footprint and
// mirrors the server-side panoptic semantics: inserting occludes,
// deleting re-densifies instance ids to 1..n.

import { ActionRejected, Layers, Point, Stencil } from "./types.js";

export function createLayers(width: number, height: number): Layers {
  return {
    width,
    height,
    mask: new Uint8Array(width * height),
    semantic: new Uint8Array(width * height),
    instance: new Uint16Array(width * height),
    edge: new Uint8Array(width * height),
  };
}

export function cloneLayers(layers: Layers): Layers {
  return {
    width: layers.width,
    height: layers.height,
    mask: layers.mask.slice(),
    semantic: layers.semantic.slice(),
    instance: layers.instance.slice(),
    edge: layers.edge.slice(),
  };
}

export function layersEqual(a: Layers, b: Layers): boolean {
  if (a.width !== b.width || a.height !== b.height) return false;
  const same = (x: ArrayLike<number>, y: ArrayLike<number>) => {
    for (let i = 0; i < x.length; i++) if (x[i] !== y[i]) return false;
    return true;
  };
  return (
    same(a.mask, b.mask) &&
    same(a.semantic, b.semantic) &&
    same(a.instance, b.instance) &&
    same(a.edge, b.edge)
  );
}

function stampDisc(
  target: Uint8Array,
  width: number,
  height: number,
  center: Point,
  radius: number,
  value: number,
): void {
  const r2 = radius * radius;
  const y0 = Math.max(Math.floor(center.y - radius), 0);
  const y1 = Math.min(Math.ceil(center.y + radius), height - 1);
  const x0 = Math.max(Math.floor(center.x - radius), 0);
  const x1 = Math.min(Math.ceil(center.x + radius), width - 1);
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dx = x - center.x;
      const dy = y - center.y;
      if (dx * dx + dy * dy <= r2) target[y * width + x] = value;
    }
  }
}

export function paintPath(
  target: Uint8Array,
  width: number,
  height: number,
  points: Point[],
  radius: number,
  value: number,
): void {
  if (points.length === 0) throw new ActionRejected("brush path is empty");
  if (radius < 1) throw new ActionRejected("brush radius must be >= 1");
  for (let i = 0; i < points.length; i++) {
    stampDisc(target, width, height, points[i], radius, value);
    if (i > 0) {
      // fill along the segment so fast strokes stay connected
      const a = points[i - 1];
      const b = points[i];
      const steps = Math.ceil(Math.hypot(b.x - a.x, b.y - a.y));
      for (let s = 1; s < steps; s++) {
        const t = s / steps;
        stampDisc(
          target, width, height,
          { x: a.x + (b.x - a.x) * t, y: a.y + (b.y - a.y) * t },
          radius, value,
        );
      }
    }
  }
}

export function densifyInstances(instance: Uint16Array): Uint16Array {
  const seen = new Map<number, number>();
  const out = new Uint16Array(instance.length);
  // first-seen order by ascending original id, matching the server
  const ids = [...new Set(instance)].filter((v) => v > 0).sort((a, b) => a - b);
  ids.forEach((id, index) => seen.set(id, index + 1));
  for (let i = 0; i < instance.length; i++) {
    out[i] = instance[i] > 0 ? seen.get(instance[i])! : 0;
  }
  return out;
}

export function deleteInstance(layers: Layers, instanceId: number): Layers {
  if (instanceId < 1) throw new ActionRejected("instance id must be positive");
  let found = false;
  const next = cloneLayers(layers);
  for (let i = 0; i < next.instance.length; i++) {
    if (next.instance[i] === instanceId) {
      next.instance[i] = 0;
      next.semantic[i] = 0;
      found = true;
    }
  }
  if (!found) throw new ActionRejected(`instance ${instanceId} not present`);
  next.instance = densifyInstances(next.instance);
  return next;
}

export function insertStencil(
  layers: Layers,
  stencil: Stencil,
  classIndex: number,
  position: Point,
  k: number,
): Layers {
  if (classIndex < 1 || classIndex >= k) {
    throw new ActionRejected(`class index ${classIndex} out of range [1, ${k})`);
  }
  const top = Math.round(position.y);
  const left = Math.round(position.x);
  if (
    top < 0 || left < 0 ||
    top + stencil.height > layers.height ||
    left + stencil.width > layers.width
  ) {
    throw new ActionRejected("stencil placement out of bounds");
  }
  let any = false;
  const next = cloneLayers(layers);
  let newId = 0;
  for (let i = 0; i < next.instance.length; i++) newId = Math.max(newId, next.instance[i]);
  newId += 1;
  for (let sy = 0; sy < stencil.height; sy++) {
    for (let sx = 0; sx < stencil.width; sx++) {
      if (!stencil.data[sy * stencil.width + sx]) continue;
      const idx = (top + sy) * layers.width + (left + sx);
      next.instance[idx] = newId;
      next.semantic[idx] = classIndex;
      any = true;
    }
  }
  if (!any) throw new ActionRejected("stencil is empty");
  next.instance = densifyInstances(next.instance); // occlusion may erase ids
  return next;
}

export function moveInstance(
  layers: Layers,
  instanceId: number,
  displacement: Point,
): Layers {
  const dy = Math.round(displacement.y);
  const dx = Math.round(displacement.x);
  const { width, height } = layers;
  const pixels: Array<{ idx: number; cls: number }> = [];
  for (let i = 0; i < layers.instance.length; i++) {
    if (layers.instance[i] === instanceId) {
      pixels.push({ idx: i, cls: layers.semantic[i] });
    }
  }
  if (pixels.length === 0) throw new ActionRejected(`instance ${instanceId} not present`);
  const next = cloneLayers(layers);
  for (const { idx } of pixels) {
    next.instance[idx] = 0;
    next.semantic[idx] = 0;
  }
  for (const { idx, cls } of pixels) {
    const y = Math.floor(idx / width) + dy;
    const x = (idx % width) + dx;
    if (y < 0 || y >= height || x < 0 || x >= width) continue;
    next.instance[y * width + x] = instanceId;
    next.semantic[y * width + x] = cls;
  }
  next.instance = densifyInstances(next.instance);
  return next;
}
