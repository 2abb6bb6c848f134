/** Pure render model for the editor canvas, plus a 2D-context painter.
 *
 * Boxes with fully known geometry render solid (all precise) or dashed (any
 * coarse geometry); elements with missing geometry render as placeholders.
 * Relation constraints become labeled arrows between element centers.
 */
import type { EditorState } from "./state.js";
import type { LayoutDoc, RelationName } from "./types.js";

export type BoxStyle = "solid" | "dashed" | "placeholder";

export interface RenderBox {
  element: number;
  style: BoxStyle;
  x: number;
  y: number;
  w: number;
  h: number;
  color: string;
  label: string;
}

export interface RenderArrow {
  from: number;
  to: number;
  label: RelationName;
}

export interface RenderModel {
  canvas: { width: number; height: number };
  boxes: RenderBox[];
  arrows: RenderArrow[];
  legend: { category: string; color: string }[];
  showAddAffordance: boolean;
}

const PALETTE = [
  "#4e79a7",
  "#f28e2b",
  "#e15759",
  "#76b7b2",
  "#59a14f",
  "#edc948",
  "#b07aa1",
  "#ff9da7",
  "#9c755f",
  "#bab0ac",
];

export function categoryColor(category: number | string | null): string {
  if (category === null) return "#cccccc";
  const idx =
    typeof category === "number"
      ? category
      : Array.from(String(category)).reduce((a, c) => a + c.charCodeAt(0), 0);
  return PALETTE[((idx % PALETTE.length) + PALETTE.length) % PALETTE.length]!;
}

const PLACEHOLDER_SIZE = 0.12; // fraction of the canvas for unknown geometry

export function renderModel(stateOrLayout: EditorState | LayoutDoc): RenderModel {
  const layout = "layout" in stateOrLayout ? stateOrLayout.layout : stateOrLayout;
  const boxes: RenderBox[] = layout.elements.map((el, i) => {
    const geometry = [el.x, el.y, el.w, el.h];
    const missing = geometry.some((v) => v === null);
    const coarse = (["x", "y", "w", "h"] as const).some((a) => el.status[a] === "coarse");
    const color = categoryColor(el.category);
    const label = el.category === null ? "?" : String(el.category);
    if (missing) {
      const side = PLACEHOLDER_SIZE * Math.min(layout.canvas.width, layout.canvas.height);
      return {
        element: i,
        style: "placeholder" as const,
        x: el.x ?? (i + 0.5) * side,
        y: el.y ?? (i + 0.5) * side,
        w: el.w ?? side,
        h: el.h ?? side,
        color,
        label,
      };
    }
    return {
      element: i,
      style: coarse ? ("dashed" as const) : ("solid" as const),
      x: el.x as number,
      y: el.y as number,
      w: el.w as number,
      h: el.h as number,
      color,
      label,
    };
  });
  const arrows: RenderArrow[] = layout.relations.map((r) => ({
    from: r.i,
    to: r.j,
    label: r.label,
  }));
  const seen = new Map<string, string>();
  for (const el of layout.elements) {
    if (el.category !== null) {
      seen.set(String(el.category), categoryColor(el.category));
    }
  }
  return {
    canvas: layout.canvas,
    boxes,
    arrows,
    legend: Array.from(seen, ([category, color]) => ({ category, color })),
    showAddAffordance: layout.elements.length === 0,
  };
}

/** Paint the model onto a 2D context (browser path; logic stays in renderModel). */
export function drawToCanvas(
  model: RenderModel,
  ctx: CanvasRenderingContext2D,
  scale = 1,
): void {
  ctx.clearRect(0, 0, model.canvas.width * scale, model.canvas.height * scale);
  for (const box of model.boxes) {
    ctx.save();
    ctx.strokeStyle = box.color;
    ctx.fillStyle = box.color + "22";
    ctx.setLineDash(box.style === "dashed" ? [6, 4] : box.style === "placeholder" ? [2, 4] : []);
    ctx.strokeRect(box.x * scale, box.y * scale, box.w * scale, box.h * scale);
    if (box.style !== "placeholder") {
      ctx.fillRect(box.x * scale, box.y * scale, box.w * scale, box.h * scale);
    }
    ctx.fillStyle = "#222";
    ctx.fillText(box.label, (box.x + 4) * scale, (box.y + 12) * scale);
    ctx.restore();
  }
  for (const arrow of model.arrows) {
    const from = model.boxes[arrow.from];
    const to = model.boxes[arrow.to];
    if (!from || !to) continue;
    const x1 = (from.x + from.w / 2) * scale;
    const y1 = (from.y + from.h / 2) * scale;
    const x2 = (to.x + to.w / 2) * scale;
    const y2 = (to.y + to.h / 2) * scale;
    ctx.save();
    ctx.strokeStyle = "#555";
    ctx.beginPath();
    ctx.moveTo(x1, y1);
    ctx.lineTo(x2, y2);
    ctx.stroke();
    ctx.fillStyle = "#555";
    ctx.fillText(arrow.label, (x1 + x2) / 2, (y1 + y2) / 2);
    ctx.restore();
  }
}
