/** Editor state: immutable layout edits, undo/redo, generation bookkeeping.
 *
 * Every edit yields a fresh state whose working layout stays schema-valid;
 * invalid edits are rejected with a message instead of corrupting the draft.
 * The undo stack stores full layout snapshots (layouts are tiny).
 */
import { cloneLayout, validateLayoutDoc } from "./schema.js";
import {
  ATTR_NAMES,
  type AttrName,
  type GenerateOptions,
  type LayoutDoc,
  MAX_ELEMENTS,
  type RelationName,
  type TrajectoryStep,
} from "./types.js";
import { blankElement } from "./schema.js";

export interface EditorState {
  layout: LayoutDoc;
  options: GenerateOptions;
  undoStack: LayoutDoc[];
  redoStack: LayoutDoc[];
  dirty: boolean;
  lastResult: LayoutDoc | null;
  lastTrajectory: TrajectoryStep[] | null;
}

export type Edit =
  | { kind: "add-element"; attrs?: Partial<Record<AttrName, number>> }
  | { kind: "remove-element"; index: number }
  | { kind: "move-box"; index: number; x: number; y: number }
  | { kind: "resize-box"; index: number; w: number; h: number }
  | { kind: "set-category"; index: number; category: number }
  | { kind: "toggle-status"; index: number; attr: AttrName; to: "precise" | "coarse" | "missing" }
  | { kind: "set-relation"; i: number; j: number; label: RelationName }
  | { kind: "remove-relation"; i: number; j: number };

export type EditResult =
  | { ok: true; state: EditorState }
  | { ok: false; reason: string };

export function initialState(layout?: LayoutDoc): EditorState {
  return {
    layout: layout ?? { canvas: { width: 1440, height: 2560 }, elements: [], relations: [] },
    options: { strategy: "confidence-topk", steps: 100, temperature: 1.0, clamp: false },
    undoStack: [],
    redoStack: [],
    dirty: false,
    lastResult: null,
    lastTrajectory: null,
  };
}

function withLayout(state: EditorState, layout: LayoutDoc): EditorState {
  return {
    ...state,
    layout,
    undoStack: [...state.undoStack, state.layout],
    redoStack: [],
    dirty: true,
  };
}

function clampBox(layout: LayoutDoc, index: number): void {
  const el = layout.elements[index];
  if (!el) return;
  const { width, height } = layout.canvas;
  if (el.x !== null && el.w !== null) {
    el.w = Math.min(el.w, width);
    el.x = Math.min(Math.max(el.x, 0), width - el.w);
  }
  if (el.y !== null && el.h !== null) {
    el.h = Math.min(el.h, height);
    el.y = Math.min(Math.max(el.y, 0), height - el.h);
  }
}

export function applyEdit(state: EditorState, edit: Edit): EditResult {
  const layout = cloneLayout(state.layout);
  switch (edit.kind) {
    case "add-element": {
      if (layout.elements.length >= MAX_ELEMENTS) {
        return { ok: false, reason: `a layout holds at most ${MAX_ELEMENTS} elements` };
      }
      layout.elements.push(blankElement(edit.attrs));
      clampBox(layout, layout.elements.length - 1);
      break;
    }
    case "remove-element": {
      if (!layout.elements[edit.index]) {
        return { ok: false, reason: `no element at index ${edit.index}` };
      }
      layout.elements.splice(edit.index, 1);
      layout.relations = layout.relations
        .filter((r) => r.i !== edit.index && r.j !== edit.index)
        .map((r) => ({
          ...r,
          i: r.i > edit.index ? r.i - 1 : r.i,
          j: r.j > edit.index ? r.j - 1 : r.j,
        }));
      break;
    }
    case "move-box": {
      const el = layout.elements[edit.index];
      if (!el) return { ok: false, reason: `no element at index ${edit.index}` };
      el.x = edit.x;
      el.y = edit.y;
      el.status.x = "precise";
      el.status.y = "precise";
      if (el.w === null) {
        el.w = 0;
        el.status.w = "precise";
      }
      if (el.h === null) {
        el.h = 0;
        el.status.h = "precise";
      }
      clampBox(layout, edit.index);
      break;
    }
    case "resize-box": {
      const el = layout.elements[edit.index];
      if (!el) return { ok: false, reason: `no element at index ${edit.index}` };
      if (edit.w < 0 || edit.h < 0) return { ok: false, reason: "size must be >= 0" };
      el.w = edit.w;
      el.h = edit.h;
      el.status.w = "precise";
      el.status.h = "precise";
      clampBox(layout, edit.index);
      break;
    }
    case "set-category": {
      const el = layout.elements[edit.index];
      if (!el) return { ok: false, reason: `no element at index ${edit.index}` };
      el.category = edit.category;
      el.status.category = "precise";
      break;
    }
    case "toggle-status": {
      const el = layout.elements[edit.index];
      if (!el) return { ok: false, reason: `no element at index ${edit.index}` };
      if (edit.to === "missing") {
        el[edit.attr] = null;
        el.status[edit.attr] = "missing";
      } else {
        if (el[edit.attr] === null) {
          // A value is required before it can be marked precise or coarse.
          el[edit.attr] = edit.attr === "category" ? 0 : 0;
        }
        el.status[edit.attr] = edit.to;
      }
      break;
    }
    case "set-relation": {
      if (edit.i === edit.j) return { ok: false, reason: "self-relations are not allowed" };
      if (!layout.elements[edit.i] || !layout.elements[edit.j]) {
        return { ok: false, reason: `relation targets (${edit.i}, ${edit.j}) do not exist` };
      }
      layout.relations = layout.relations.filter((r) => r.i !== edit.i || r.j !== edit.j);
      layout.relations.push({ i: edit.i, j: edit.j, label: edit.label });
      break;
    }
    case "remove-relation": {
      const before = layout.relations.length;
      layout.relations = layout.relations.filter((r) => r.i !== edit.i || r.j !== edit.j);
      if (layout.relations.length === before) {
        return { ok: false, reason: `no relation (${edit.i}, ${edit.j})` };
      }
      break;
    }
  }
  const issues = validateLayoutDoc(layout);
  if (issues.length > 0) {
    const first = issues[0]!;
    return { ok: false, reason: `${first.path}: ${first.message}` };
  }
  return { ok: true, state: withLayout(state, layout) };
}

export function undo(state: EditorState): EditorState {
  const prev = state.undoStack[state.undoStack.length - 1];
  if (!prev) return state;
  return {
    ...state,
    layout: prev,
    undoStack: state.undoStack.slice(0, -1),
    redoStack: [...state.redoStack, state.layout],
  };
}

export function redo(state: EditorState): EditorState {
  const next = state.redoStack[state.redoStack.length - 1];
  if (!next) return state;
  return {
    ...state,
    layout: next,
    undoStack: [...state.undoStack, state.layout],
    redoStack: state.redoStack.slice(0, -1),
  };
}

/** Replace the draft with a generation result; all attributes become precise. */
export function adoptResult(state: EditorState, result: LayoutDoc): EditorState {
  const adopted = cloneLayout(result);
  for (const el of adopted.elements) {
    for (const attr of ATTR_NAMES) {
      if (el[attr] !== null) el.status[attr] = "precise";
    }
  }
  return { ...withLayout(state, adopted), lastResult: state.lastResult };
}
