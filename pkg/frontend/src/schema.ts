/** Client-side validation of layout documents, with JSON-path error locators. */
import {
  ATTR_NAMES,
  type AttrName,
  type LayoutDoc,
  MAX_ELEMENTS,
  RELATION_NAMES,
  type StatusName,
} from "./types.js";

export interface SchemaIssue {
  path: string;
  message: string;
}

const STATUSES: readonly StatusName[] = ["precise", "coarse", "missing"];

function isFiniteNumber(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

/** Every violation in the document; an empty list means schema-valid. */
export function validateLayoutDoc(doc: LayoutDoc, nMax = MAX_ELEMENTS): SchemaIssue[] {
  const issues: SchemaIssue[] = [];
  const push = (path: string, message: string) => issues.push({ path, message });

  if (!Number.isInteger(doc.canvas?.width) || doc.canvas.width < 1) {
    push("$.canvas.width", "must be a positive integer");
  }
  if (!Number.isInteger(doc.canvas?.height) || doc.canvas.height < 1) {
    push("$.canvas.height", "must be a positive integer");
  }
  if (doc.elements.length > nMax) {
    push("$.elements", `${doc.elements.length} elements exceed the maximum of ${nMax}`);
  }
  doc.elements.forEach((el, i) => {
    for (const attr of ATTR_NAMES) {
      const value = el[attr];
      const status = el.status?.[attr];
      const path = `$.elements[${i}].${attr}`;
      if (status === undefined || !STATUSES.includes(status)) {
        push(`$.elements[${i}].status.${attr}`, `unknown status ${String(status)}`);
        continue;
      }
      if ((value === null) !== (status === "missing")) {
        push(path, `null value and status "${status}" are inconsistent`);
      }
      if (value !== null && attr !== "category" && !isFiniteNumber(value)) {
        push(path, "must be a finite number or null");
      }
      if (
        value !== null &&
        attr === "category" &&
        typeof value !== "string" &&
        !Number.isInteger(value)
      ) {
        push(path, "must be a string or integer");
      }
    }
    if (isFiniteNumber(el.w) && el.w < 0) push(`$.elements[${i}].w`, "must be >= 0");
    if (isFiniteNumber(el.h) && el.h < 0) push(`$.elements[${i}].h`, "must be >= 0");
  });
  doc.relations.forEach((rel, r) => {
    const path = `$.relations[${r}]`;
    if (!Number.isInteger(rel.i) || !Number.isInteger(rel.j)) {
      push(path, "i and j must be integers");
      return;
    }
    if (rel.i === rel.j) push(path, "self-relations are not allowed");
    if (rel.i < 0 || rel.i >= doc.elements.length || rel.j < 0 || rel.j >= doc.elements.length) {
      push(path, `indices (${rel.i}, ${rel.j}) out of range`);
    }
    if (!RELATION_NAMES.includes(rel.label)) {
      push(`${path}.label`, `unknown label ${String(rel.label)}`);
    }
  });
  return issues;
}

export function cloneLayout(doc: LayoutDoc): LayoutDoc {
  return structuredClone(doc);
}

export function emptyLayout(width = 1440, height = 2560): LayoutDoc {
  return { canvas: { width, height }, elements: [], relations: [] };
}

export function blankElement(attrs?: Partial<Record<AttrName, number | null>>): LayoutDoc["elements"][number] {
  const el: LayoutDoc["elements"][number] = {
    category: null,
    x: null,
    y: null,
    w: null,
    h: null,
    status: {
      category: "missing",
      x: "missing",
      y: "missing",
      w: "missing",
      h: "missing",
    },
  };
  if (attrs) {
    for (const attr of ATTR_NAMES) {
      const v = attrs[attr];
      if (v !== undefined && v !== null) {
        el[attr] = v;
        el.status[attr] = "precise";
      }
    }
  }
  return el;
}
