/** Wire types mirroring the generation service's JSON schema. */

export type StatusName = "precise" | "coarse" | "missing";

export const ATTR_NAMES = ["category", "x", "y", "w", "h"] as const;
export type AttrName = (typeof ATTR_NAMES)[number];

export type RelationName =
  | "smaller"
  | "larger"
  | "equal"
  | "above"
  | "bottom"
  | "left"
  | "right"
  | "overlapped";

export const RELATION_NAMES: readonly RelationName[] = [
  "smaller",
  "larger",
  "equal",
  "above",
  "bottom",
  "left",
  "right",
  "overlapped",
];

export interface ElementDoc {
  category: number | string | null;
  x: number | null;
  y: number | null;
  w: number | null;
  h: number | null;
  status: Record<AttrName, StatusName>;
}

export interface RelationDoc {
  i: number;
  j: number;
  label: RelationName;
}

export interface LayoutDoc {
  canvas: { width: number; height: number };
  elements: ElementDoc[];
  relations: RelationDoc[];
}

export interface GenerateOptions {
  task?: string;
  strategy?: "confidence-topk" | "autoregressive" | "non-autoregressive";
  steps?: number;
  seed?: number;
  temperature?: number;
  clamp?: boolean;
  trajectory?: boolean;
}

export interface CommittedAttr {
  element: number;
  attr: AttrName;
}

export interface TrajectoryStep {
  step: number;
  layout: LayoutDoc;
  committed: CommittedAttr[];
}

export interface GenerateResponse {
  layout: LayoutDoc;
  retention?: number;
  timing_ms: number;
  seed_used: number;
  trajectory?: TrajectoryStep[];
}

export interface ServiceError {
  error: { code: string; message: string; path?: string };
}

export const MAX_ELEMENTS = 25;
