/** Trajectory scrubber: frame bookkeeping for the step-by-step animation. */
import type { TrajectoryStep } from "./types.js";

export interface Scrubber {
  frames: TrajectoryStep[];
  index: number;
}

export function makeScrubber(frames: TrajectoryStep[]): Scrubber {
  return { frames, index: frames.length > 0 ? 0 : -1 };
}

export function frameCount(s: Scrubber): number {
  return s.frames.length;
}

export function goTo(s: Scrubber, index: number): Scrubber {
  if (s.frames.length === 0) return s;
  const clamped = Math.min(Math.max(index, 0), s.frames.length - 1);
  return { ...s, index: clamped };
}

export function next(s: Scrubber): Scrubber {
  return goTo(s, s.index + 1);
}

export function prev(s: Scrubber): Scrubber {
  return goTo(s, s.index - 1);
}

export function current(s: Scrubber): TrajectoryStep | null {
  return s.index >= 0 ? (s.frames[s.index] ?? null) : null;
}
