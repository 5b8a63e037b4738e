// Pure view-state logic, kept free of DOM so it can be unit tested.

import type { Axis, StudyStatus, Verdict } from "./api.js";

export const MODALITIES = ["T1", "T1ce", "T2", "FLAIR"] as const;
export const AXES: Axis[] = ["d", "h", "w"];

export interface CaseView {
  study: StudyStatus;
  axis: Axis;
  index: number;
  modality: string;
  overlay: boolean;
}

export function axisLength(dims: [number, number, number], axis: Axis): number {
  return dims[AXES.indexOf(axis)];
}

export function clampIndex(view: CaseView, index: number): number {
  const n = axisLength(view.study.dims, view.axis);
  return Math.min(Math.max(index, 0), n - 1);
}

export function openCase(study: StudyStatus): CaseView {
  return {
    study,
    axis: "d",
    index: Math.floor(study.dims[0] / 2),
    modality: MODALITIES[0],
    overlay: study.prediction !== null,
  };
}

export function stepSlice(view: CaseView, delta: number): CaseView {
  return { ...view, index: clampIndex(view, view.index + delta) };
}

export function switchAxis(view: CaseView, axis: Axis): CaseView {
  const centered = Math.floor(axisLength(view.study.dims, axis) / 2);
  return { ...view, axis, index: centered };
}

// modality switches keep the slice position
export function switchModality(view: CaseView, modality: string): CaseView {
  return { ...view, modality };
}

export function toggleOverlay(view: CaseView): CaseView {
  return { ...view, overlay: !view.overlay };
}

// Unrated cases first (each group keeps server order); the queue is the
// rater's worklist.
export function orderQueue(studies: StudyStatus[]): StudyStatus[] {
  const unrated = studies.filter((s) => s.verdict === null);
  const rated = studies.filter((s) => s.verdict !== null);
  return [...unrated, ...rated];
}

export function nextUnrated(studies: StudyStatus[], afterStudyId: string | null): StudyStatus | null {
  const queue = studies.filter((s) => s.verdict === null && s.study !== afterStudyId);
  return queue.length ? queue[0] : null;
}

export function keyBinding(key: string): { kind: "step"; delta: number } | { kind: "rate"; verdict: Verdict } | null {
  switch (key) {
    case "ArrowRight":
    case "ArrowUp":
      return { kind: "step", delta: 1 };
    case "ArrowLeft":
    case "ArrowDown":
      return { kind: "step", delta: -1 };
    case "a":
    case "A":
      return { kind: "rate", verdict: "Adequate" };
    case "i":
    case "I":
      return { kind: "rate", verdict: "Inadequate" };
    default:
      return null;
  }
}
