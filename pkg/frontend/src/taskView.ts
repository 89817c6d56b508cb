/** Projection of a wire task into what the review screen renders. */

import type { TaskPayload } from "./types.js";

export interface HighlightSegments {
  before: string;
  mark: string;
  after: string;
}

export interface TaskView {
  taskId: string;
  entityName: string;
  abstract: string;
  highlightStart: number;
  highlightEnd: number;
  surface: string;
  /** candidate confidence, formatted to 2 decimals for display */
  confidenceLabel: string;
  segments: HighlightSegments;
}

export function toTaskView(payload: TaskPayload): TaskView {
  const { abstract, candidate } = payload;
  const { char_start: start, char_end: end } = candidate;
  if (!(0 <= start && start <= end && end <= abstract.length)) {
    throw new Error(
      `task ${payload.task_id}: highlight [${start}, ${end}) outside abstract bounds (length ${abstract.length})`,
    );
  }
  const mark = abstract.slice(start, end);
  if (mark !== candidate.surface) {
    throw new Error(
      `task ${payload.task_id}: highlighted text ${JSON.stringify(mark)} does not equal the candidate surface ${JSON.stringify(candidate.surface)}`,
    );
  }
  return {
    taskId: payload.task_id,
    entityName: payload.entity_name,
    abstract,
    highlightStart: start,
    highlightEnd: end,
    surface: candidate.surface,
    confidenceLabel: candidate.cs.toFixed(2),
    segments: {
      before: abstract.slice(0, start),
      mark,
      after: abstract.slice(end),
    },
  };
}
