/** Wire types for the annotation service API (schema_version 1). */

export type Verdict = "correct" | "incorrect";

export type TaskStatus = "pending" | "labeled";

export interface CandidatePayload {
  surface: string;
  cs: number;
  p_start: number;
  p_end: number;
  token_start: number;
  token_end: number;
  char_start: number;
  char_end: number;
}

export interface HistoryEntry {
  verdict: Verdict;
  annotator: string | null;
  timestamp: number;
}

export interface TaskPayload {
  schema_version: number;
  task_id: string;
  entity_id: string;
  entity_name: string;
  abstract: string;
  language_mode: string;
  candidate: CandidatePayload;
  status: TaskStatus;
  verdict: Verdict | null;
  annotator: string | null;
  timestamp: number | null;
  history: HistoryEntry[];
}

export interface Progress {
  schema_version: number;
  total: number;
  labeled: number;
  pending: number;
}

export interface TaskListResponse extends Progress {
  tasks: TaskPayload[];
}

export interface ExportResponse {
  schema_version: number;
  kind: "selector" | "judgments";
  rows: number;
  csv: string;
}
