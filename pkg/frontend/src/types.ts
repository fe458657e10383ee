// Shapes returned by the annotation service. Field names mirror the
// JSON exactly; optional fields appear only for some statuses.

export type SessionStatus = "awaiting_labels" | "retraining" | "complete";

export interface Progress {
  labeled: number;
  budget: number;
  iteration: number;
  total_iterations: number;
}

export interface BatchQuery {
  status: SessionStatus;
  retry?: boolean;
  indices?: number[];
  texts?: string[] | null;
  is_seed_batch?: boolean;
  num_classes?: number;
  allow_skip?: boolean;
  already_received?: number[];
  progress?: Progress;
  last_step_seconds?: number | null;
  labeled_total?: number;
  final_accuracy?: number | null;
}

export interface SubmitResult {
  status: SessionStatus;
  accepted: number[];
  pending_remaining: number[];
  retrain_seconds: number | null;
  progress: Progress;
}

export interface SessionInfo {
  session_id: string;
  status: SessionStatus;
  pending_count?: number;
  progress?: Progress;
}

export interface ExportPayload {
  partial: boolean;
  record: Record<string, unknown>;
  index_csv: string;
}

// A resolved card: a class id, or the skip sentinel the server accepts.
export type Choice = number | "skip";

export type ChoiceMap = Record<number, Choice>;
