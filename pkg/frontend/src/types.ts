// Shapes of the runtime-api payloads the console consumes. These mirror the
// server's JSON exactly; the contract tests assert every field read here is
// present in recorded payloads.

export interface WidgetPayload {
  id: string;
  kind: string;
  text: string;
  bbox: [number, number, number, number];
  state?: Record<string, unknown>;
}

export interface SnapshotPayload {
  app: string;
  screen_id: string;
  screen_width: number;
  screen_height: number;
  step_index: number;
  widgets: WidgetPayload[];
}

export interface ReflectionPayload {
  level: string;
  ok: boolean;
  diagnosis: string;
  suggestion: string;
  step_span: [number, number];
}

export interface QaPayload {
  question: string;
  answer: string;
  step_index: number;
}

export interface StepRecordPayload {
  index: number;
  snapshot_before: SnapshotPayload;
  snapshot_after: SnapshotPayload;
  response: {
    thought: string;
    action_summary: string;
    action: Record<string, unknown>;
    raw: string;
  } | null;
  action: Record<string, unknown> | null;
  outcome: { status: string; reason: string };
  reflections: ReflectionPayload[];
  qa: QaPayload | null;
  error: string | null;
  parse_failure: string | null;
}

export interface PlanTaskPayload {
  index: number;
  text: string;
  rewritten_text: string | null;
}

export interface SessionPayload {
  session_id: string;
  instruction: string;
  scenario: string;
  task: string;
  status: string;
  plan: PlanTaskPayload[];
  steps_count: number;
  pending_question: string | null;
  outcome: { status: string; reason: string } | null;
  created_at: number;
  updated_at: number;
  injected_knowledge: string[];
}

export interface SessionEvent {
  seq: number;
  ts: number;
  type: string;
  task_index?: number;
  // step events
  record?: StepRecordPayload;
  // status events
  status?: string;
  // ask / answer events
  question?: string;
  answer?: string;
  // plan events
  tasks?: PlanTaskPayload[];
  task?: PlanTaskPayload;
  // reflection events
  verdict?: ReflectionPayload;
  // done events
  outcome?: { status: string; reason: string };
}

export interface StepView {
  taskIndex: number;
  record: StepRecordPayload;
}

// The console's read model. Everything here derives from REST reads plus the
// event stream; the view invents no state of its own.
export interface SessionView {
  record: SessionPayload;
  steps: StepView[];
  lastSeq: number;
  selectedStep: number | null;
}
