// Read-model reducer: fold runtime-api events into a SessionView. The view
// derives entirely from the REST snapshot plus the event stream.

import type { SessionEvent, SessionPayload, SessionView } from "./types";

export function emptyView(record: SessionPayload): SessionView {
  return { record, steps: [], lastSeq: 0, selectedStep: null };
}

export function applyEvent(view: SessionView, event: SessionEvent): SessionView {
  const next: SessionView = {
    ...view,
    record: { ...view.record },
    steps: [...view.steps],
    lastSeq: Math.max(view.lastSeq, event.seq),
  };
  switch (event.type) {
    case "status":
      next.record.status = event.status ?? next.record.status;
      if (event.status === "running") next.record.pending_question = null;
      break;
    case "plan":
      next.record.plan = event.tasks ?? [];
      break;
    case "plan_update":
      if (event.task) {
        next.record.plan = next.record.plan.map((t) =>
          t.index === event.task!.index ? event.task! : t,
        );
      }
      break;
    case "step":
      if (event.record) {
        next.steps.push({ taskIndex: event.task_index ?? 0, record: event.record });
        next.record.steps_count = next.steps.length;
      }
      break;
    case "reflection":
      if (event.verdict && next.steps.length > 0) {
        const last = next.steps[next.steps.length - 1];
        const record = { ...last.record, reflections: [...last.record.reflections] };
        const seen = new Set(record.reflections.map((v) => JSON.stringify(v)));
        if (!seen.has(JSON.stringify(event.verdict))) {
          record.reflections.push(event.verdict);
        }
        next.steps[next.steps.length - 1] = { ...last, record };
      }
      break;
    case "ask":
      next.record.pending_question = event.question ?? null;
      break;
    case "answer":
      next.record.pending_question = null;
      if (next.steps.length > 0 && event.question !== undefined) {
        const last = next.steps[next.steps.length - 1];
        next.steps[next.steps.length - 1] = {
          ...last,
          record: {
            ...last.record,
            qa: {
              question: event.question,
              answer: event.answer ?? "",
              step_index: last.record.index,
            },
          },
        };
      }
      break;
    case "done":
      if (event.outcome) next.record.outcome = event.outcome;
      break;
    default:
      break; // task_start, memory, knowledge: informational
  }
  return next;
}

export function applyEvents(view: SessionView, events: SessionEvent[]): SessionView {
  return events.reduce(applyEvent, view);
}

export function isTerminal(status: string): boolean {
  return status === "done_success" || status === "done_failure";
}
