// Pure DOM builders for the console views. Everything displayed here comes
// straight from API payload fields; the contract tests pin that property.

import type {
  SessionPayload,
  SessionView,
  SnapshotPayload,
  StepView,
} from "./types";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function statusBadge(status: string): HTMLElement {
  const badge = el("span", `badge badge-${status}`, status.replace("_", " "));
  badge.dataset.status = status;
  return badge;
}

export function renderSessionList(
  sessions: SessionPayload[],
  onOpen: (id: string) => void,
): HTMLElement {
  const root = el("div", "session-list");
  const table = el("table");
  const head = el("tr");
  for (const title of ["session", "status", "instruction", "steps", "updated"]) {
    head.appendChild(el("th", undefined, title));
  }
  table.appendChild(head);
  for (const session of sessions) {
    const row = el("tr", "session-row");
    row.dataset.sessionId = session.session_id;
    const idCell = el("td");
    const link = el("a", "session-link", session.session_id);
    link.href = `#/sessions/${session.session_id}`;
    link.onclick = (e) => {
      e.preventDefault();
      onOpen(session.session_id);
    };
    idCell.appendChild(link);
    row.appendChild(idCell);
    const statusCell = el("td");
    statusCell.appendChild(statusBadge(session.status));
    row.appendChild(statusCell);
    row.appendChild(el("td", "instruction", session.instruction));
    row.appendChild(el("td", undefined, String(session.steps_count)));
    row.appendChild(el("td", undefined, new Date(session.updated_at * 1000).toLocaleTimeString()));
    table.appendChild(row);
  }
  root.appendChild(table);
  if (sessions.length === 0) {
    root.appendChild(el("p", "empty", "no sessions yet"));
  }
  return root;
}

// Widget-tree preview: scaled boxes + labels in place of device pixels.
export function renderSnapshot(snapshot: SnapshotPayload, width = 270): HTMLElement {
  const scale = width / snapshot.screen_width;
  const root = el("div", "screen");
  root.style.width = `${Math.round(snapshot.screen_width * scale)}px`;
  root.style.height = `${Math.round(snapshot.screen_height * scale)}px`;
  root.dataset.app = snapshot.app;
  root.dataset.screenId = snapshot.screen_id;
  const caption = el("div", "screen-caption", `${snapshot.app} / ${snapshot.screen_id}`);
  root.appendChild(caption);
  for (const widget of snapshot.widgets) {
    const [left, top, right, bottom] = widget.bbox;
    const box = el("div", `widget widget-${widget.kind}`, widget.text);
    box.dataset.widgetId = widget.id;
    box.title = `${widget.kind} #${widget.id}`;
    box.style.left = `${Math.round(left * scale)}px`;
    box.style.top = `${Math.round(top * scale)}px`;
    box.style.width = `${Math.round((right - left) * scale)}px`;
    box.style.height = `${Math.round((bottom - top) * scale)}px`;
    root.appendChild(box);
  }
  return root;
}

function renderStepRow(step: StepView, onSelect: (index: number) => void): HTMLElement {
  const record = step.record;
  const row = el("div", "step");
  row.dataset.stepIndex = String(record.index);
  row.dataset.taskIndex = String(step.taskIndex);

  const header = el("div", "step-header");
  header.appendChild(el("span", "step-index", `#${record.index}`));
  const summary = record.response ? record.response.action_summary : "(unparsed response)";
  header.appendChild(el("span", "step-summary", summary));
  header.appendChild(el("span", `step-outcome outcome-${record.outcome.status}`,
    record.outcome.status));
  header.onclick = () => onSelect(record.index);
  row.appendChild(header);

  if (record.action) {
    row.appendChild(el("code", "step-action", JSON.stringify(record.action)));
  }
  if (record.error) {
    row.appendChild(el("div", "step-error", `env error: ${record.error}`));
  }
  if (record.parse_failure) {
    row.appendChild(el("div", "step-error", `parse failure: ${record.parse_failure}`));
  }
  for (const verdict of record.reflections) {
    const cls = verdict.ok ? "reflection reflection-ok" : "reflection reflection-flagged";
    const text = verdict.ok
      ? `${verdict.level} reflector: ok`
      : `${verdict.level} reflector: ${verdict.diagnosis} — ${verdict.suggestion}`;
    row.appendChild(el("div", cls, text));
  }
  if (record.qa) {
    row.appendChild(el("div", "step-qa", `Q: ${record.qa.question} — A: ${record.qa.answer}`));
  }
  return row;
}

export interface DetailHandlers {
  onAnswer: (answer: string) => void;
  onControl: (command: "pause" | "resume" | "cancel") => void;
  onInjectKnowledge: (title: string, body: string) => void;
  onSelectStep: (index: number) => void;
}

export function renderSessionDetail(view: SessionView, handlers: DetailHandlers): HTMLElement {
  const record = view.record;
  const root = el("div", "session-detail");

  const header = el("header", "detail-header");
  header.appendChild(el("h2", undefined, record.session_id));
  header.appendChild(statusBadge(record.status));
  header.appendChild(el("p", "instruction", record.instruction));
  header.appendChild(
    el("p", "meta", `scenario ${record.scenario} / task ${record.task}`),
  );
  if (record.outcome) {
    header.appendChild(
      el("p", `outcome outcome-${record.outcome.status}`,
        `outcome: ${record.outcome.status} (${record.outcome.reason})`),
    );
  }
  root.appendChild(header);

  // The prominent question banner: answering is the one mutation of this view.
  if (record.status === "awaiting_user" && record.pending_question) {
    const banner = el("div", "ask-banner");
    banner.appendChild(el("strong", undefined, "agent asks: "));
    banner.appendChild(el("span", "ask-question", record.pending_question));
    const input = el("input", "ask-input");
    input.placeholder = "your answer";
    const button = el("button", "ask-submit", "answer");
    button.onclick = () => handlers.onAnswer(input.value);
    banner.appendChild(input);
    banner.appendChild(button);
    root.appendChild(banner);
  }

  const controls = el("div", "controls");
  for (const command of ["pause", "resume", "cancel"] as const) {
    const button = el("button", `control control-${command}`, command);
    button.onclick = () => handlers.onControl(command);
    controls.appendChild(button);
  }
  const knowledgeTitle = el("input", "knowledge-title");
  knowledgeTitle.placeholder = "knowledge title";
  const knowledgeBody = el("input", "knowledge-body");
  knowledgeBody.placeholder = "knowledge text";
  const inject = el("button", "knowledge-submit", "inject knowledge");
  inject.onclick = () => handlers.onInjectKnowledge(knowledgeTitle.value, knowledgeBody.value);
  controls.appendChild(knowledgeTitle);
  controls.appendChild(knowledgeBody);
  controls.appendChild(inject);
  root.appendChild(controls);

  if (record.plan.length > 0) {
    const plan = el("ol", "plan");
    for (const task of record.plan) {
      const item = el("li", "plan-task", task.rewritten_text ?? task.text);
      item.dataset.taskIndex = String(task.index);
      plan.appendChild(item);
    }
    root.appendChild(plan);
  }

  const body = el("div", "detail-body");
  const timeline = el("div", "timeline");
  for (const step of view.steps) {
    timeline.appendChild(renderStepRow(step, handlers.onSelectStep));
  }
  if (view.steps.length === 0) {
    timeline.appendChild(el("p", "empty", "no steps yet"));
  }
  body.appendChild(timeline);

  const preview = el("div", "preview");
  const shown =
    view.selectedStep !== null
      ? view.steps.find((s) => s.record.index === view.selectedStep)
      : view.steps[view.steps.length - 1];
  if (shown) {
    preview.appendChild(renderSnapshot(shown.record.snapshot_after));
  }
  body.appendChild(preview);
  root.appendChild(body);
  return root;
}

export function renderError(message: string, onRetry: () => void): HTMLElement {
  const root = el("div", "error-box");
  root.appendChild(el("p", "error-message", message));
  const retry = el("button", "retry", "retry");
  retry.onclick = onRetry;
  root.appendChild(retry);
  return root;
}
