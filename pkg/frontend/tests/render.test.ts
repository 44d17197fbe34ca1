// Rendering against recorded payloads: the detail view shows every step,
// flags not-ok reflections, shows the success badge, and lays widget boxes
// out from their bboxes.

import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { join } from "node:path";

import { applyEvents, emptyView } from "../src/state";
import { renderError, renderSessionDetail, renderSessionList, renderSnapshot } from "../src/render";
import type { DetailHandlers } from "../src/render";
import type { SessionEvent, SessionPayload } from "../src/types";

function fixture<T = any>(name: string): T {
  return JSON.parse(readFileSync(join(process.cwd(), "tests", "fixtures", `${name}.json`), "utf-8"));
}

const noop: DetailHandlers = {
  onAnswer: () => undefined,
  onControl: () => undefined,
  onInjectKnowledge: () => undefined,
  onSelectStep: () => undefined,
};

function doneView() {
  const record = fixture<SessionPayload>("session_done");
  const { events } = fixture<{ events: SessionEvent[] }>("events_done");
  let view = applyEvents(emptyView({ ...record, status: "planning" }), events);
  return { ...view, record };
}

describe("session detail view", () => {
  it("renders the complete step timeline with a success badge", () => {
    const view = doneView();
    const root = renderSessionDetail(view, noop);
    const steps = root.querySelectorAll(".step");
    expect(steps.length).toBe(view.record.steps_count);
    const indices = [...steps].map((s) => (s as HTMLElement).dataset.stepIndex);
    expect(indices).toEqual(view.steps.map((s) => String(s.record.index)));
    const badge = root.querySelector(".badge") as HTMLElement;
    expect(badge.dataset.status).toBe("done_success");
    expect(root.textContent).toContain("outcome: success");
    // every action summary the payload carries is visible
    for (const step of view.steps) {
      if (step.record.response) {
        expect(root.textContent).toContain(step.record.response.action_summary);
      }
    }
    // the answered question appears on its step
    expect(root.textContent).toContain("A: Spicy Beef");
  });

  it("flags steps with not-ok reflections", () => {
    const record = fixture<SessionPayload>("session_reflecting_done");
    const { events } = fixture<{ events: SessionEvent[] }>("events_reflecting");
    let view = applyEvents(emptyView({ ...record, status: "planning" }), events);
    view = { ...view, record };
    const root = renderSessionDetail(view, noop);
    const flagged = root.querySelectorAll(".reflection-flagged");
    expect(flagged.length).toBeGreaterThan(0);
    expect(root.textContent).toContain("bluetooth is still off");
  });

  it("shows a prominent question banner while awaiting the user", () => {
    const record = fixture<SessionPayload>("session_awaiting");
    const { events } = fixture<{ events: SessionEvent[] }>("events_awaiting");
    let view = applyEvents(emptyView({ ...record, status: "planning" }), events);
    view = { ...view, record };
    const root = renderSessionDetail(view, noop);
    const banner = root.querySelector(".ask-banner");
    expect(banner).toBeTruthy();
    expect(banner!.textContent).toContain(record.pending_question!);
    expect(root.querySelector(".ask-input")).toBeTruthy();
    expect(root.querySelector(".ask-submit")).toBeTruthy();
  });

  it("renders widget boxes scaled from their bboxes", () => {
    const { events } = fixture<{ events: SessionEvent[] }>("events_done");
    const step = events.find((e) => e.type === "step")!.record!;
    const snapshot = step.snapshot_after;
    const root = renderSnapshot(snapshot, 270);
    const boxes = root.querySelectorAll(".widget");
    expect(boxes.length).toBe(snapshot.widgets.length);
    const scale = 270 / snapshot.screen_width;
    const first = boxes[0] as HTMLElement;
    const [left, top, right, bottom] = snapshot.widgets[0].bbox;
    expect(first.style.left).toBe(`${Math.round(left * scale)}px`);
    expect(first.style.width).toBe(`${Math.round((right - left) * scale)}px`);
    expect(first.style.height).toBe(`${Math.round((bottom - top) * scale)}px`);
    expect(first.textContent).toBe(snapshot.widgets[0].text);
  });
});

describe("session list view", () => {
  it("lists every session with its status badge", () => {
    const { sessions } = fixture<{ sessions: SessionPayload[] }>("sessions_list");
    const root = renderSessionList(sessions, () => undefined);
    const rows = root.querySelectorAll(".session-row");
    expect(rows.length).toBe(sessions.length);
    for (const session of sessions) {
      const row = root.querySelector(`[data-session-id="${session.session_id}"]`)!;
      expect(row.textContent).toContain(session.instruction);
      const badge = row.querySelector(".badge") as HTMLElement;
      expect(badge.dataset.status).toBe(session.status);
    }
  });
});

describe("failure affordances", () => {
  it("network errors render a retry button that re-invokes the loader", () => {
    let retried = 0;
    const root = renderError("network failure — connection refused", () => {
      retried += 1;
    });
    expect(root.textContent).toContain("network failure");
    const button = root.querySelector(".retry") as HTMLButtonElement;
    expect(button).toBeTruthy();
    button.click();
    expect(retried).toBe(1);
  });
});
