// Read-model fidelity: every field the console displays must exist in the
// recorded API payloads. The fixtures were captured from a live runtime; if
// the server ever drops or renames a field the console reads, this fails.

import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { join } from "node:path";

function fixture<T = any>(name: string): T {
  return JSON.parse(readFileSync(join(process.cwd(), "tests", "fixtures", `${name}.json`), "utf-8"));
}

// Resolve a dot path; "steps[]" fans out over every array element.
function resolveAll(obj: any, path: string): any[] {
  let current: any[] = [obj];
  for (const part of path.split(".")) {
    const fanOut = part.endsWith("[]");
    const key = fanOut ? part.slice(0, -2) : part;
    const next: any[] = [];
    for (const node of current) {
      expect(node, `missing container for ${path}`).toBeTruthy();
      expect(Object.prototype.hasOwnProperty.call(node, key),
        `payload lacks field '${key}' (path ${path})`).toBe(true);
      const value = node[key];
      if (fanOut) {
        expect(Array.isArray(value), `'${key}' should be an array (path ${path})`).toBe(true);
        next.push(...value);
      } else {
        next.push(value);
      }
    }
    current = next;
  }
  return current;
}

const SESSION_FIELDS = [
  "session_id",
  "instruction",
  "scenario",
  "task",
  "status",
  "steps_count",
  "pending_question",
  "outcome",
  "updated_at",
  "plan[].index",
  "plan[].text",
  "plan[].rewritten_text",
  "injected_knowledge",
];

const STEP_FIELDS = [
  "index",
  "response",
  "action",
  "outcome.status",
  "outcome.reason",
  "error",
  "parse_failure",
  "qa",
  "reflections[].level",
  "reflections[].ok",
  "snapshot_after.app",
  "snapshot_after.screen_id",
  "snapshot_after.screen_width",
  "snapshot_after.screen_height",
  "snapshot_after.widgets[].id",
  "snapshot_after.widgets[].kind",
  "snapshot_after.widgets[].text",
  "snapshot_after.widgets[].bbox",
];

describe("session payloads carry every displayed field", () => {
  for (const name of ["session_awaiting", "session_done", "session_reflecting_done"]) {
    it(name, () => {
      const session = fixture(name);
      for (const path of SESSION_FIELDS) resolveAll(session, path);
    });
  }

  it("sessions_list rows", () => {
    const { sessions } = fixture("sessions_list");
    expect(sessions.length).toBeGreaterThan(0);
    for (const session of sessions) {
      for (const path of SESSION_FIELDS) resolveAll(session, path);
    }
  });
});

describe("event payloads carry every displayed field", () => {
  for (const name of ["events_done", "events_reflecting", "events_awaiting"]) {
    it(name, () => {
      const { events } = fixture(name);
      expect(events.length).toBeGreaterThan(0);
      for (const event of events) {
        resolveAll(event, "seq");
        resolveAll(event, "type");
        if (event.type === "step") {
          for (const path of STEP_FIELDS) resolveAll(event.record, path);
          // parsed responses expose the summary the timeline shows
          if (event.record.response !== null) {
            resolveAll(event.record.response, "action_summary");
            resolveAll(event.record.response, "action");
          }
        }
        if (event.type === "status") resolveAll(event, "status");
        if (event.type === "ask") resolveAll(event, "question");
        if (event.type === "answer") resolveAll(event, "answer");
        if (event.type === "done") resolveAll(event, "outcome");
        if (event.type === "reflection") {
          resolveAll(event.verdict, "level");
          resolveAll(event.verdict, "ok");
          resolveAll(event.verdict, "diagnosis");
          resolveAll(event.verdict, "suggestion");
        }
      }
    });
  }
});

describe("recorded flows contain the moments the console renders", () => {
  it("awaiting fixture is awaiting with a question", () => {
    const session = fixture("session_awaiting");
    expect(session.status).toBe("awaiting_user");
    expect(session.pending_question).toBeTruthy();
  });

  it("done fixture holds a full ASK round trip", () => {
    const { events } = fixture("events_done");
    const types = events.map((e: any) => e.type);
    expect(types).toContain("ask");
    expect(types).toContain("answer");
    expect(types).toContain("done");
    const seqs = events.map((e: any) => e.seq);
    expect(seqs).toEqual([...seqs].sort((a: number, b: number) => a - b));
  });

  it("reflecting fixture saw the reflecting status", () => {
    const { events } = fixture("events_reflecting");
    const statuses = events.filter((e: any) => e.type === "status").map((e: any) => e.status);
    expect(statuses).toContain("reflecting");
  });
});
