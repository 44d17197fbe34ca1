// Console wiring: hash routing, list polling, one event-stream subscription
// per open detail view, and the answer/control/knowledge actions.

import { api, ApiError, StreamHandle, subscribe } from "./api";
import { applyEvent, emptyView, isTerminal } from "./state";
import { renderError, renderSessionDetail, renderSessionList } from "./render";
import type { SessionView } from "./types";

const appRoot = document.getElementById("app") as HTMLElement;

let stream: StreamHandle | null = null;
let listTimer: ReturnType<typeof setInterval> | null = null;
let view: SessionView | null = null;

function teardown() {
  stream?.close();
  stream = null;
  if (listTimer !== null) clearInterval(listTimer);
  listTimer = null;
  view = null;
}

function openList() {
  teardown();
  const load = async () => {
    try {
      const { sessions } = await api.listSessions();
      appRoot.replaceChildren(renderSessionList(sessions, (id) => {
        location.hash = `#/sessions/${id}`;
      }));
    } catch (err) {
      appRoot.replaceChildren(renderError(describe(err), load));
    }
  };
  void load();
  listTimer = setInterval(load, 2000);
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return err.status === 0 ? `network failure — ${err.message}` : err.message;
  }
  return String(err);
}

function redraw(sessionId: string) {
  if (!view) return;
  appRoot.replaceChildren(
    renderSessionDetail(view, {
      onAnswer: (answer) => void postAnswer(sessionId, answer),
      onControl: (command) => void control(sessionId, command),
      onInjectKnowledge: (title, body) => void injectKnowledge(sessionId, title, body),
      onSelectStep: (index) => {
        if (view) {
          view = { ...view, selectedStep: index };
          redraw(sessionId);
        }
      },
    }),
  );
}

async function postAnswer(sessionId: string, answer: string) {
  try {
    const record = await api.postAnswer(sessionId, answer);
    if (view) {
      view = { ...view, record };
      redraw(sessionId);
    }
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      // a stale tab answered an already-answered question: no-op
      notify("already answered — view refreshed");
      void openDetail(sessionId);
      return;
    }
    appRoot.prepend(renderError(describe(err), () => void postAnswer(sessionId, answer)));
  }
}

async function control(sessionId: string, command: "pause" | "resume" | "cancel") {
  try {
    const record = await api.control(sessionId, command);
    if (view) {
      view = { ...view, record };
      redraw(sessionId);
    }
  } catch (err) {
    notify(describe(err));
  }
}

async function injectKnowledge(sessionId: string, title: string, body: string) {
  if (!body) return;
  const id = `console-${Date.now()}`;
  try {
    const record = await api.injectKnowledge(sessionId, [{ id, title: title || id, body }]);
    if (view) {
      view = { ...view, record };
      redraw(sessionId);
    }
  } catch (err) {
    notify(describe(err));
  }
}

function notify(message: string) {
  const note = document.createElement("div");
  note.className = "notice";
  note.textContent = message;
  appRoot.prepend(note);
  setTimeout(() => note.remove(), 4000);
}

async function openDetail(sessionId: string) {
  teardown();
  try {
    const record = await api.getSession(sessionId);
    const { events } = await api.getEvents(sessionId, 0);
    view = emptyView(record);
    for (const event of events) view = applyEvent(view, event);
    view = { ...view, record };  // REST record is the freshest status source
    redraw(sessionId);
    if (!isTerminal(record.status)) {
      stream = subscribe(
        sessionId,
        view.lastSeq,
        (event) => {
          if (!view) return;
          view = applyEvent(view, event);
          redraw(sessionId);
        },
        () => notify("event stream dropped — reconnecting"),
      );
    }
  } catch (err) {
    appRoot.replaceChildren(renderError(describe(err), () => void openDetail(sessionId)));
  }
}

function route() {
  const match = location.hash.match(/^#\/sessions\/([^/]+)$/);
  if (match) {
    void openDetail(match[1]);
  } else {
    openList();
  }
}

window.addEventListener("hashchange", route);
route();
