// Thin client over the documented runtime-api endpoints. Every mutation the
// console performs goes through one of these calls; there are no other paths
// to the backend.

import type { SessionEvent, SessionPayload } from "./types";

export const ENDPOINTS = {
  listSessions: "/api/sessions",
  getSession: (id: string) => `/api/sessions/${id}`,
  events: (id: string, since: number) => `/api/sessions/${id}/events?since=${since}`,
  stream: (id: string, since: number) => `/api/sessions/${id}/stream?since=${since}`,
  answer: (id: string) => `/api/sessions/${id}/answer`,
  control: (id: string) => `/api/sessions/${id}/control`,
  knowledge: (id: string) => `/api/sessions/${id}/knowledge`,
  scenarios: "/api/scenarios",
  createSession: "/api/sessions",
} as const;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  let response: Response;
  try {
    response = await fetch(path, init);
  } catch (err) {
    throw new ApiError(0, `network failure: ${String(err)}`);
  }
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    throw new ApiError(response.status, (body as { error?: string }).error ?? response.statusText);
  }
  return body as T;
}

function post<T>(path: string, payload: unknown): Promise<T> {
  return request<T>(path, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(payload),
  });
}

export const api = {
  listSessions: () =>
    request<{ sessions: SessionPayload[] }>(ENDPOINTS.listSessions),
  getSession: (id: string) => request<SessionPayload>(ENDPOINTS.getSession(id)),
  getEvents: (id: string, since: number) =>
    request<{ events: SessionEvent[] }>(ENDPOINTS.events(id, since)),
  postAnswer: (id: string, answer: string) =>
    post<SessionPayload>(ENDPOINTS.answer(id), { answer }),
  control: (id: string, command: "pause" | "resume" | "cancel") =>
    post<SessionPayload>(ENDPOINTS.control(id), { command }),
  injectKnowledge: (id: string, docs: { id: string; title: string; body: string }[]) =>
    post<SessionPayload>(ENDPOINTS.knowledge(id), { docs }),
  scenarios: () =>
    request<{ scenarios: { name: string; tasks: { id: string; instruction: string }[] }[] }>(
      ENDPOINTS.scenarios,
    ),
  createSession: (body: { instruction?: string; scenario: string; task: string; config?: object }) =>
    post<SessionPayload>(ENDPOINTS.createSession, body),
};

export type EventHandler = (event: SessionEvent) => void;

export interface StreamHandle {
  close(): void;
}

type EventSourceFactory = (url: string) => EventSource;

// One live subscription per open session view; a dropped connection reopens
// from the last delivered sequence number so no event is missed or repeated.
export function subscribe(
  sessionId: string,
  fromSeq: number,
  onEvent: EventHandler,
  onError?: (err: unknown) => void,
  factory: EventSourceFactory = (url) => new EventSource(url),
): StreamHandle {
  let lastSeq = fromSeq;
  let source: EventSource | null = null;
  let closed = false;
  let retryTimer: ReturnType<typeof setTimeout> | null = null;

  const open = () => {
    if (closed) return;
    source = factory(ENDPOINTS.stream(sessionId, lastSeq));
    source.onmessage = (msg) => {
      const event = JSON.parse(msg.data) as SessionEvent;
      if (event.seq <= lastSeq) return;
      lastSeq = event.seq;
      onEvent(event);
    };
    source.onerror = (err) => {
      source?.close();
      if (closed) return;
      onError?.(err);
      retryTimer = setTimeout(open, 1000);
    };
  };
  open();

  return {
    close() {
      closed = true;
      if (retryTimer !== null) clearTimeout(retryTimer);
      source?.close();
    },
  };
}
