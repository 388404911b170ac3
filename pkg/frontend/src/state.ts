// Chat view state and the transitions behind the three UI actions.

import { ApiClient, ApiError, Diagnosis, Turn } from "./api.js";
import { STRINGS } from "./strings.js";

export type Phase = "gathering" | "predicted" | "closed" | "error";

export interface Prediction {
  labels: string[]; // sorted by probability descending
  probabilities: Record<string, number>;
  advice: string | null;
}

export interface ChatViewState {
  sessionId: string | null;
  transcript: Turn[];
  phase: Phase;
  prediction: Prediction | null;
  banner: string | null; // transient error/conflict message, null when healthy
  busy: boolean; // one in-flight request per view
}

export function emptyState(): ChatViewState {
  return { sessionId: null, transcript: [], phase: "error", prediction: null, banner: null, busy: false };
}

export function toPrediction(result: Diagnosis): Prediction {
  const labels = Object.keys(result.probabilities).sort((a, b) => {
    const diff = result.probabilities[b] - result.probabilities[a];
    return diff !== 0 ? diff : a.localeCompare(b);
  });
  return { labels, probabilities: result.probabilities, advice: result.advice };
}

export async function startSession(api: ApiClient): Promise<ChatViewState> {
  try {
    const created = await api.createSession();
    return {
      sessionId: created.session_id,
      transcript: [],
      phase: "gathering",
      prediction: null,
      banner: null,
      busy: false,
    };
  } catch {
    return { ...emptyState(), banner: STRINGS.startFailed };
  }
}

export async function sendMessage(
  api: ApiClient,
  state: ChatViewState,
  text: string,
): Promise<ChatViewState> {
  if (state.phase !== "gathering" || !state.sessionId || !text.trim() || state.busy) {
    return state;
  }
  const pending: ChatViewState = { ...state, busy: true, banner: null };
  try {
    const reply = await api.sendMessage(state.sessionId, text);
    const transcript: Turn[] = [
      ...state.transcript,
      { role: "user", text: text.trim() },
      { role: "assistant", text: reply.text },
    ];
    if (reply.kind === "prediction") {
      const final = await api.finalize(state.sessionId);
      return {
        ...pending,
        transcript,
        phase: "closed",
        prediction: toPrediction(final),
        busy: false,
      };
    }
    return { ...pending, transcript, phase: "gathering", busy: false };
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      return { ...pending, phase: "closed", banner: STRINGS.sessionConflict, busy: false };
    }
    return { ...pending, banner: STRINGS.requestFailed, busy: false };
  }
}

export interface ReportViewState {
  prediction: Prediction | null;
  error: string | null;
  busy: boolean;
}

export async function uploadReport(api: ApiClient, narrative: string): Promise<ReportViewState> {
  if (!narrative.trim()) {
    return { prediction: null, error: STRINGS.emptyNarrative, busy: false };
  }
  try {
    const result = await api.predict(narrative);
    return { prediction: toPrediction(result), error: null, busy: false };
  } catch (err) {
    const message = err instanceof ApiError && err.status === 400
      ? STRINGS.emptyNarrative
      : STRINGS.requestFailed;
    return { prediction: null, error: message, busy: false };
  }
}
