// Browser entry point: wires the chat view and the report form to the DOM.

import { ApiClient } from "./api.js";
import { inputEnabled, renderChat, renderPredictionCard } from "./render.js";
import { ChatViewState, sendMessage, startSession, uploadReport } from "./state.js";
import { STRINGS } from "./strings.js";

declare global {
  interface Window {
    API_BASE?: string;
  }
}

function apiBase(): string {
  const param = new URLSearchParams(window.location.search).get("api");
  return param || window.API_BASE || "http://127.0.0.1:8000";
}

async function boot(): Promise<void> {
  const api = new ApiClient(apiBase());
  const chatEl = document.getElementById("chat")!;
  const inputEl = document.getElementById("message") as HTMLInputElement;
  const sendEl = document.getElementById("send") as HTMLButtonElement;
  const retryEl = document.getElementById("retry") as HTMLButtonElement;
  const reportEl = document.getElementById("report") as HTMLTextAreaElement;
  const uploadEl = document.getElementById("upload") as HTMLButtonElement;
  const reportOutEl = document.getElementById("report-result")!;

  let state: ChatViewState = await startSession(api);

  function paint(): void {
    chatEl.innerHTML = renderChat(state);
    const enabled = inputEnabled(state);
    inputEl.disabled = !enabled;
    sendEl.disabled = !enabled || !inputEl.value.trim();
    retryEl.hidden = state.phase !== "error";
    chatEl.scrollTop = chatEl.scrollHeight;
  }

  async function submit(): Promise<void> {
    const text = inputEl.value;
    if (!text.trim()) return;
    inputEl.value = "";
    state = { ...state, busy: true };
    paint();
    state = await sendMessage(api, { ...state, busy: false }, text);
    paint();
  }

  sendEl.addEventListener("click", submit);
  inputEl.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") void submit();
  });
  inputEl.addEventListener("input", () => {
    sendEl.disabled = !inputEnabled(state) || !inputEl.value.trim();
  });
  retryEl.addEventListener("click", async () => {
    state = await startSession(api);
    paint();
  });
  uploadEl.addEventListener("click", async () => {
    const view = await uploadReport(api, reportEl.value);
    reportOutEl.innerHTML = view.error
      ? `<div class="inline-error">${view.error}</div>`
      : view.prediction
        ? renderPredictionCard(view.prediction)
        : "";
  });

  document.title = STRINGS.appTitle;
  paint();
}

void boot();
