// HTML-string views; main.ts injects them into the page.

import { ChatViewState, Prediction } from "./state.js";
import { STRINGS } from "./strings.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

// Displayed probabilities must equal the server payload to 3 decimals and
// are never renormalized (one-vs-rest scores do not sum to one).
export function formatProbability(p: number): string {
  return p.toFixed(3);
}

export function renderTranscript(state: ChatViewState): string {
  const rows = state.transcript.map(
    (t) => `<div class="turn turn-${t.role}"><span class="role">${t.role}</span>` +
      `<span class="text">${escapeHtml(t.text)}</span></div>`,
  );
  return `<div class="transcript">${rows.join("")}</div>`;
}

export function renderPredictionCard(prediction: Prediction): string {
  const bars = prediction.labels.map((label) => {
    const p = prediction.probabilities[label];
    const width = Math.round(p * 1000) / 10;
    return (
      `<div class="prob-row" data-label="${escapeHtml(label)}">` +
      `<span class="label">${escapeHtml(label)}</span>` +
      `<span class="bar"><span class="fill" style="width:${width}%"></span></span>` +
      `<span class="value">${formatProbability(p)}</span></div>`
    );
  });
  const advice = prediction.advice
    ? `<div class="advice"><h3>${STRINGS.adviceHeading}</h3><p>${escapeHtml(prediction.advice)}</p></div>`
    : "";
  return (
    `<div class="prediction-card"><h2>${STRINGS.predictionHeading}</h2>` +
    `${bars.join("")}${advice}` +
    `<p class="disclaimer">${STRINGS.disclaimer}</p></div>`
  );
}

export function renderBanner(state: ChatViewState): string {
  return state.banner ? `<div class="banner">${escapeHtml(state.banner)}</div>` : "";
}

export function renderChat(state: ChatViewState): string {
  const card = state.prediction ? renderPredictionCard(state.prediction) : "";
  return renderBanner(state) + renderTranscript(state) + card;
}

export function inputEnabled(state: ChatViewState): boolean {
  return state.phase === "gathering" && !state.busy;
}
