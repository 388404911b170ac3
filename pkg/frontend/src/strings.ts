// All user-facing strings, externalized for localization. English only for now.

export const STRINGS = {
  appTitle: "Health consultation",
  inputPlaceholder: "Describe your symptoms…",
  send: "Send",
  retry: "Retry",
  startFailed: "Could not reach the service.",
  sessionConflict: "This session is finished; input is disabled.",
  requestFailed: "The request failed; your conversation is preserved.",
  emptyNarrative: "Please enter some text first.",
  predictionHeading: "Assessment",
  adviceHeading: "Advice",
  disclaimer: "Automated guidance, not a medical diagnosis; consult a clinician.",
  uploadHeading: "Submit a written report",
  uploadButton: "Get assessment",
};
