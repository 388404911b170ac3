"""Prompt templates shared by the gateway, scoring, pipeline, and consult layers.

The mock provider recognizes requests by their system template, so every
template used for a non-scripted mock behavior must live here as a constant.
"""

SCORE_SYSTEM = (
    "You are a careful clinical scoring assistant. You receive background "
    "knowledge, a patient report, and one question about the patient. "
    "Answer with exactly one line of the form '<feature>: <score>' where "
    "<score> is a number between 0 and 1."
)

ADVICE_SYSTEM = (
    "You are a health assistant. Given predicted conditions, background "
    "knowledge, and the patient report, write brief personalized lifestyle "
    "advice. Do not prescribe medication."
)

FOLLOWUP_SYSTEM = (
    "You are a triage assistant gathering information. Ask the patient one "
    "short follow-up question about their complaint."
)

READINESS_SYSTEM = (
    "You are a triage assistant. Given the dialogue so far, reply 'ready' if "
    "there is enough information to assess the patient, otherwise reply "
    "'not ready'."
)

PROPOSAL_SYSTEM = (
    "You design derived features for a tabular health dataset. Reply with "
    "three lines: 'name: <new_feature_name>', 'expr: <arithmetic expression "
    "over existing features>', 'rationale: <one sentence>'. Allowed "
    "operators: + - * / and the functions min, max, abs."
)

SYMPTOM_SYSTEM = (
    "You list typical symptoms of a disease. Follow the pattern of the "
    "examples and reply with a comma-separated list of symptoms only."
)

FOLLOWUP_TEXT = "How long has this lasted? Any other symptoms?"

ADVICE_CONDITIONS_PREFIX = "Conditions: "


def format_condition_names(labels: list[str]) -> str:
    """Render label names for user-facing text: 'Alpha', 'Alpha and Beta', ..."""
    names = [lab.capitalize() for lab in labels]
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def mock_advice_text(labels: list[str]) -> str:
    """Deterministic advice emitted by the mock provider."""
    return (
        f"Possible conditions: {format_condition_names(labels)}. "
        "Prefer plain, easily digested meals, stay hydrated, and rest. "
        "See a clinician if symptoms persist or worsen."
    )
