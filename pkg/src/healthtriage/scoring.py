"""Question-bank scoring: turn a report into a numeric feature vector.

Every question is asked against the report plus retrieved knowledge; the
answer is parsed into a confidence score in [0, 1]. A question that cannot
be scored yields MISSING (None) rather than an error.
"""
from __future__ import annotations

import csv
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import prompts
from .errors import (
    BadFeatureName,
    ConfigError,
    DuplicateFeatureName,
    NoScoreFound,
    ParseError,
    TransportError,
)
from .index import VectorIndex, retrieve
from .providers import Provider, PromptRequest, text_digest

log = logging.getLogger(__name__)

FEATURE_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

# Query text sent to retrieval: the question plus the head of the report.
REPORT_HEAD_CHARS = 200


@dataclass(frozen=True)
class Question:
    question_id: str
    feature_name: str
    text: str
    category: str = ""


@dataclass
class QuestionBank:
    questions: list[Question]
    bank_digest: str = ""

    def __post_init__(self):
        if not self.bank_digest:
            payload = json.dumps(
                [[q.question_id, q.feature_name, q.text, q.category] for q in self.questions]
            )
            self.bank_digest = text_digest(payload)

    def feature_names(self) -> list[str]:
        return [q.feature_name for q in self.questions]


@dataclass
class FeatureVector:
    report_id: str
    values: dict[str, float | None] = field(default_factory=dict)


def validate_bank(questions: list[Question]) -> None:
    if not questions:
        raise ParseError("question bank must be non-empty")
    seen: set[str] = set()
    for q in questions:
        if not FEATURE_NAME_RE.match(q.feature_name):
            raise BadFeatureName(f"bad feature name {q.feature_name!r}")
        if q.feature_name in seen:
            raise DuplicateFeatureName(f"duplicate feature name {q.feature_name!r}")
        seen.add(q.feature_name)


def load_question_bank(path) -> QuestionBank:
    """Load and validate a bank file: JSON array of question records."""
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read question bank {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise ParseError("question bank must be a JSON array")
    try:
        questions = [
            Question(
                question_id=rec["question_id"],
                feature_name=rec["feature_name"],
                text=rec["text"],
                category=rec.get("category", ""),
            )
            for rec in raw
        ]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed question record: {exc}") from exc
    validate_bank(questions)
    return QuestionBank(questions=questions)


_SCORE_RE = re.compile(
    r"([A-Za-z_][A-Za-z0-9_]*(?:[ ]+[A-Za-z0-9_]+)*)[ \t]*:[ \t]*([+-]?\d+(?:\.\d+)?)"
)


def parse_score_line(text: str) -> tuple[str, float]:
    """Extract the last 'name: number' pattern; clamp the value into [0, 1].

    The name is normalized to lowercase with space runs as underscores.
    """
    matches = list(_SCORE_RE.finditer(text))
    if not matches:
        raise NoScoreFound(f"no score pattern in {text!r}")
    name_raw, number = matches[-1].group(1), matches[-1].group(2)
    name = "_".join(name_raw.lower().split())
    value = min(1.0, max(0.0, float(number)))
    return name, value


def build_score_request(
    question: Question, report_text: str, context_texts: list[str]
) -> PromptRequest:
    user = (
        f"Report:\n{report_text}\n\n"
        f"Question ({question.feature_name}): {question.text}\n"
        f"Answer with exactly '{question.feature_name}: <number in [0,1]>'."
    )
    return PromptRequest(
        system_text=prompts.SCORE_SYSTEM,
        user_text=user,
        context_blocks=tuple(context_texts),
    )


def retrieval_query(question: Question, report_text: str) -> str:
    return question.text + " " + report_text[:REPORT_HEAD_CHARS]


def score_question(
    question: Question,
    report_text: str,
    index: VectorIndex | None,
    provider: Provider,
    k: int = 3,
) -> float | None:
    """Score one question; failures map to MISSING, never an exception."""
    context_texts: list[str] = []
    if index is not None and k > 0:
        hits = retrieve(index, retrieval_query(question, report_text), k, provider)
        context_texts = [hit.chunk.text for hit in hits]
    request = build_score_request(question, report_text, context_texts)
    try:
        completion = provider.complete(request)
    except TransportError as exc:
        log.warning("question %s: transport failure, recording MISSING (%s)", question.question_id, exc)
        return None
    except ConfigError:
        raise
    try:
        name, value = parse_score_line(completion.text)
    except NoScoreFound:
        log.warning("question %s: no score in %r, recording MISSING", question.question_id, completion.text)
        return None
    if name != question.feature_name.lower():
        log.info("question %s: answered with name %r, expected %r", question.question_id, name, question.feature_name)
    return value


def build_feature_vector(
    report_id: str,
    report_text: str,
    bank: QuestionBank,
    index: VectorIndex | None,
    provider: Provider,
    engineered=None,
    k: int = 3,
    max_workers: int = 1,
) -> FeatureVector:
    """Score every bank question (bank order), then append engineered features.

    `engineered` is a feature-set revision exposing apply_values(); questions
    may be scored concurrently, but the vector is assembled in bank order.
    """
    questions = bank.questions
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            scores = list(
                pool.map(lambda q: score_question(q, report_text, index, provider, k), questions)
            )
    else:
        scores = [score_question(q, report_text, index, provider, k) for q in questions]
    values: dict[str, float | None] = {
        q.feature_name: s for q, s in zip(questions, scores)
    }
    n_missing = sum(1 for s in scores if s is None)
    if n_missing:
        log.info("report %s: %d/%d questions missing", report_id, n_missing, len(questions))
    if engineered is not None:
        values = engineered.apply_values(values)
    return FeatureVector(report_id=report_id, values=values)


# --- feature matrix persistence (JSONL canonical, CSV export) ---

def save_matrix_jsonl(vectors: list[FeatureVector], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fv in vectors:
            fh.write(json.dumps({"report_id": fv.report_id, "values": fv.values}) + "\n")


def load_matrix_jsonl(path) -> list[FeatureVector]:
    vectors = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            vectors.append(FeatureVector(report_id=rec["report_id"], values=rec["values"]))
    return vectors


def save_matrix_csv(vectors: list[FeatureVector], feature_names: list[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["report_id", *feature_names])
        for fv in vectors:
            row = [fv.report_id]
            for name in feature_names:
                v = fv.values.get(name)
                row.append("" if v is None else repr(v))
            writer.writerow(row)
