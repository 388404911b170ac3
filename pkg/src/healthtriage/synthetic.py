"""Deterministic synthetic benchmark: a self-consistent world of disease
classes, symptom narratives, knowledge facts, and a scripted answer table.

Planted structure drives the ablation tests:
- class-specific questions are answerable only when the scoring prompt
  carries retrieved context (their scripted answers key on context-bearing
  prompt digests), so dropping retrieval collapses each class pair;
- when `interaction` is on, the last two classes share their pair-level
  signal and differ only through min(metric_alpha, metric_beta), which a
  depth-1 model can exploit only after feature engineering proposes it.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .boost import TrainConfig
from .errors import BadSpec
from .feature_lab import CaafeConfig, build_proposal_request, describe_dataset
from .index import ChunkPolicy, build_index, retrieve
from .pipeline import Demographics, EPR, LabeledExample, PipelineConfig, PredictionMode
from .providers import MockProvider, ProviderConfig, request_digest
from .scoring import Question, QuestionBank, build_score_request, retrieval_query

METRIC_FEATURES = ("metric_alpha", "metric_beta")
PROPOSAL_NAME = "marker_floor"
PROPOSAL_EXPR = f"min({METRIC_FEATURES[0]}, {METRIC_FEATURES[1]})"

_SENSATIONS = ["burning", "dull", "sharp", "tingling", "throbbing", "itchy", "cramping", "pulsing"]
_SITES = ["temples", "lower back", "abdomen", "chest", "throat", "joints", "sinuses", "calves",
          "shoulders", "stomach", "ears", "neck"]
_TIMES = ["at dawn", "after meals", "late at night", "during exercise", "in cold air",
          "after waking", "in the evening", "on exertion"]
_FILLER = [
    "Appetite is otherwise unchanged.",
    "No recent travel is reported.",
    "Hydration has been adequate.",
    "Sleep has been broken recently.",
    "No new medication was started.",
    "Energy levels vary through the day.",
]


@dataclass(frozen=True)
class SyntheticSpec:
    n_examples: int = 400
    n_classes: int = 10
    questions_per_class: int = 4
    retrieval_dependence: float = 0.5
    interaction: bool = True
    seed: int = 7

    def __post_init__(self):
        if self.n_examples < self.n_classes or self.n_classes < 2:
            raise BadSpec("need at least two classes and one example per class")
        if self.questions_per_class < 2 or self.questions_per_class % 2:
            raise BadSpec("questions_per_class must be an even number >= 2")
        if not (0.0 <= self.retrieval_dependence <= 1.0):
            raise BadSpec("retrieval_dependence must be a fraction in [0, 1]")


@dataclass
class SyntheticWorld:
    spec: SyntheticSpec
    corpus: list[tuple[str, str]]
    bank: QuestionBank
    examples: list[LabeledExample]
    answer_table: dict[str, str]
    provider_config: ProviderConfig
    pipeline_config: PipelineConfig
    label_names: list[str] = field(default_factory=list)


def _phrase(rng: np.random.Generator) -> str:
    return (
        f"{_SENSATIONS[rng.integers(len(_SENSATIONS))]} discomfort in the "
        f"{_SITES[rng.integers(len(_SITES))]} {_TIMES[rng.integers(len(_TIMES))]}"
    )


def generate_synthetic(spec: SyntheticSpec) -> SyntheticWorld:
    rng = np.random.default_rng(spec.seed)
    n_classes = spec.n_classes
    qpc = spec.questions_per_class
    half = qpc // 2
    label_names = [f"condition_{c:02d}" for c in range(n_classes)]
    interaction_on = spec.interaction and n_classes >= 2
    k_class = n_classes - 1 if interaction_on else None  # both-markers-high class
    m_class = n_classes - 2 if interaction_on else None  # its pair partner

    def pair(c: int) -> int:
        return c // 2

    # question bank + one knowledge fact per question
    phrases: dict[tuple[int, int], str] = {}
    questions: list[Question] = []
    corpus: list[tuple[str, str]] = []
    for c in range(n_classes):
        for i in range(qpc):
            phrases[(c, i)] = _phrase(rng)
            anchor = f"kb{c:02d}x{i}"
            fname = f"q_{c:02d}_{i}"
            questions.append(Question(
                question_id=fname,
                feature_name=fname,
                text=f"Does the report mention {phrases[(c, i)]} ({anchor})?",
                category="symptom",
            ))
            corpus.append((
                f"facts/{fname}.txt",
                f"{anchor}: presentations with {phrases[(c, i)]} are documented here. "
                f"Clinicians reviewing {anchor} look for {phrases[(c, i)]} specifically. "
                f"{_FILLER[rng.integers(len(_FILLER))]} {anchor}",
            ))
    if interaction_on:
        for name, marker in zip(METRIC_FEATURES, ("alpha", "beta")):
            questions.append(Question(
                question_id=name,
                feature_name=name,
                text=f"How elevated is laboratory marker {marker} in this report?",
                category="lab",
            ))
            corpus.append((
                f"facts/{name}.txt",
                f"Marker {marker} rises with systemic strain; values above one half are "
                f"considered elevated. Reference levels for marker {marker} are stable.",
            ))
    for b in range(4):
        corpus.append((
            f"background/bg{b}.txt",
            f"General care note {b}: rest, fluids, and observation remain the baseline "
            f"recommendation. {_FILLER[b % len(_FILLER)]}",
        ))
    bank = QuestionBank(questions)

    # gated (retrieval-dependent) question indices per class: specifics first
    n_gated = int(round(spec.retrieval_dependence * qpc))
    gated_idx = set(range(min(n_gated, qpc)))

    # examples with balanced classes
    classes = np.repeat(np.arange(n_classes), int(np.ceil(spec.n_examples / n_classes)))[: spec.n_examples]
    rng.shuffle(classes)
    examples: list[LabeledExample] = []
    alphas = np.zeros(spec.n_examples)
    betas = np.zeros(spec.n_examples)
    for idx in range(spec.n_examples):
        c = int(classes[idx])
        if interaction_on:
            if c == k_class:
                alphas[idx] = rng.uniform(0.65, 0.95)
                betas[idx] = rng.uniform(0.65, 0.95)
            else:
                hi, lo = rng.uniform(0.65, 0.95), rng.uniform(0.05, 0.35)
                if rng.random() < 0.5:
                    alphas[idx], betas[idx] = hi, lo
                else:
                    alphas[idx], betas[idx] = lo, hi
        mention = [phrases[(c, i)] for i in range(qpc)]
        narrative = (
            f"Case note {idx:04d}. Patient reports {mention[0]} and {mention[1]}. "
            f"There is also {mention[2]}, and occasionally {mention[3]}. "
            f"{_FILLER[rng.integers(len(_FILLER))]}"
        )
        epr = EPR(
            report_id=f"case_{idx:04d}",
            narrative=narrative,
            demographics=Demographics(age=int(rng.integers(3, 15)),
                                      sex=str(rng.choice(["male", "female"]))),
            source="report",
        )
        examples.append(LabeledExample(
            epr=epr,
            labels={name: 1 if name == label_names[c] else 0 for name in label_names},
        ))

    def score_for(idx: int, c: int, q_class: int, q_idx: int) -> float:
        hi = float(np.round(rng.uniform(0.72, 0.95), 4))
        lo = float(np.round(rng.uniform(0.05, 0.28), 4))
        if interaction_on and q_class in (k_class, m_class) and q_idx < half:
            return lo  # dud questions: the interaction pair has no specific signal
        if q_idx < half:
            return hi if c == q_class else lo
        return hi if pair(c) == pair(q_class) else lo

    # scripted answers, keyed on the exact prompts scoring will build
    provider_config = ProviderConfig(kind="mock", model_name="synthetic-mock",
                                     embed_dim=256, seed=spec.seed)
    provider = MockProvider(provider_config)
    chunk_policy = ChunkPolicy(chunk_size_chars=512, overlap_chars=64)
    index = build_index(corpus, chunk_policy, provider)
    table: dict[str, str] = {}
    for idx, ex in enumerate(examples):
        c = int(classes[idx])
        narrative = ex.epr.narrative
        for q in questions:
            if q.feature_name in METRIC_FEATURES:
                value = alphas[idx] if q.feature_name == METRIC_FEATURES[0] else betas[idx]
                value = float(np.round(value, 4))
                gated = False
            else:
                q_class = int(q.feature_name[2:4])
                q_idx = int(q.feature_name[5:])
                value = score_for(idx, c, q_class, q_idx)
                gated = q_idx in gated_idx
            answer = f"{q.feature_name}: {value}"
            hits = [h.chunk.text
                    for h in retrieve(index, retrieval_query(q, narrative), 3, provider)]
            table[request_digest(build_score_request(q, narrative, hits))] = answer
            if not gated:
                table[request_digest(build_score_request(q, narrative, []))] = answer

    # scripted feature proposal for any plausible training-split size
    if interaction_on:
        reply = (
            f"name: {PROPOSAL_NAME}\n"
            f"expr: {PROPOSAL_EXPR}\n"
            f"rationale: both markers must be elevated together"
        )
        for n_rows in range(1, spec.n_examples + 1):
            req = build_proposal_request(
                describe_dataset(bank.feature_names(), label_names, n_rows), []
            )
            table[request_digest(req)] = reply

    pipeline_config = PipelineConfig(
        label_names=label_names,
        chunk=chunk_policy,
        retrieval_k=3,
        train=TrainConfig(n_rounds=12, learning_rate=0.3, max_depth=1,
                          min_child_weight=1.0, lambda_l2=1.0, seed=spec.seed),
        caafe=CaafeConfig(max_iters=4, folds=5, seed=spec.seed),
        mode=PredictionMode(kind="case_study_top1"),
        seed=spec.seed,
    )
    return SyntheticWorld(
        spec=spec,
        corpus=corpus,
        bank=bank,
        examples=examples,
        answer_table=table,
        provider_config=provider_config,
        pipeline_config=pipeline_config,
        label_names=label_names,
    )


def write_synthetic(world: SyntheticWorld, directory) -> None:
    """Persist the generated world as stable, diffable files."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "corpus.jsonl"), "w", encoding="utf-8") as fh:
        for doc_id, text in world.corpus:
            fh.write(json.dumps({"doc_id": doc_id, "text": text}) + "\n")
    with open(os.path.join(directory, "bank.json"), "w", encoding="utf-8") as fh:
        json.dump([
            {"question_id": q.question_id, "feature_name": q.feature_name,
             "text": q.text, "category": q.category}
            for q in world.bank.questions
        ], fh, indent=1)
    from .pipeline import save_examples_jsonl

    save_examples_jsonl(world.examples, os.path.join(directory, "examples.jsonl"))
    with open(os.path.join(directory, "answer_table.json"), "w", encoding="utf-8") as fh:
        json.dump(
            [{"prompt_digest": digest, "response": world.answer_table[digest]}
             for digest in sorted(world.answer_table)],
            fh, indent=0,
        )
    with open(os.path.join(directory, "pipeline_config.json"), "w", encoding="utf-8") as fh:
        json.dump(world.pipeline_config.to_dict(), fh, indent=1)
    with open(os.path.join(directory, "provider.json"), "w", encoding="utf-8") as fh:
        json.dump(world.provider_config.to_dict(), fh, indent=1)
