"""End-to-end orchestration: ingest dialogues, build the index and feature
matrix, run feature engineering, train, predict, advise, and evaluate."""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import re
from dataclasses import dataclass, field

import numpy as np

from . import prompts
from .boost import (
    BoostModel,
    TrainConfig,
    load_model,
    predict_proba,
    save_model,
    train,
    vectors_to_matrix,
)
from .errors import (
    DigestMismatch,
    EmptyDialogue,
    EmptyTestset,
    NoPrediction,
    TransportError,
)
from .feature_lab import CaafeConfig, FeatureSetRevision, caafe_loop, load_revision, primary_label, save_revision
from .index import ChunkPolicy, VectorIndex, build_index, load_index, retrieve, save_index
from .metrics import Metrics, evaluate_multilabel, evaluate_single_label, top1_label
from .providers import Provider, PromptRequest, ProviderConfig, make_provider
from .scoring import QuestionBank, build_feature_vector, load_question_bank

log = logging.getLogger(__name__)


@dataclass
class Demographics:
    age: int | None = None
    sex: str | None = None

    def to_dict(self) -> dict:
        return {"age": self.age, "sex": self.sex}


@dataclass
class EPR:
    """Cleaned narrative distilled from a report or consultation dialogue."""

    report_id: str
    narrative: str
    demographics: Demographics = field(default_factory=Demographics)
    source: str = "report"  # report | dialogue | session


@dataclass
class LabeledExample:
    epr: EPR
    labels: dict[str, int]


@dataclass
class DiagnosisResult:
    report_id: str
    probabilities: dict[str, float]
    predicted: list[str]
    advice: str | None = None

    def to_dict(self) -> dict:
        return {
            "report_id": self.report_id,
            "probabilities": self.probabilities,
            "predicted": self.predicted,
            "advice": self.advice,
        }


@dataclass(frozen=True)
class PredictionMode:
    kind: str = "case_study_top1"  # case_study_top1 | multilabel
    threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in ("case_study_top1", "multilabel"):
            raise ValueError(f"unknown prediction mode {self.kind!r}")


_DEMOGRAPHIC_RE = re.compile(
    r"\(\s*(male|female)\s*,\s*(\d{1,3})\s*years?\s*old\s*\)", re.IGNORECASE
)


def ingest_dialog(
    utterances: list[tuple[str, str]],
    label_names: list[str],
    report_id: str = "dialogue",
    source: str = "dialogue",
) -> EPR:
    """Distill a dialogue into an EPR.

    Patient utterances carry the narrative; doctor questions are kept as
    context markers. Label-name mentions are scrubbed (case-insensitive) so
    gold diagnoses can never leak into the feature text, and a
    "(female, 29 years old)" style parenthetical populates demographics.
    """
    patient_parts: list[str] = []
    doctor_questions: list[str] = []
    for speaker, text in utterances:
        role = speaker.strip().lower()
        if role in ("doctor", "assistant", "system"):
            if "?" in text:
                doctor_questions.append(text.strip())
        else:
            if text.strip():
                patient_parts.append(text.strip())
    if not patient_parts:
        raise EmptyDialogue("no patient utterances")

    demographics = Demographics()
    narrative_parts = []
    for part in patient_parts:
        m = _DEMOGRAPHIC_RE.search(part)
        if m:
            demographics.sex = m.group(1).lower()
            demographics.age = int(m.group(2))
            part = _DEMOGRAPHIC_RE.sub("", part).strip()
        if part:
            narrative_parts.append(part)
    narrative = "\n".join(narrative_parts)
    if doctor_questions:
        narrative += "\n" + "\n".join(f"[asked] {q}" for q in doctor_questions)

    # scrub longest names first so nested label names cannot partially survive
    for name in sorted(label_names, key=len, reverse=True):
        narrative = re.sub(re.escape(name), "[REDACTED]", narrative, flags=re.IGNORECASE)
    if not narrative.strip():
        raise EmptyDialogue("narrative empty after scrubbing")
    return EPR(report_id=report_id, narrative=narrative, demographics=demographics, source=source)


@dataclass
class PipelineConfig:
    label_names: list[str] | None = None  # derived from the examples when unset
    chunk: ChunkPolicy = field(default_factory=ChunkPolicy)
    retrieval_k: int = 3
    train: TrainConfig = field(default_factory=TrainConfig)
    caafe: CaafeConfig = field(default_factory=CaafeConfig)
    mode: PredictionMode = field(default_factory=PredictionMode)
    seed: int = 0
    scoring_workers: int = 1

    def to_dict(self) -> dict:
        return {
            "label_names": self.label_names,
            "chunk": {"chunk_size_chars": self.chunk.chunk_size_chars,
                      "overlap_chars": self.chunk.overlap_chars},
            "retrieval_k": self.retrieval_k,
            "train": self.train.to_dict(),
            "caafe": {
                "max_iters": self.caafe.max_iters,
                "epsilon_accept": self.caafe.epsilon_accept,
                "corr_merge": self.caafe.corr_merge,
                "folds": self.caafe.folds,
                "seed": self.caafe.seed,
                "proposals": list(self.caafe.proposals) if self.caafe.proposals is not None else None,
            },
            "mode": {"kind": self.mode.kind, "threshold": self.mode.threshold},
            "seed": self.seed,
            "scoring_workers": self.scoring_workers,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        caafe = d.get("caafe", {})
        proposals = caafe.get("proposals")
        return cls(
            label_names=d.get("label_names"),
            chunk=ChunkPolicy(**d.get("chunk", {})),
            retrieval_k=d.get("retrieval_k", 3),
            train=TrainConfig.from_dict(d.get("train", {})),
            caafe=CaafeConfig(
                max_iters=caafe.get("max_iters", 10),
                epsilon_accept=caafe.get("epsilon_accept", 0.005),
                corr_merge=caafe.get("corr_merge", 0.95),
                folds=caafe.get("folds", 5),
                seed=caafe.get("seed", 0),
                proposals=tuple(proposals) if proposals is not None else None,
            ),
            mode=PredictionMode(**d.get("mode", {})),
            seed=d.get("seed", 0),
            scoring_workers=d.get("scoring_workers", 1),
        )


@dataclass
class TrainedPipeline:
    bank: QuestionBank
    index: VectorIndex
    revision: FeatureSetRevision
    model: BoostModel
    provider: Provider
    config: PipelineConfig

    @property
    def manifest(self) -> dict:
        return self.model.manifest

    def check_digests(self) -> None:
        expected = {
            "bank_digest": self.bank.bank_digest,
            "revision_digest": self.revision.revision_digest,
            "index_digest": self.index.build_digest,
        }
        for key, value in expected.items():
            if self.manifest.get(key) != value:
                raise DigestMismatch(
                    f"manifest {key}={self.manifest.get(key)!r} does not match loaded artifact {value!r}"
                )


def derive_label_names(examples: list[LabeledExample]) -> list[str]:
    names: set[str] = set()
    for ex in examples:
        names.update(ex.labels)
    return sorted(names)


def build_matrix(
    examples: list[LabeledExample],
    bank: QuestionBank,
    index: VectorIndex | None,
    provider: Provider,
    config: PipelineConfig,
    engineered: FeatureSetRevision | None = None,
):
    vectors = [
        build_feature_vector(
            ex.epr.report_id,
            ex.epr.narrative,
            bank,
            index,
            provider,
            engineered=engineered,
            k=config.retrieval_k,
            max_workers=config.scoring_workers,
        )
        for ex in examples
    ]
    return vectors


def run_training(
    corpus: list[tuple[str, str]],
    bank: QuestionBank,
    examples: list[LabeledExample],
    provider: Provider,
    config: PipelineConfig,
) -> TrainedPipeline:
    """Index the corpus, score the examples, run feature engineering, train."""
    label_names = config.label_names or derive_label_names(examples)
    index = build_index(corpus, config.chunk, provider)
    log.info("index built: %d chunks", len(index.chunks))
    vectors = build_matrix(examples, bank, index, provider, config)
    rows = [fv.values for fv in vectors]
    labels = [ex.labels for ex in examples]
    revision = caafe_loop(
        rows, labels, label_names, bank.feature_names(), provider, config.caafe, config.train
    )
    applied = [revision.apply_values(r) for r in rows]
    active = revision.active_feature_names(bank.feature_names())
    X = vectors_to_matrix(applied, active)
    Y = np.array([[lab.get(n, 0) for n in label_names] for lab in labels], dtype=float)
    manifest = {
        "bank_digest": bank.bank_digest,
        "revision_digest": revision.revision_digest,
        "index_digest": index.build_digest,
        "seed": config.seed,
    }
    model = train(X, Y, active, label_names, config.train, manifest=manifest)
    return TrainedPipeline(bank=bank, index=index, revision=revision, model=model,
                           provider=provider, config=config)


def predict_report(tp: TrainedPipeline, epr: EPR, mode: PredictionMode | None = None) -> DiagnosisResult:
    """Score one report through the trained pipeline and apply the decision rule."""
    tp.check_digests()
    mode = mode or tp.config.mode
    fv = build_feature_vector(
        epr.report_id, epr.narrative, tp.bank, tp.index, tp.provider,
        engineered=tp.revision, k=tp.config.retrieval_k,
        max_workers=tp.config.scoring_workers,
    )
    probabilities = predict_proba(tp.model, fv.values)
    if mode.kind == "case_study_top1":
        predicted = [top1_label(probabilities)]
    else:
        hits = [(name, p) for name, p in probabilities.items() if p >= mode.threshold]
        hits.sort(key=lambda t: (-t[1], t[0]))
        predicted = [name for name, _ in hits]
    return DiagnosisResult(report_id=epr.report_id, probabilities=probabilities, predicted=predicted)


def generate_advice(
    result: DiagnosisResult,
    epr: EPR,
    index: VectorIndex,
    provider: Provider,
    k: int = 3,
) -> str | None:
    """One final provider call: predicted conditions + per-label context + report."""
    if not result.predicted:
        raise NoPrediction("cannot generate advice without a prediction")
    blocks: list[str] = []
    for label in result.predicted:
        for hit in retrieve(index, label + " " + epr.narrative[:200], k, provider):
            if hit.chunk.text not in blocks:
                blocks.append(hit.chunk.text)
    request = PromptRequest(
        system_text=prompts.ADVICE_SYSTEM,
        user_text=(
            f"{prompts.ADVICE_CONDITIONS_PREFIX}{', '.join(result.predicted)}\n"
            f"Report:\n{epr.narrative}"
        ),
        context_blocks=tuple(blocks),
    )
    try:
        completion = provider.complete(request)
    except TransportError as exc:
        log.warning("advice generation failed, continuing without advice: %s", exc)
        return None
    return completion.text


def evaluate(tp: TrainedPipeline, testset: list[LabeledExample], mode: PredictionMode | None = None) -> Metrics:
    """Accuracy and macro-F1 of the pipeline's decisions on a held-out set."""
    if not testset:
        raise EmptyTestset("empty test set")
    mode = mode or tp.config.mode
    label_names = tp.model.label_names
    results = [predict_report(tp, ex.epr, mode) for ex in testset]
    if mode.kind == "case_study_top1":
        gold = [primary_label(ex.labels) for ex in testset]
        pred = [r.predicted[0] for r in results]
        return evaluate_single_label(gold, pred, label_names)
    gold_sets = [{n for n, v in ex.labels.items() if v} for ex in testset]
    pred_sets = [set(r.predicted) for r in results]
    return evaluate_multilabel(gold_sets, pred_sets, label_names)


ABLATION_VARIANTS = ("full", "no_retrieval", "no_caafe")


def ablation_config(config: PipelineConfig, variant: str) -> PipelineConfig:
    if variant == "full":
        return config
    if variant == "no_retrieval":
        return dataclasses.replace(config, retrieval_k=0)
    if variant == "no_caafe":
        return dataclasses.replace(config, caafe=dataclasses.replace(config.caafe, max_iters=0))
    raise ValueError(f"unknown ablation variant {variant!r}")


def run_ablation(
    corpus: list[tuple[str, str]],
    bank: QuestionBank,
    train_examples: list[LabeledExample],
    test_examples: list[LabeledExample],
    provider: Provider,
    config: PipelineConfig,
) -> dict[str, Metrics]:
    """Three full train/evaluate cycles sharing the split, folds, and seeds."""
    out: dict[str, Metrics] = {}
    for variant in ABLATION_VARIANTS:
        vconfig = ablation_config(config, variant)
        tp = run_training(corpus, bank, train_examples, provider, vconfig)
        out[variant] = evaluate(tp, test_examples)
        log.info("ablation %s: accuracy=%.3f macro_f1=%.3f",
                 variant, out[variant].accuracy, out[variant].macro_f1)
    return out


def split_examples(
    examples: list[LabeledExample], eval_fraction: float, seed: int
) -> tuple[list[LabeledExample], list[LabeledExample]]:
    """Deterministic stratified train/test split by primary label."""
    rng = np.random.default_rng(seed)
    by_label: dict[str, list[int]] = {}
    for i, ex in enumerate(examples):
        by_label.setdefault(primary_label(ex.labels), []).append(i)
    test_idx: set[int] = set()
    for key in sorted(by_label):
        rows = np.array(by_label[key])
        rows = rows[rng.permutation(len(rows))]
        n_test = int(round(len(rows) * eval_fraction))
        test_idx.update(int(r) for r in rows[:n_test])
    train_set = [ex for i, ex in enumerate(examples) if i not in test_idx]
    test_set = [ex for i, ex in enumerate(examples) if i in test_idx]
    return train_set, test_set


# --- artifact persistence -------------------------------------------------

BANK_FILE = "bank.json"
INDEX_FILE = "index.json"
REVISION_FILE = "revision.json"
MODEL_FILE = "model.json"
CONFIG_FILE = "pipeline_config.json"


def save_pipeline(tp: TrainedPipeline, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, BANK_FILE), "w", encoding="utf-8") as fh:
        json.dump([
            {"question_id": q.question_id, "feature_name": q.feature_name,
             "text": q.text, "category": q.category}
            for q in tp.bank.questions
        ], fh, indent=1)
    save_index(tp.index, os.path.join(directory, INDEX_FILE))
    save_revision(tp.revision, os.path.join(directory, REVISION_FILE))
    save_model(tp.model, os.path.join(directory, MODEL_FILE))
    with open(os.path.join(directory, CONFIG_FILE), "w", encoding="utf-8") as fh:
        json.dump(tp.config.to_dict(), fh, indent=1)


def load_pipeline(directory, provider: Provider) -> TrainedPipeline:
    bank = load_question_bank(os.path.join(directory, BANK_FILE))
    index = load_index(os.path.join(directory, INDEX_FILE))
    revision = load_revision(os.path.join(directory, REVISION_FILE))
    model = load_model(os.path.join(directory, MODEL_FILE))
    with open(os.path.join(directory, CONFIG_FILE), encoding="utf-8") as fh:
        config = PipelineConfig.from_dict(json.load(fh))
    tp = TrainedPipeline(bank=bank, index=index, revision=revision, model=model,
                         provider=provider, config=config)
    tp.check_digests()
    return tp


# --- labeled-example files -------------------------------------------------

def save_examples_jsonl(examples: list[LabeledExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({
                "report_id": ex.epr.report_id,
                "narrative": ex.epr.narrative,
                "demographics": ex.epr.demographics.to_dict(),
                "source": ex.epr.source,
                "labels": ex.labels,
            }) + "\n")


def load_labels_jsonl(path) -> dict[str, dict[str, int]]:
    """Labels file: one {report_id, labels:{name: 0|1}} record per line."""
    out: dict[str, dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out[rec["report_id"]] = {str(k): int(v) for k, v in rec["labels"].items()}
    return out


def load_examples_jsonl(path, label_names: list[str] | None = None) -> list[LabeledExample]:
    """Rows carry either a narrative or raw utterances (then ingested here)."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            labels = {str(k): int(v) for k, v in rec["labels"].items()}
            if "narrative" in rec:
                demo = rec.get("demographics") or {}
                epr = EPR(
                    report_id=rec["report_id"],
                    narrative=rec["narrative"],
                    demographics=Demographics(age=demo.get("age"), sex=demo.get("sex")),
                    source=rec.get("source", "report"),
                )
            else:
                epr = ingest_dialog(
                    [(u["speaker"], u["text"]) for u in rec["utterances"]],
                    label_names if label_names is not None else sorted(labels),
                    report_id=rec["report_id"],
                )
            examples.append(LabeledExample(epr=epr, labels=labels))
    return examples
