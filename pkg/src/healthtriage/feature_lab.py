"""Iterative feature engineering: propose, cross-validate, accept or reject,
then merge highly correlated columns and drop columns with zero importance.

Derived features are restricted to the arithmetic DSL in `exprs`; generated
code is never executed. Every proposal lands in the ledger with its measured
cross-validation delta and the resulting decision.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from . import prompts
from .boost import TrainConfig, feature_importance, predict_proba_matrix, train, vectors_to_matrix
from .errors import ExprSyntaxError, UnresolvedIdent
from .exprs import eval_expr, expr_idents, parse_expr, print_expr
from .metrics import evaluate_single_label, top1_from_matrix
from .providers import Provider, PromptRequest, text_digest
from .scoring import FEATURE_NAME_RE

log = logging.getLogger(__name__)

MERGE_PREFIX = "merge_"


@dataclass(frozen=True)
class CandidateFeature:
    name: str
    expression: str
    rationale: str = ""


@dataclass
class FeatureSetRevision:
    """Accepted/merged/deleted feature bookkeeping applied on top of the bank."""

    accepted: list[tuple[str, str]] = field(default_factory=list)  # (name, expr source)
    merged: list[tuple[str, list[str]]] = field(default_factory=list)  # (name, sources)
    deleted: list[str] = field(default_factory=list)
    ledger: list[dict] = field(default_factory=list)
    revision_digest: str = ""

    def __post_init__(self):
        if not self.revision_digest:
            self.revision_digest = self._digest()

    def _digest(self) -> str:
        return text_digest(json.dumps(
            {"accepted": self.accepted, "merged": self.merged, "deleted": self.deleted},
            sort_keys=True,
        ))

    def refresh_digest(self) -> None:
        self.revision_digest = self._digest()

    def apply_values(self, values: dict[str, float | None]) -> dict[str, float | None]:
        """Compute engineered and merged columns on top of base scores."""
        out = dict(values)
        for name, source in self.accepted:
            out[name] = eval_expr(parse_expr(source), out)
        for name, sources in self.merged:
            parts = [out.get(s) for s in sources]
            out[name] = None if any(p is None for p in parts) else float(np.mean(parts))
        return out

    def active_feature_names(self, base_names: list[str]) -> list[str]:
        """Model feature space: base plus engineered, minus merge sources and deletions."""
        names = list(base_names) + [name for name, _ in self.accepted]
        dropped = set(self.deleted)
        for merged_name, sources in self.merged:
            dropped.update(sources)
            names.append(merged_name)
        return [n for n in names if n not in dropped]

    def to_dict(self) -> dict:
        return {
            "accepted": [{"name": n, "expr": e} for n, e in self.accepted],
            "merged": [{"name": n, "sources": s} for n, s in self.merged],
            "deleted": list(self.deleted),
            "ledger": self.ledger,
            "digest": self.revision_digest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSetRevision":
        rev = cls(
            accepted=[(rec["name"], rec["expr"]) for rec in d.get("accepted", [])],
            merged=[(rec["name"], list(rec["sources"])) for rec in d.get("merged", [])],
            deleted=list(d.get("deleted", [])),
            ledger=list(d.get("ledger", [])),
        )
        return rev


def save_revision(revision: FeatureSetRevision, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(revision.to_dict(), fh, indent=1)


def load_revision(path) -> FeatureSetRevision:
    with open(path, encoding="utf-8") as fh:
        return FeatureSetRevision.from_dict(json.load(fh))


@dataclass(frozen=True)
class CaafeConfig:
    max_iters: int = 10
    epsilon_accept: float = 0.005
    corr_merge: float = 0.95
    folds: int = 5
    seed: int = 0
    # scripted proposals ("name = expr" strings) bypass the provider when set
    proposals: tuple[str, ...] | None = None


# --- cross-validation machinery ---

def primary_label(labels: dict[str, int]) -> str:
    positives = sorted(name for name, v in labels.items() if v)
    return positives[0] if positives else "__none__"


def stratified_folds(keys: list[str], n_folds: int, seed: int) -> np.ndarray:
    """Fold id per row, stratified by key; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    fold = np.zeros(len(keys), dtype=int)
    by_key: dict[str, list[int]] = {}
    for i, key in enumerate(keys):
        by_key.setdefault(key, []).append(i)
    for key in sorted(by_key):
        rows = np.array(by_key[key])
        rows = rows[rng.permutation(len(rows))]
        for j, row in enumerate(rows):
            fold[row] = j % n_folds
    return fold


def cv_macro_f1(
    rows: list[dict[str, float | None]],
    labels: list[dict[str, int]],
    label_names: list[str],
    feature_names: list[str],
    train_cfg: TrainConfig,
    fold_ids: np.ndarray,
) -> float:
    """Mean top-1 macro-F1 over the given folds."""
    X = vectors_to_matrix(rows, feature_names)
    Y = np.array([[labels[i].get(n, 0) for n in label_names] for i in range(len(rows))], dtype=float)
    gold = [primary_label(lab) for lab in labels]
    scores = []
    for f in range(int(fold_ids.max()) + 1):
        test = fold_ids == f
        if not test.any() or test.all():
            continue
        model = train(X[~test], Y[~test], feature_names, label_names, train_cfg)
        probs = predict_proba_matrix(model, X[test])
        pred = top1_from_matrix(probs, label_names)
        fold_gold = [g for g, t in zip(gold, test) if t]
        scores.append(evaluate_single_label(fold_gold, pred, label_names).macro_f1)
    return float(np.mean(scores)) if scores else 0.0


def materialize_candidate(
    rows: list[dict[str, float | None]], candidate: CandidateFeature
) -> None:
    tree = parse_expr(candidate.expression)
    for row in rows:
        row[candidate.name] = eval_expr(tree, row)


def evaluate_candidate(
    candidate: CandidateFeature,
    rows: list[dict[str, float | None]],
    labels: list[dict[str, int]],
    label_names: list[str],
    feature_names: list[str],
    train_cfg: TrainConfig,
    folds: int = 5,
    seed: int = 0,
) -> float:
    """Macro-F1 delta of adding the candidate column, same folds on both arms."""
    fold_ids = stratified_folds([primary_label(lab) for lab in labels], folds, seed)
    augmented = [dict(r) for r in rows]
    materialize_candidate(augmented, candidate)
    with_arm = cv_macro_f1(augmented, labels, label_names, feature_names + [candidate.name], train_cfg, fold_ids)
    without_arm = cv_macro_f1(rows, labels, label_names, feature_names, train_cfg, fold_ids)
    return with_arm - without_arm


# --- proposal handling ---

def describe_dataset(feature_names: list[str], label_names: list[str], n_rows: int) -> str:
    return (
        f"Rows: {n_rows}\n"
        f"Labels: {', '.join(label_names)}\n"
        f"Features: {', '.join(feature_names)}"
    )


def build_proposal_request(description: str, ledger: list[dict]) -> PromptRequest:
    history = [
        f"- {e['name']} = {e['expr']} -> {e['decision']} (delta {e['cv_delta']:+.4f})"
        for e in ledger
    ]
    user = description + "\n\nPrevious proposals:\n" + ("\n".join(history) if history else "(none)")
    return PromptRequest(system_text=prompts.PROPOSAL_SYSTEM, user_text=user)


_NAME_LINE = re.compile(r"^name:\s*(\S+)\s*$", re.MULTILINE)
_EXPR_LINE = re.compile(r"^expr:\s*(.+?)\s*$", re.MULTILINE)
_RATIONALE_LINE = re.compile(r"^rationale:\s*(.+?)\s*$", re.MULTILINE)
_ASSIGN_FORM = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.+?)\s*$")


def parse_candidate(text: str) -> CandidateFeature | None:
    """Parse 'name:/expr:/rationale:' replies, or the compact 'name = expr' form."""
    name_m = _NAME_LINE.search(text)
    expr_m = _EXPR_LINE.search(text)
    if name_m and expr_m:
        rationale = _RATIONALE_LINE.search(text)
        return CandidateFeature(
            name=name_m.group(1),
            expression=expr_m.group(1),
            rationale=rationale.group(1) if rationale else "",
        )
    assign = _ASSIGN_FORM.match(text.strip())
    if assign:
        return CandidateFeature(name=assign.group(1), expression=assign.group(2))
    return None


def _valid_candidate(candidate: CandidateFeature, namespace: set[str]) -> bool:
    if not FEATURE_NAME_RE.match(candidate.name) or candidate.name in namespace:
        return False
    try:
        tree = parse_expr(candidate.expression)
    except ExprSyntaxError:
        return False
    return expr_idents(tree) <= namespace


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    both = ~np.isnan(a) & ~np.isnan(b)
    if both.sum() < 2:
        return None
    x, y = a[both], b[both]
    if x.std() == 0.0 or y.std() == 0.0:
        return None
    return float(np.corrcoef(x, y)[0, 1])


def caafe_loop(
    rows: list[dict[str, float | None]],
    labels: list[dict[str, int]],
    label_names: list[str],
    base_feature_names: list[str],
    provider: Provider | None,
    config: CaafeConfig,
    train_cfg: TrainConfig,
) -> FeatureSetRevision:
    """Run the propose/evaluate loop, then correlation merges and zero-importance
    deletion. The final cross-validated macro-F1 never drops below the initial
    one: a maintenance step that would sink the metric under the starting
    point is rolled back.
    """
    if config.max_iters == 0:
        return FeatureSetRevision()

    working = [dict(r) for r in rows]
    active = list(base_feature_names)
    namespace = set(active)
    fold_ids = stratified_folds([primary_label(lab) for lab in labels], config.folds, config.seed)

    def cv(names: list[str]) -> float:
        return cv_macro_f1(working, labels, label_names, names, train_cfg, fold_ids)

    initial_metric = cv(active)
    current_metric = initial_metric
    revision = FeatureSetRevision()
    scripted = list(config.proposals) if config.proposals is not None else None

    for _ in range(config.max_iters):
        candidate = _next_candidate(scripted, provider, active, label_names, len(rows), revision.ledger)
        if candidate is None or not _valid_candidate(candidate, namespace):
            break
        materialize_candidate(working, candidate)
        with_metric = cv(active + [candidate.name])
        delta = with_metric - current_metric
        decision = "ACCEPT" if delta > config.epsilon_accept else "REJECT"
        revision.ledger.append({
            "name": candidate.name,
            "expr": print_expr(parse_expr(candidate.expression)),
            "rationale": candidate.rationale,
            "cv_delta": delta,
            "decision": decision,
        })
        namespace.add(candidate.name)
        if decision == "ACCEPT":
            revision.accepted.append((candidate.name, print_expr(parse_expr(candidate.expression))))
            active.append(candidate.name)
            current_metric = with_metric
        else:
            for row in working:
                row.pop(candidate.name, None)

    # merge pass: scan a snapshot of the current columns pairwise in order
    snapshot = list(active)
    X = vectors_to_matrix(working, snapshot)
    merged_away: set[str] = set()
    for i, a in enumerate(snapshot):
        if a in merged_away:
            continue
        for j in range(i + 1, len(snapshot)):
            b = snapshot[j]
            if b in merged_away:
                continue
            corr = _pearson(X[:, i], X[:, j])
            if corr is None or abs(corr) <= config.corr_merge:
                continue
            merged_name = f"{MERGE_PREFIX}{a}__{b}"
            if merged_name in namespace:
                continue
            for row in working:
                pa, pb = row.get(a), row.get(b)
                row[merged_name] = None if pa is None or pb is None else float(np.mean([pa, pb]))
            trial = [n for n in active if n not in (a, b)] + [merged_name]
            trial_metric = cv(trial)
            if trial_metric >= initial_metric:
                revision.merged.append((merged_name, [a, b]))
                merged_away.update((a, b))
                namespace.add(merged_name)
                active = trial
                current_metric = trial_metric
            else:
                for row in working:
                    row.pop(merged_name, None)
                log.info("merge of %s and %s rolled back (metric %.4f < initial %.4f)",
                         a, b, trial_metric, initial_metric)
            break  # each source column participates in at most one merge

    # deletion pass: drop columns the full-data model never splits on
    Xf = vectors_to_matrix(working, active)
    Y = np.array([[labels[i].get(n, 0) for n in label_names] for i in range(len(working))], dtype=float)
    full_model = train(Xf, Y, active, label_names, train_cfg)
    importances = feature_importance(full_model)
    dead = [n for n in active if importances[n] == 0.0]
    if dead and len(dead) < len(active):
        trial = [n for n in active if n not in dead]
        trial_metric = cv(trial)
        if trial_metric >= initial_metric:
            revision.deleted = dead
            active = trial
            current_metric = trial_metric
        else:
            log.info("deletion of %d columns rolled back (metric %.4f < initial %.4f)",
                     len(dead), trial_metric, initial_metric)

    revision.refresh_digest()
    return revision


def _next_candidate(
    scripted: list[str] | None,
    provider: Provider | None,
    feature_names: list[str],
    label_names: list[str],
    n_rows: int,
    ledger: list[dict],
) -> CandidateFeature | None:
    if scripted is not None:
        if not scripted:
            return None
        return parse_candidate(scripted.pop(0))
    if provider is None:
        return None
    request = build_proposal_request(describe_dataset(feature_names, label_names, n_rows), ledger)
    reply = provider.complete(request)
    return parse_candidate(reply.text)
