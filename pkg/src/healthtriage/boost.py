"""Second-order gradient-boosted trees for binary logistic objectives.

Trains one ensemble per label (one-vs-rest). Splits are exact greedy over
midpoint thresholds with a learned default direction for missing values.

Split selection runs in two stages: a vectorized cumulative-sum scan finds
near-maximal candidates, then every candidate within a small window of the
scan maximum is re-evaluated with plain row-order partition sums. The final
decision (and every reported gain) comes from those canonical sums, so the
chosen split is independent of the scan's summation order — ties resolve by
(lower feature index, lower threshold, default-left first) on bit-equal
gains, matching any enumerator that evaluates partitions the same way.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DigestMismatch, IoError, ShapeMismatch, UnknownFeatureSpace, VersionMismatch

log = logging.getLogger(__name__)

MODEL_SCHEMA_VERSION = 1

# Fast-scan gains are recomputed exactly for anything this close to the max.
_SCAN_WINDOW = 1e-6

# Open-interval clamp applied to reported probabilities only, never to g/h.
_P_EPS = 1e-15


@dataclass(frozen=True)
class TrainConfig:
    n_rounds: int = 100
    learning_rate: float = 0.3
    lambda_l2: float = 1.0
    gamma_min_gain: float = 0.0
    max_depth: int = 4
    min_child_weight: float = 1.0
    base_margin: float = 0.0
    seed: int = 0
    # reserved for later: row/column subsampling, early stopping
    subsample: float = 1.0
    colsample: float = 1.0

    def __post_init__(self):
        if self.n_rounds < 0:
            raise ValueError("n_rounds must be >= 0")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.lambda_l2 < 0 or self.gamma_min_gain < 0 or self.min_child_weight < 0:
            raise ValueError("regularization parameters must be >= 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: d[k] for k in d if k in cls.__dataclass_fields__})


@dataclass
class TreeNode:
    """Internal node (left/right set) or leaf (weight only)."""

    weight: float = 0.0
    feature_index: int = -1
    threshold: float = 0.0
    default_left: bool = True
    gain: float = 0.0
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"weight": self.weight}
        return {
            "feature_index": self.feature_index,
            "threshold": self.threshold,
            "default_left": self.default_left,
            "gain": self.gain,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeNode":
        if "weight" in d:
            return cls(weight=d["weight"])
        return cls(
            feature_index=d["feature_index"],
            threshold=d["threshold"],
            default_left=d["default_left"],
            gain=d["gain"],
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
        )


@dataclass(frozen=True)
class SplitDecision:
    feature_index: int
    threshold: float
    default_left: bool
    gain: float


def sigmoid(m: np.ndarray | float) -> np.ndarray | float:
    m = np.asarray(m, dtype=np.float64)
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    em = np.exp(m[~pos])
    out[~pos] = em / (1.0 + em)
    return out


def grad_hess_logistic(margin: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of the logistic loss at the given margins."""
    p = sigmoid(margin)
    return p - y, p * (1.0 - p)


def logistic_loss(margin: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(sigmoid(margin), _P_EPS, 1.0 - _P_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def _partition_gain(
    g: np.ndarray, h: np.ndarray, left: np.ndarray, lam: float, gamma: float
) -> tuple[float, float, float]:
    """Canonical (gain, H_left, H_right) for a boolean partition, row-order sums."""
    gl = float(np.sum(g[left]))
    hl = float(np.sum(h[left]))
    gr = float(np.sum(g[~left]))
    hr = float(np.sum(h[~left]))
    gt = gl + gr
    ht = hl + hr
    if hl + lam == 0.0 or hr + lam == 0.0 or ht + lam == 0.0:
        return -np.inf, hl, hr  # degenerate at lambda 0 with saturated Hessians
    gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - gt * gt / (ht + lam)) - gamma
    return gain, hl, hr


def best_split(X: np.ndarray, g: np.ndarray, h: np.ndarray, config: TrainConfig) -> SplitDecision | None:
    """Exact greedy split for one node; returns None when no candidate qualifies.

    Candidate thresholds are midpoints between distinct consecutive present
    values per feature; each is tried with missing rows routed left and
    right. A split must have positive gain and both children's Hessian sums
    at or above min_child_weight.
    """
    n, n_features = X.shape
    if n < 2:
        return None
    lam = config.lambda_l2
    gamma = config.gamma_min_gain
    mcw = config.min_child_weight

    order = np.argsort(X, axis=0, kind="stable")  # NaN sorts last per column
    xs = np.take_along_axis(X, order, axis=0)
    cs_g = np.cumsum(g[order], axis=0)
    cs_h = np.cumsum(h[order], axis=0)
    n_present = np.count_nonzero(~np.isnan(X), axis=0)
    cols = np.arange(n_features)
    safe_last = np.maximum(n_present - 1, 0)
    tot_gp = np.where(n_present > 0, cs_g[safe_last, cols], 0.0)
    tot_hp = np.where(n_present > 0, cs_h[safe_last, cols], 0.0)
    g_all = float(np.sum(g))
    h_all = float(np.sum(h))
    g_miss = g_all - tot_gp
    h_miss = h_all - tot_hp

    with np.errstate(invalid="ignore"):
        boundary = (xs[:-1, :] != xs[1:, :]) & ~np.isnan(xs[1:, :])
    if not boundary.any():
        return None

    gl_p = cs_g[:-1, :]
    hl_p = cs_h[:-1, :]
    gr_p = tot_gp - gl_p
    hr_p = tot_hp - hl_p

    def scan_gain(gl, hl, gr, hr):
        gt = gl + gr
        ht = hl + hr
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - gt * gt / (ht + lam)) - gamma
        gain = np.where(np.isnan(gain), -np.inf, gain)
        loose = boundary & (hl >= mcw - _SCAN_WINDOW) & (hr >= mcw - _SCAN_WINDOW)
        tight = boundary & (hl >= mcw + _SCAN_WINDOW) & (hr >= mcw + _SCAN_WINDOW)
        return np.where(loose, gain, -np.inf), np.where(tight, gain, -np.inf)

    gain_left, tight_left = scan_gain(gl_p + g_miss, hl_p + h_miss, gr_p, hr_p)
    gain_right, tight_right = scan_gain(gl_p, hl_p, gr_p + g_miss, hr_p + h_miss)
    best_scan = max(float(gain_left.max()), float(gain_right.max()))
    if best_scan == -np.inf or best_scan <= -_SCAN_WINDOW:
        return None

    # The window bottom is anchored to the best surely-feasible candidate;
    # borderline-feasibility candidates above it are re-checked exactly. When
    # every candidate is borderline, all of them get the exact treatment.
    best_tight = max(float(tight_left.max()), float(tight_right.max()))
    if best_tight == -np.inf:
        window = -np.inf
    else:
        window = best_tight - (_SCAN_WINDOW + 1e-9 * abs(best_tight))
    candidates = []  # (feature, threshold, dir_key) with dir_key 0 = default left
    for dir_key, gains in ((0, gain_left), (1, gain_right)):
        for k, f in np.argwhere((gains >= window) & (gains > -np.inf)):
            thr = (xs[k, f] + xs[k + 1, f]) / 2.0
            candidates.append((int(f), float(thr), dir_key))
    candidates.sort()

    best = None
    best_gain = 0.0
    for f, thr, dir_key in candidates:
        col = X[:, f]
        missing = np.isnan(col)
        with np.errstate(invalid="ignore"):
            left = col < thr
        if dir_key == 0:
            left = left | missing
        gain, hl, hr = _partition_gain(g, h, left, lam, gamma)
        if hl < mcw or hr < mcw or gain <= 0.0:
            continue
        if best is None or gain > best_gain:
            best = SplitDecision(f, thr, dir_key == 0, gain)
            best_gain = gain
    return best


def _leaf_weight(g: np.ndarray, h: np.ndarray, lam: float) -> float:
    denom = float(np.sum(h)) + lam
    if denom == 0.0:
        return 0.0
    return -float(np.sum(g)) / denom


def grow_tree(X: np.ndarray, g: np.ndarray, h: np.ndarray, config: TrainConfig) -> TreeNode:
    """Grow one regression tree depth-first against gradients and Hessians."""
    lam = config.lambda_l2

    def build(rows: np.ndarray, depth: int) -> TreeNode:
        if depth >= config.max_depth or rows.size < 2:
            return TreeNode(weight=_leaf_weight(g[rows], h[rows], lam))
        decision = best_split(X[rows], g[rows], h[rows], config)
        if decision is None:
            return TreeNode(weight=_leaf_weight(g[rows], h[rows], lam))
        col = X[rows, decision.feature_index]
        missing = np.isnan(col)
        with np.errstate(invalid="ignore"):
            left = col < decision.threshold
        if decision.default_left:
            left = left | missing
        return TreeNode(
            feature_index=decision.feature_index,
            threshold=decision.threshold,
            default_left=decision.default_left,
            gain=decision.gain,
            left=build(rows[left], depth + 1),
            right=build(rows[~left], depth + 1),
        )

    return build(np.arange(X.shape[0]), 0)


def tree_output(node: TreeNode, X: np.ndarray) -> np.ndarray:
    """Raw leaf weights for every row (learning rate not applied)."""
    out = np.empty(X.shape[0], dtype=np.float64)

    def walk(node: TreeNode, rows: np.ndarray) -> None:
        if node.is_leaf:
            out[rows] = node.weight
            return
        col = X[rows, node.feature_index]
        missing = np.isnan(col)
        with np.errstate(invalid="ignore"):
            left = col < node.threshold
        if node.default_left:
            left = left | missing
        walk(node.left, rows[left])
        walk(node.right, rows[~left])

    walk(node, np.arange(X.shape[0]))
    return out


@dataclass
class BoostModel:
    feature_names: list[str]
    label_names: list[str]
    config: TrainConfig
    ensembles: dict[str, list[TreeNode]]
    manifest: dict = field(default_factory=dict)
    loss_history: dict[str, list[float]] = field(default_factory=dict, repr=False)

    def row_from_values(self, values: dict[str, float | None]) -> np.ndarray:
        row = np.full(len(self.feature_names), np.nan)
        for j, name in enumerate(self.feature_names):
            v = values.get(name)
            if v is not None:
                row[j] = v
        return row


def vectors_to_matrix(rows: list[dict[str, float | None]], feature_names: list[str]) -> np.ndarray:
    X = np.full((len(rows), len(feature_names)), np.nan)
    for i, values in enumerate(rows):
        for j, name in enumerate(feature_names):
            v = values.get(name)
            if v is not None:
                X[i, j] = v
    return X


def train(
    X: np.ndarray,
    Y: np.ndarray,
    feature_names: list[str],
    label_names: list[str],
    config: TrainConfig,
    manifest: dict | None = None,
    track_loss: bool = False,
) -> BoostModel:
    """Fit one logistic ensemble per label column; deterministic given inputs."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ShapeMismatch(f"{X.shape[0]} feature rows vs {Y.shape[0]} label rows")
    if X.shape[1] != len(feature_names):
        raise ShapeMismatch("feature_names length does not match matrix width")
    if Y.shape[1] != len(label_names):
        raise ShapeMismatch("label_names length does not match label columns")

    model = BoostModel(
        feature_names=list(feature_names),
        label_names=list(label_names),
        config=config,
        ensembles={},
        manifest=dict(manifest or {}),
    )
    for li, label in enumerate(label_names):
        y = Y[:, li]
        if y.min() == y.max():
            log.warning("label %r is degenerate (all %g); training constant model", label, y[0] if len(y) else 0)
            model.ensembles[label] = []
            continue
        margins = np.full(X.shape[0], config.base_margin, dtype=np.float64)
        trees: list[TreeNode] = []
        losses: list[float] = []
        for _ in range(config.n_rounds):
            g, h = grad_hess_logistic(margins, y)
            tree = grow_tree(X, g, h, config)
            trees.append(tree)
            margins = margins + config.learning_rate * tree_output(tree, X)
            if track_loss:
                losses.append(logistic_loss(margins, y))
        model.ensembles[label] = trees
        if track_loss:
            model.loss_history[label] = losses
    return model


def predict_margins(model: BoostModel, X: np.ndarray) -> np.ndarray:
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != len(model.feature_names):
        raise UnknownFeatureSpace(
            f"matrix width {X.shape[1]} does not match model features {len(model.feature_names)}"
        )
    margins = np.full((X.shape[0], len(model.label_names)), model.config.base_margin)
    for li, label in enumerate(model.label_names):
        for tree in model.ensembles[label]:
            margins[:, li] += model.config.learning_rate * tree_output(tree, X)
    return margins


def predict_proba_matrix(model: BoostModel, X: np.ndarray) -> np.ndarray:
    p = sigmoid(predict_margins(model, X))
    return np.clip(p, _P_EPS, 1.0 - _P_EPS)


def predict_proba(model: BoostModel, values: dict[str, float | None]) -> dict[str, float]:
    """Per-label probability for one feature mapping; absent keys are MISSING."""
    row = model.row_from_values(values)
    probs = predict_proba_matrix(model, row[None, :])[0]
    return {label: float(probs[i]) for i, label in enumerate(model.label_names)}


def feature_importance(model: BoostModel) -> dict[str, float]:
    """Total realized split gain per feature across all labels' trees."""
    totals = dict.fromkeys(model.feature_names, 0.0)

    def walk(node: TreeNode) -> None:
        if node.is_leaf:
            return
        totals[model.feature_names[node.feature_index]] += node.gain
        walk(node.left)
        walk(node.right)

    for trees in model.ensembles.values():
        for tree in trees:
            walk(tree)
    return totals


def save_model(model: BoostModel, path) -> None:
    payload = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "config": model.config.to_dict(),
        "feature_names": model.feature_names,
        "label_names": model.label_names,
        "manifest": model.manifest,
        "ensembles": [
            {"label": label, "trees": [t.to_dict() for t in model.ensembles[label]]}
            for label in model.label_names
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def model_to_bytes(model: BoostModel) -> bytes:
    import io

    buf = io.StringIO()
    json.dump(
        {
            "schema_version": MODEL_SCHEMA_VERSION,
            "config": model.config.to_dict(),
            "feature_names": model.feature_names,
            "label_names": model.label_names,
            "manifest": model.manifest,
            "ensembles": [
                {"label": label, "trees": [t.to_dict() for t in model.ensembles[label]]}
                for label in model.label_names
            ],
        },
        buf,
    )
    return buf.getvalue().encode("utf-8")


def load_model(path, expected_digests: dict | None = None) -> BoostModel:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot load model from {path}: {exc}") from exc
    if payload.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise VersionMismatch(f"model schema {payload.get('schema_version')} unsupported")
    manifest = payload.get("manifest", {})
    for key, expected in (expected_digests or {}).items():
        if manifest.get(key) != expected:
            raise DigestMismatch(f"manifest {key} is {manifest.get(key)!r}, expected {expected!r}")
    return BoostModel(
        feature_names=payload["feature_names"],
        label_names=payload["label_names"],
        config=TrainConfig.from_dict(payload["config"]),
        ensembles={
            ens["label"]: [TreeNode.from_dict(t) for t in ens["trees"]]
            for ens in payload["ensembles"]
        },
        manifest=manifest,
    )
