"""Classical baselines over multi-hot diagnosis features.

Feature selection keeps the top 10% most frequent codes among positive
training histories (document frequency at the patient level). Models are a
class-weighted L2 logistic regression trained by full-batch gradient descent
with backtracking, and a balanced random forest (per-tree balanced bootstrap,
Gini splits over binary bits).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cohort import CohortSample
from .errors import NoPositives, NonFinite, ParseError, SingleClass
from .evaluate import PredictionSet
from .model import CodeSystem


# --- feature spec ------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSpec:
    """Ordered predictor codes plus a fingerprint of the split they came from."""

    codes: tuple[tuple[str, str], ...]  # (system value, normalized code)
    source_fingerprint: str

    def __len__(self) -> int:
        return len(self.codes)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.source_fingerprint.encode())
        for system, code in self.codes:
            h.update(f"{system}\t{code}\n".encode())
        return h.hexdigest()


def _history_codes(sample: CohortSample) -> set[tuple[str, str]]:
    return {(code.system.value, code.normalized)
            for visit in sample.input_visits for code in visit.codes}


def split_fingerprint(patient_ids: list[str]) -> str:
    h = hashlib.sha256()
    for pid in sorted(patient_ids):
        h.update(pid.encode())
        h.update(b"\n")
    return h.hexdigest()[:16]


def select_features(train_samples: list[CohortSample]) -> FeatureSpec:
    """Top ceil(10%) codes by document frequency among positives.

    Ties break on ascending code text so the spec is deterministic.
    """
    positives = [s for s in train_samples if s.label == 1]
    if not positives:
        raise NoPositives("feature selection needs at least one positive sample")
    df: dict[tuple[str, str], int] = {}
    for sample in positives:
        for key in _history_codes(sample):
            df[key] = df.get(key, 0) + 1
    k = math.ceil(0.10 * len(df))
    ordered = sorted(df, key=lambda c: (-df[c], c[1], c[0]))
    return FeatureSpec(tuple(ordered[:k]),
                       split_fingerprint([s.patient_id for s in train_samples]))


def featurize(sample: CohortSample, spec: FeatureSpec) -> np.ndarray:
    """0/1 bit per spec code: set membership over the whole input history."""
    present = _history_codes(sample)
    return np.array([1.0 if key in present else 0.0 for key in spec.codes])


def featurize_cohort(samples: list[CohortSample], spec: FeatureSpec) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([featurize(s, spec) for s in samples]) if samples else np.zeros((0, len(spec)))
    y = np.array([s.label for s in samples], dtype=np.float64)
    return x, y


# --- logistic regression -----------------------------------------------------

@dataclass(frozen=True)
class LogregConfig:
    l2: float = 1e-2
    step: float = 0.1
    iterations: int = 500
    class_weight: str = "balanced"  # inverse class frequency


@dataclass
class LinearModel:
    weights: np.ndarray
    intercept: float
    config: LogregConfig
    loss_curve: list[float] = field(default_factory=list)


def _class_weights(y: np.ndarray, mode: str) -> np.ndarray:
    if mode == "none":
        return np.ones_like(y)
    n = len(y)
    n_pos = y.sum()
    n_neg = n - n_pos
    w = np.where(y == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))
    return w


def logreg_loss_grad(
    weights: np.ndarray,
    intercept: float,
    x: np.ndarray,
    y: np.ndarray,
    sample_weights: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, float]:
    """Weighted logistic loss with L2 on weights only; stable log1p form."""
    z = x @ weights + intercept
    # log(1 + e^z) - y z, computed without overflow
    per = np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))
    loss = float(np.mean(sample_weights * per) + 0.5 * l2 * weights @ weights)
    residual = sample_weights * (1.0 / (1.0 + np.exp(-z)) - y)
    grad_w = x.T @ residual / len(y) + l2 * weights
    grad_b = float(np.mean(residual))
    return loss, grad_w, grad_b


def train_logreg(x: np.ndarray, y: np.ndarray, cfg: LogregConfig = LogregConfig()) -> LinearModel:
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y) or len(y) < 2:
        raise ValueError("need matched X, y with at least two rows")
    if y.min() == y.max():
        raise SingleClass("logistic regression needs both classes")
    sw = _class_weights(y, cfg.class_weight)
    w = np.zeros(x.shape[1])
    b = 0.0
    step = cfg.step
    loss, gw, gb = logreg_loss_grad(w, b, x, y, sw, cfg.l2)
    curve = [loss]
    for _ in range(cfg.iterations):
        trial = step
        for _halving in range(60):
            w2 = w - trial * gw
            b2 = b - trial * gb
            loss2, gw2, gb2 = logreg_loss_grad(w2, b2, x, y, sw, cfg.l2)
            if loss2 <= loss:
                break
            trial *= 0.5
        else:
            break  # no decreasing step found; converged to precision
        w, b, loss, gw, gb, step = w2, b2, loss2, gw2, gb2, trial
        curve.append(loss)
        if not np.isfinite(loss):
            raise NonFinite("logistic loss diverged")
    if not (np.all(np.isfinite(w)) and np.isfinite(b)):
        raise NonFinite("logistic weights are not finite")
    return LinearModel(w, b, cfg, curve)


def predict_logreg(model: LinearModel, x: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(x) @ model.weights + model.intercept
    return 1.0 / (1.0 + np.exp(-z))


# --- balanced random forest --------------------------------------------------

@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 8
    seed: int = 0


@dataclass
class ForestModel:
    trees: list[dict]
    config: ForestConfig
    n_features: int


def _gini(y: np.ndarray) -> float:
    if len(y) == 0:
        return 0.0
    p = y.mean()
    return 2.0 * p * (1.0 - p)


def _grow_tree(x: np.ndarray, y: np.ndarray, idx: np.ndarray, depth: int,
               max_depth: int, rng: np.random.Generator) -> dict:
    node_y = y[idx]
    leaf = {"leaf": float(node_y.mean())}
    if depth >= max_depth or len(idx) < 2 or node_y.min() == node_y.max():
        return leaf
    n_features = x.shape[1]
    k = max(1, math.isqrt(n_features))
    candidates = np.sort(rng.choice(n_features, size=k, replace=False))
    parent = _gini(node_y)
    best_gain = 1e-12
    best_feature = -1
    for f in candidates:
        mask = x[idx, f] == 1.0
        n_right = int(mask.sum())
        n_left = len(idx) - n_right
        if n_right == 0 or n_left == 0:
            continue
        weighted = (n_left * _gini(node_y[~mask]) + n_right * _gini(node_y[mask])) / len(idx)
        gain = parent - weighted
        if gain > best_gain:
            best_gain = gain
            best_feature = int(f)
    if best_feature < 0:
        return leaf
    mask = x[idx, best_feature] == 1.0
    return {
        "feature": best_feature,
        "left": _grow_tree(x, y, idx[~mask], depth + 1, max_depth, rng),
        "right": _grow_tree(x, y, idx[mask], depth + 1, max_depth, rng),
    }


def train_balanced_rf(x: np.ndarray, y: np.ndarray, cfg: ForestConfig = ForestConfig()) -> ForestModel:
    y = np.asarray(y, dtype=np.float64)
    if y.min() == y.max():
        raise SingleClass("balanced random forest needs both classes")
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    m = len(pos)
    trees = []
    for t in range(cfg.n_trees):
        rng = np.random.default_rng(cfg.seed + t)
        sample = np.concatenate([rng.choice(pos, size=m, replace=True),
                                 rng.choice(neg, size=m, replace=True)])
        trees.append(_grow_tree(x, y, sample, 0, cfg.max_depth, rng))
    return ForestModel(trees, cfg, x.shape[1])


def _tree_predict(tree: dict, row: np.ndarray) -> float:
    node = tree
    while "leaf" not in node:
        node = node["right"] if row[node["feature"]] == 1.0 else node["left"]
    return node["leaf"]


def predict_rf(model: ForestModel, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    out = np.zeros(len(x))
    for i, row in enumerate(x):
        out[i] = sum(_tree_predict(t, row) for t in model.trees) / len(model.trees)
    return out


# --- persistence -------------------------------------------------------------

@dataclass
class TrainedBaseline:
    model_type: str  # "logreg" | "brf"
    task: str
    spec: FeatureSpec
    linear: LinearModel | None = None
    forest: ForestModel | None = None

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.model_type == "logreg":
            return predict_logreg(self.linear, x)
        return predict_rf(self.forest, x)

    def predict_cohort(self, samples: list[CohortSample]) -> PredictionSet:
        x, y = featurize_cohort(samples, self.spec)
        scores = self.predict(x) if len(samples) else np.zeros(0)
        return PredictionSet([s.patient_id for s in samples], y.astype(np.int64),
                             scores, model=self.model_type)


def train_baseline(model_type: str, task: str, train_samples: list[CohortSample],
                   logreg_cfg: LogregConfig = LogregConfig(),
                   forest_cfg: ForestConfig = ForestConfig()) -> TrainedBaseline:
    spec = select_features(train_samples)
    x, y = featurize_cohort(train_samples, spec)
    if model_type == "logreg":
        return TrainedBaseline(model_type, task, spec, linear=train_logreg(x, y, logreg_cfg))
    if model_type == "brf":
        return TrainedBaseline(model_type, task, spec, forest=train_balanced_rf(x, y, forest_cfg))
    raise ValueError(f"unknown model type {model_type!r}")


def save_baseline(model: TrainedBaseline, path: str) -> None:
    doc: dict = {
        "model_type": model.model_type,
        "task": model.task,
        "feature_spec": {
            "codes": [list(c) for c in model.spec.codes],
            "source_fingerprint": model.spec.source_fingerprint,
        },
    }
    if model.model_type == "logreg":
        cfg = model.linear.config
        doc["config"] = {"l2": cfg.l2, "step": cfg.step, "iterations": cfg.iterations,
                         "class_weight": cfg.class_weight}
        doc["parameters"] = {"weights": model.linear.weights.tolist(),
                             "intercept": model.linear.intercept}
    else:
        cfg = model.forest.config
        doc["config"] = {"n_trees": cfg.n_trees, "max_depth": cfg.max_depth, "seed": cfg.seed}
        doc["parameters"] = {"trees": model.forest.trees,
                             "n_features": model.forest.n_features}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_baseline(path: str) -> TrainedBaseline:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        spec = FeatureSpec(tuple((s, c) for s, c in doc["feature_spec"]["codes"]),
                           doc["feature_spec"]["source_fingerprint"])
        model_type = doc["model_type"]
        task = doc["task"]
        cfg = doc["config"]
        params = doc["parameters"]
        if model_type == "logreg":
            linear = LinearModel(np.array(params["weights"], dtype=np.float64),
                                 float(params["intercept"]),
                                 LogregConfig(cfg["l2"], cfg["step"], cfg["iterations"],
                                              cfg["class_weight"]))
            return TrainedBaseline(model_type, task, spec, linear=linear)
        if model_type == "brf":
            forest = ForestModel(params["trees"],
                                 ForestConfig(cfg["n_trees"], cfg["max_depth"], cfg["seed"]),
                                 int(params["n_features"]))
            return TrainedBaseline(model_type, task, spec, forest=forest)
        raise KeyError(f"model_type {model_type!r}")
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad model file: {exc}", path=path) from exc


# re-export for callers that featurize against catalog systems
__all__ = [
    "FeatureSpec", "LogregConfig", "LinearModel", "ForestConfig", "ForestModel",
    "TrainedBaseline", "select_features", "featurize", "featurize_cohort",
    "train_logreg", "predict_logreg", "logreg_loss_grad",
    "train_balanced_rf", "predict_rf", "train_baseline",
    "save_baseline", "load_baseline", "split_fingerprint", "CodeSystem",
]
