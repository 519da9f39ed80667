"""Pre-training, fine-tuning, prediction, and persistence for Sent-e-Med.

The embedding table is a frozen input: pre-training asserts bit-identity of
the table before and after, and saved models carry the table fingerprint so a
model can never silently be applied on top of different vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..cohort import CohortSample
from ..errors import (
    EmptyAfterSkips,
    EmptyInput,
    FingerprintMismatch,
    NonFinite,
    SingleClass,
)
from ..evaluate import PredictionSet
from ..model import PatientRecord
from .autodiff import Tensor, _stable_sigmoid, backward, parameter, zero_grads
from .embeddings import EmbeddingTable
from .encoder import (
    EncoderConfig,
    TokenSeq,
    classify_logits,
    classify_loss,
    encode_patient,
    encode_visits,
    init_params,
    make_batch,
    mask_for_mlm,
    mlm_loss,
    next_visit_loss,
)

VALID_OBJECTIVES = ("mlm", "nextvisit")
MODEL_FORMAT = "sentemed-v1"


class AdamW:
    """Adam with decoupled weight decay; decay applies to matrices only."""

    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, weight_decay: float = 0.01,
                 eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.weight_decay = weight_decay
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(t.value) for name, t in params.items()}
        self._v = {name: np.zeros_like(t.value) for name, t in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in sorted(self.params):
            tensor = self.params[name]
            grad = tensor.grad
            if grad is None:
                continue
            if not np.all(np.isfinite(grad)):
                raise NonFinite(f"non-finite gradient for parameter {name!r}")
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and tensor.value.ndim >= 2:
                update = update + self.weight_decay * tensor.value
            tensor.value -= self.lr * update


@dataclass(eq=False)
class SentEMedModel:
    """A trained encoder: config, parameters, vocabulary, and provenance."""

    config: EncoderConfig
    mode: str                            # "frozen" | "learned"
    vocab: tuple[tuple[str, str], ...]   # (system, code) rows of the table
    params: dict[str, Tensor]
    table_fingerprint: str
    objectives: tuple[str, ...] = ()
    name: str = "sentemed"

    def copy(self) -> "SentEMedModel":
        return SentEMedModel(
            self.config, self.mode, self.vocab,
            {k: parameter(t.value.copy()) for k, t in self.params.items()},
            self.table_fingerprint, self.objectives, self.name)


@dataclass(eq=False)
class _PretrainItem:
    full: TokenSeq
    prefix: TokenSeq | None
    target_rows: np.ndarray | None


def _prepare_pretrain(records: list[PatientRecord], table: EmbeddingTable,
                      cfg: EncoderConfig, want_nextvisit: bool
                      ) -> tuple[list[_PretrainItem], int]:
    items: list[_PretrainItem] = []
    unencodable = 0
    for rec in records:
        try:
            full = encode_visits(rec.patient_id, rec.visits, table, cfg)
        except EmptyAfterSkips:
            unencodable += 1
            continue
        prefix = None
        target_rows = None
        if want_nextvisit and len(rec.visits) >= 2:
            rows = sorted({r for code in rec.visits[-1].codes
                           if (r := table.row(code)) is not None})
            if rows:
                try:
                    prefix = encode_visits(rec.patient_id, rec.visits[:-1],
                                           table, cfg)
                    target_rows = np.array(rows, dtype=np.int64)
                except EmptyAfterSkips:
                    prefix = None
        items.append(_PretrainItem(full, prefix, target_rows))
    return items, unencodable


def pretrain(
    records: list[PatientRecord],
    table: EmbeddingTable,
    cfg: EncoderConfig,
    objectives: tuple[str, ...] = ("mlm",),
    epochs: int = 1,
    batch_size: int = 8,
    seed: int = 0,
    mode: str = "frozen",
) -> tuple[SentEMedModel, dict[str, list[float]]]:
    """Self-supervised training; returns the model and per-epoch loss curves.

    With zero epochs the returned parameters are exactly the initialization.
    """
    objectives = tuple(objectives)
    if not objectives or any(o not in VALID_OBJECTIVES for o in objectives):
        raise ValueError(f"objectives must be a non-empty subset of {VALID_OBJECTIVES}")
    fingerprint_before = table.fingerprint()
    items, _ = _prepare_pretrain(records, table, cfg, "nextvisit" in objectives)
    if not items:
        raise EmptyInput("no patient could be encoded against the table")

    params = init_params(cfg, len(table.codes), seed=seed, mode=mode)
    optimizer = AdamW(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.weight_decay)
    rng = np.random.default_rng(seed)
    curves: dict[str, list[float]] = {o: [] for o in objectives}
    vocab_size = len(table.codes)

    for _ in range(epochs):
        perm = rng.permutation(len(items))
        sums = {o: 0.0 for o in objectives}
        counts = {o: 0 for o in objectives}
        for start in range(0, len(items), batch_size):
            chunk = [items[j] for j in perm[start:start + batch_size]]
            loss: Tensor | None = None
            if "mlm" in objectives:
                masks = [mask_for_mlm(it.full, rng, cfg.mask_rate) for it in chunk]
                batch = make_batch([it.full for it in chunk], masks)
                part = mlm_loss(params, table, batch, cfg, mode)
                sums["mlm"] += float(part.value)
                counts["mlm"] += 1
                loss = part
            if "nextvisit" in objectives:
                nv_items = [it for it in chunk if it.prefix is not None]
                if nv_items:
                    nv_batch = make_batch([it.prefix for it in nv_items])
                    multihot = np.zeros((len(nv_items), vocab_size))
                    for i, it in enumerate(nv_items):
                        multihot[i, it.target_rows] = 1.0
                    part = next_visit_loss(params, table, nv_batch, multihot,
                                           cfg, mode)
                    sums["nextvisit"] += float(part.value)
                    counts["nextvisit"] += 1
                    loss = part if loss is None else loss + part
            if loss is None:
                continue
            zero_grads(list(params.values()))
            backward(loss)
            optimizer.step()
        for o in objectives:
            if counts[o]:
                curves[o].append(sums[o] / counts[o])

    if table.fingerprint() != fingerprint_before:
        raise FingerprintMismatch(
            "embedding table changed during pre-training; it must stay frozen")
    model = SentEMedModel(cfg, mode, table.codes, params, fingerprint_before,
                          objectives)
    return model, curves


def _check_table(model: SentEMedModel, table: EmbeddingTable) -> None:
    if model.table_fingerprint != table.fingerprint():
        raise FingerprintMismatch(
            "embedding table fingerprint does not match the one the model "
            "was trained with")


def finetune(
    model: SentEMedModel,
    table: EmbeddingTable,
    samples: list[CohortSample],
    epochs: int = 5,
    batch_size: int = 8,
    seed: int = 0,
    lr: float | None = None,
) -> tuple[SentEMedModel, list[float]]:
    """Supervised classification training; returns a new model plus the
    per-epoch mean loss curve. The input model is left untouched."""
    _check_table(model, table)
    cfg = model.config
    encoded: list[tuple[TokenSeq, int]] = []
    for sample in samples:
        try:
            encoded.append((encode_patient(sample, table, cfg), sample.label))
        except EmptyAfterSkips:
            continue
    if not encoded:
        raise EmptyInput("no sample could be encoded against the table")
    labels_all = np.array([lab for _, lab in encoded])
    if labels_all.min() == labels_all.max():
        raise SingleClass("fine-tuning requires both case and control samples")

    tuned = model.copy()
    optimizer = AdamW(tuned.params, lr if lr is not None else cfg.lr,
                      cfg.beta1, cfg.beta2, cfg.weight_decay)
    rng = np.random.default_rng(seed)
    curve: list[float] = []
    for _ in range(epochs):
        perm = rng.permutation(len(encoded))
        total = 0.0
        batches = 0
        for start in range(0, len(encoded), batch_size):
            chunk = [encoded[j] for j in perm[start:start + batch_size]]
            batch = make_batch([seq for seq, _ in chunk])
            labels = np.array([lab for _, lab in chunk], dtype=np.float64)
            loss = classify_loss(tuned.params, table, batch, labels, cfg,
                                 tuned.mode)
            total += float(loss.value)
            batches += 1
            zero_grads(list(tuned.params.values()))
            backward(loss)
            optimizer.step()
        curve.append(total / batches)
    return tuned, curve


def predict_risk(model: SentEMedModel, table: EmbeddingTable,
                 sample: CohortSample) -> float:
    """Risk probability for one sample; EmptyAfterSkips propagates."""
    _check_table(model, table)
    seq = encode_patient(sample, table, model.config)
    batch = make_batch([seq])
    logits = classify_logits(model.params, table, batch, model.config, model.mode)
    return float(_stable_sigmoid(logits.value)[0, 0])


def predict_cohort(model: SentEMedModel, table: EmbeddingTable,
                   samples: list[CohortSample],
                   batch_size: int = 64) -> PredictionSet:
    """Scores for a list of samples, aligned with their labels."""
    _check_table(model, table)
    if not samples:
        raise EmptyInput("no samples to score")
    seqs = [encode_patient(s, table, model.config) for s in samples]
    scores = np.empty(len(samples))
    for start in range(0, len(seqs), batch_size):
        batch = make_batch(seqs[start:start + batch_size])
        logits = classify_logits(model.params, table, batch, model.config,
                                 model.mode)
        scores[start:start + len(batch.ids)] = _stable_sigmoid(logits.value)[:, 0]
    return PredictionSet(
        patient_ids=[s.patient_id for s in samples],
        labels=np.array([s.label for s in samples], dtype=np.int64),
        scores=scores,
        model=model.name,
    )


# --- persistence -------------------------------------------------------------

def save_model(model: SentEMedModel, path: str) -> None:
    meta = {
        "format": MODEL_FORMAT,
        "config": model.config.to_dict(),
        "mode": model.mode,
        "objectives": list(model.objectives),
        "table_fingerprint": model.table_fingerprint,
        "vocab": [[system, code] for system, code in model.vocab],
        "name": model.name,
    }
    arrays = {f"param.{name}": t.value for name, t in model.params.items()}
    np.savez(path, meta=np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)


def load_model(path: str, table: EmbeddingTable | None = None) -> SentEMedModel:
    with np.load(path, allow_pickle=False) as data:
        if "meta" not in data.files:
            raise ValueError(f"{path} is not a saved model (no metadata entry)")
        meta = json.loads(bytes(data["meta"]).decode("utf-8"))
        if meta.get("format") != MODEL_FORMAT:
            raise ValueError(f"unrecognized model format in {path}")
        params = {key[len("param."):]: parameter(np.array(data[key]))
                  for key in data.files if key.startswith("param.")}
    model = SentEMedModel(
        config=EncoderConfig(**meta["config"]),
        mode=meta["mode"],
        vocab=tuple((s, c) for s, c in meta["vocab"]),
        params=params,
        table_fingerprint=meta["table_fingerprint"],
        objectives=tuple(meta["objectives"]),
        name=meta.get("name", "sentemed"),
    )
    if table is not None:
        _check_table(model, table)
    return model
