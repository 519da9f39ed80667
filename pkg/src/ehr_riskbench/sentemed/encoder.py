"""Tokenization and the pre-norm transformer encoder over frozen embeddings.

Input embedding for a token is the frozen sentence vector of its code plus a
learned visit-slot vector; there are no positional encodings and no [CLS] or
[SEP] tokens. MLM masking replaces the sentence component with a learned mask
vector (the visit vector is still added). Pooling is the mean over non-padded
positions. Tied output heads score hidden states against the embedding matrix
scaled by 1/sqrt(d) plus a per-code bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..cohort import CohortSample
from ..errors import DegenerateBatch, EmptyAfterSkips, NonFinite
from ..model import Visit
from . import autodiff as ad
from .autodiff import Tensor, constant, parameter
from .embeddings import EmbeddingTable


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 4
    heads: int = 4
    d_model: int = 384
    ff_dim: int = 64
    max_seq: int = 128
    max_visits: int = 64
    mask_rate: float = 0.15
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01

    def validate(self) -> None:
        if self.d_model % self.heads != 0:
            raise ValueError("d_model must be divisible by heads")
        if self.max_seq < 1 or self.max_visits < 1:
            raise ValueError("max_seq and max_visits must be >= 1")
        if not 0.0 < self.mask_rate < 1.0:
            raise ValueError("mask_rate must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "layers", "heads", "d_model", "ff_dim", "max_seq", "max_visits",
            "mask_rate", "lr", "beta1", "beta2", "weight_decay")}


@dataclass(eq=False)
class TokenSeq:
    """A patient's history as table-row ids with visit slots."""

    patient_id: str
    code_ids: np.ndarray     # (L,) int64 rows into the embedding table
    visit_slots: np.ndarray  # (L,) int64, non-decreasing
    attention_mask: np.ndarray  # (L,) float64, all ones pre-padding
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.code_ids)


def encode_visits(
    patient_id: str,
    visits: tuple[Visit, ...],
    table: EmbeddingTable,
    cfg: EncoderConfig,
) -> TokenSeq:
    """Concatenate codes chronologically, skip unknown codes, truncate to the
    most recent ``max_seq`` tokens, and re-index retained visits."""
    rows: list[int] = []
    ordinals: list[int] = []
    skipped = 0
    for visit in visits:
        for code in visit.codes:
            row = table.row(code)
            if row is None:
                skipped += 1
            else:
                rows.append(row)
                ordinals.append(visit.visit_index)
    if not rows:
        raise EmptyAfterSkips(
            f"patient {patient_id}: no codes found in the embedding table "
            f"({skipped} skipped)")
    rows = rows[-cfg.max_seq:]
    ordinals = ordinals[-cfg.max_seq:]
    slot_of: dict[int, int] = {}
    for ordinal in ordinals:
        if ordinal not in slot_of:
            slot_of[ordinal] = min(len(slot_of), cfg.max_visits - 1)
    slots = np.array([slot_of[o] for o in ordinals], dtype=np.int64)
    return TokenSeq(patient_id, np.array(rows, dtype=np.int64), slots,
                    np.ones(len(rows)), skipped)


def encode_patient(sample: CohortSample, table: EmbeddingTable,
                   cfg: EncoderConfig) -> TokenSeq:
    return encode_visits(sample.patient_id, sample.input_visits, table, cfg)


def mask_for_mlm(
    seq: TokenSeq,
    rng: np.random.Generator,
    mask_rate: float = 0.15,
) -> tuple[np.ndarray, np.ndarray]:
    """Choose max(1, round(rate*len)) positions; returns (positions, targets)."""
    n = max(1, int(math.floor(mask_rate * len(seq) + 0.5)))
    positions = np.sort(rng.choice(len(seq), size=min(n, len(seq)), replace=False))
    return positions, seq.code_ids[positions]


# --- parameters --------------------------------------------------------------

def init_params(cfg: EncoderConfig, vocab_size: int, seed: int = 0,
                mode: str = "frozen") -> dict[str, Tensor]:
    """Gaussian(0, 0.02) weights, unit norms, zero biases and a zero
    classification head (freshly initialized risk probability is exactly 0.5)."""
    cfg.validate()
    if mode not in ("frozen", "learned"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    d, ff = cfg.d_model, cfg.ff_dim

    def gauss(*shape):
        return parameter(rng.standard_normal(shape) * 0.02)

    params: dict[str, Tensor] = {
        "visit_emb": gauss(cfg.max_visits, d),
        "mask_vec": gauss(d),
    }
    for i in range(cfg.layers):
        p = f"l{i}."
        params[p + "ln1.g"] = parameter(np.ones(d))
        params[p + "ln1.b"] = parameter(np.zeros(d))
        for name in ("wq", "wk", "wv", "wo"):
            params[p + name] = gauss(d, d)
        for name in ("bq", "bk", "bv", "bo"):
            params[p + name] = parameter(np.zeros(d))
        params[p + "ln2.g"] = parameter(np.ones(d))
        params[p + "ln2.b"] = parameter(np.zeros(d))
        params[p + "w1"] = gauss(d, ff)
        params[p + "b1"] = parameter(np.zeros(ff))
        params[p + "w2"] = gauss(ff, d)
        params[p + "b2"] = parameter(np.zeros(d))
    params["lnf.g"] = parameter(np.ones(d))
    params["lnf.b"] = parameter(np.zeros(d))
    params["mlm_bias"] = parameter(np.zeros(vocab_size))
    params["nv_bias"] = parameter(np.zeros(vocab_size))
    params["cls.w"] = parameter(np.zeros((d, 1)))
    params["cls.b"] = parameter(np.zeros(1))
    if mode == "learned":
        params["code_emb"] = gauss(vocab_size, d)
    return params


# --- batching ----------------------------------------------------------------

@dataclass(eq=False)
class Batch:
    """Padded stack of token sequences, with optional MLM mask bookkeeping."""

    ids: np.ndarray        # (B, L) int64, 0 at padding
    slots: np.ndarray      # (B, L) int64
    pad: np.ndarray        # (B, L) float64: 1 real token, 0 padding
    mask_sel: np.ndarray   # (B, L) float64: 1 at MLM-masked positions
    mlm_flat_pos: np.ndarray  # (M,) indices into the flattened (B*L)
    mlm_targets: np.ndarray   # (M,) int64 vocab ids

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def make_batch(seqs: list[TokenSeq],
               masks: list[tuple[np.ndarray, np.ndarray]] | None = None) -> Batch:
    if not seqs:
        raise DegenerateBatch("empty batch")
    batch_len = max(len(s) for s in seqs)
    n = len(seqs)
    ids = np.zeros((n, batch_len), dtype=np.int64)
    slots = np.zeros((n, batch_len), dtype=np.int64)
    pad = np.zeros((n, batch_len))
    mask_sel = np.zeros((n, batch_len))
    flat_pos: list[int] = []
    targets: list[int] = []
    for i, seq in enumerate(seqs):
        ids[i, :len(seq)] = seq.code_ids
        slots[i, :len(seq)] = seq.visit_slots
        pad[i, :len(seq)] = 1.0
        if masks is not None:
            positions, t = masks[i]
            mask_sel[i, positions] = 1.0
            flat_pos.extend(i * batch_len + p for p in positions)
            targets.extend(int(x) for x in t)
    return Batch(ids, slots, pad, mask_sel,
                 np.array(flat_pos, dtype=np.int64),
                 np.array(targets, dtype=np.int64))


# --- forward pass ------------------------------------------------------------

def _code_matrix(params: dict[str, Tensor], table: EmbeddingTable, mode: str) -> Tensor:
    if mode == "frozen":
        return constant(table.vectors)
    return params["code_emb"]


def forward(
    params: dict[str, Tensor],
    table: EmbeddingTable,
    batch: Batch,
    cfg: EncoderConfig,
    mode: str = "frozen",
    collect_attention: list | None = None,
) -> tuple[Tensor, Tensor]:
    """Run the encoder; returns (hidden (B, L, d), pooled (B, d)).

    ``collect_attention`` receives one (B, heads, L, L) probability array per
    layer when provided.
    """
    n, batch_len = batch.ids.shape
    d, heads = cfg.d_model, cfg.heads
    head_dim = d // heads
    flat_ids = batch.ids.reshape(-1)

    if mode == "frozen":
        base = constant(table.vectors[flat_ids].reshape(n, batch_len, d))
    else:
        base = ad.reshape(ad.take_rows(params["code_emb"], flat_ids), (n, batch_len, d))
    keep = constant(1.0 - batch.mask_sel[..., None])
    replace = constant(batch.mask_sel[..., None])
    x = base * keep + params["mask_vec"] * replace
    visit = ad.reshape(ad.take_rows(params["visit_emb"], batch.slots.reshape(-1)),
                       (n, batch_len, d))
    x = x + visit

    attn_bias = constant(((batch.pad - 1.0) * 1e9)[:, None, None, :])
    inv_sqrt = 1.0 / math.sqrt(head_dim)

    def split_heads(t: Tensor) -> Tensor:
        return ad.moveaxis(ad.reshape(t, (n, batch_len, heads, head_dim)), 2, 1)

    for i in range(cfg.layers):
        p = f"l{i}."
        a = ad.layer_norm(x, params[p + "ln1.g"], params[p + "ln1.b"])
        q = split_heads(a @ params[p + "wq"] + params[p + "bq"])
        k = split_heads(a @ params[p + "wk"] + params[p + "bk"])
        v = split_heads(a @ params[p + "wv"] + params[p + "bv"])
        scores = (q @ ad.transpose_last(k)) * inv_sqrt + attn_bias
        probs = ad.softmax(scores)
        if collect_attention is not None:
            collect_attention.append(probs.value)
        ctx = ad.reshape(ad.moveaxis(probs @ v, 1, 2), (n, batch_len, d))
        x = x + (ctx @ params[p + "wo"] + params[p + "bo"])
        a2 = ad.layer_norm(x, params[p + "ln2.g"], params[p + "ln2.b"])
        f = ad.gelu(a2 @ params[p + "w1"] + params[p + "b1"]) @ params[p + "w2"]
        x = x + (f + params[p + "b2"])

    hidden = ad.layer_norm(x, params["lnf.g"], params["lnf.b"])
    if not np.all(np.isfinite(hidden.value)):
        raise NonFinite("encoder produced non-finite hidden states")
    weights = constant(batch.pad[..., None])
    recip = constant((1.0 / batch.pad.sum(axis=1))[:, None])
    pooled = ad.tsum(hidden * weights, axis=1) * recip
    return hidden, pooled


# --- losses ------------------------------------------------------------------

def _tied_logits(hidden2d: Tensor, params: dict[str, Tensor],
                 table: EmbeddingTable, cfg: EncoderConfig, mode: str,
                 bias_name: str) -> Tensor:
    matrix = _code_matrix(params, table, mode)
    scale = 1.0 / math.sqrt(cfg.d_model)
    return (hidden2d @ ad.transpose_last(matrix)) * scale + params[bias_name]


def mlm_logits(params: dict[str, Tensor], table: EmbeddingTable, batch: Batch,
               cfg: EncoderConfig, mode: str = "frozen") -> Tensor:
    """(n_masked, vocab) prediction logits at the batch's masked positions."""
    if len(batch.mlm_flat_pos) == 0:
        raise DegenerateBatch("no masked positions in batch")
    hidden, _ = forward(params, table, batch, cfg, mode)
    n, batch_len = batch.ids.shape
    flat = ad.reshape(hidden, (n * batch_len, cfg.d_model))
    at_masked = ad.take_rows(flat, batch.mlm_flat_pos)
    return _tied_logits(at_masked, params, table, cfg, mode, "mlm_bias")


def mlm_loss(params: dict[str, Tensor], table: EmbeddingTable, batch: Batch,
             cfg: EncoderConfig, mode: str = "frozen") -> Tensor:
    return ad.softmax_cross_entropy(
        mlm_logits(params, table, batch, cfg, mode), batch.mlm_targets)


def next_visit_loss(params: dict[str, Tensor], table: EmbeddingTable,
                    batch: Batch, targets_multihot: np.ndarray,
                    cfg: EncoderConfig, mode: str = "frozen") -> Tensor:
    if targets_multihot.sum() == 0:
        raise DegenerateBatch("next-visit targets are empty")
    _, pooled = forward(params, table, batch, cfg, mode)
    logits = _tied_logits(pooled, params, table, cfg, mode, "nv_bias")
    return ad.bce_with_logits(logits, targets_multihot)


def classify_logits(params: dict[str, Tensor], table: EmbeddingTable,
                    batch: Batch, cfg: EncoderConfig,
                    mode: str = "frozen") -> Tensor:
    _, pooled = forward(params, table, batch, cfg, mode)
    return pooled @ params["cls.w"] + params["cls.b"]


def classify_loss(params: dict[str, Tensor], table: EmbeddingTable,
                  batch: Batch, labels: np.ndarray, cfg: EncoderConfig,
                  mode: str = "frozen") -> Tensor:
    logits = classify_logits(params, table, batch, cfg, mode)
    return ad.bce_with_logits(logits, np.asarray(labels, dtype=np.float64)[:, None])
