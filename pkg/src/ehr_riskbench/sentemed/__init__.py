"""Frozen-sentence-embedding transformer encoder with hand-rolled gradients."""

from .embeddings import (
    EmbeddingTable, random_embedding_table, read_embedding_file,
    write_embedding_file,
)
from .encoder import EncoderConfig, TokenSeq, encode_patient, mask_for_mlm
from .training import (
    SentEMedModel, finetune, load_model, predict_cohort, predict_risk,
    pretrain, save_model,
)

__all__ = [
    "EmbeddingTable", "random_embedding_table", "read_embedding_file",
    "write_embedding_file", "EncoderConfig", "TokenSeq", "encode_patient",
    "mask_for_mlm", "SentEMedModel", "pretrain", "finetune", "predict_risk",
    "predict_cohort", "save_model", "load_model",
]
