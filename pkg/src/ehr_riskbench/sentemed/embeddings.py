"""Frozen code-embedding tables and their on-disk text format.

File layout: first line ``#dim=384 count=N encoder=<id>``, then one row per
code: ``system<TAB>code<TAB>f1,f2,...,fD`` (UTF-8, LF). Vectors are frozen:
nothing in this package ever writes to a loaded table, and training asserts
bit-identity via :meth:`EmbeddingTable.fingerprint`.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

import numpy as np

from ..errors import MalformedCode, ParseError
from ..model import CodeSystem, MedicalCode, normalize_code


@dataclass
class EmbeddingTable:
    """Ordered (system, code) keys with one d-dimensional vector per key."""

    codes: tuple[tuple[str, str], ...]  # (system value, normalized code)
    vectors: np.ndarray                 # (N, dim) float64
    encoder_id: str
    skipped_rows: int = 0
    _index: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or len(self.codes) != self.vectors.shape[0]:
            raise ValueError("vectors must be (n_codes, dim)")
        self._index = {key: i for i, key in enumerate(self.codes)}
        if len(self._index) != len(self.codes):
            raise ValueError("duplicate codes in embedding table")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return len(self.codes)

    def __contains__(self, code: MedicalCode) -> bool:
        return (code.system.value, code.normalized) in self._index

    def row(self, code: MedicalCode) -> int | None:
        return self._index.get((code.system.value, code.normalized))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(f"dim={self.dim} encoder={self.encoder_id}\n".encode())
        for system, code in self.codes:
            h.update(f"{system}\t{code}\n".encode())
        h.update(np.ascontiguousarray(self.vectors).tobytes())
        return h.hexdigest()


_HEADER_RE = re.compile(r"^#dim=(\d+) count=(\d+) encoder=(.+)$")


def read_embedding_file(path: str) -> EmbeddingTable:
    """Parse an embedding file; unusable rows are skipped and counted.

    A row is skipped (never fatal) when its code is malformed, its vector has
    the wrong length or non-numeric entries, or its code repeats an earlier
    row. A missing or damaged header, or a count mismatch, is a
    :class:`ParseError`.
    """
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        m = _HEADER_RE.match(header)
        if not m:
            raise ParseError("embedding header must be '#dim=D count=N encoder=ID'",
                             path=path, line=1)
        dim, count, encoder_id = int(m.group(1)), int(m.group(2)), m.group(3)
        codes: list[tuple[str, str]] = []
        vectors: list[np.ndarray] = []
        seen: set[tuple[str, str]] = set()
        skipped = 0
        rows = 0
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            rows += 1
            parts = line.split("\t")
            if len(parts) != 3:
                skipped += 1
                continue
            try:
                system = CodeSystem(parts[0])
                code = normalize_code(system, parts[1])
                vec = np.array([float(x) for x in parts[2].split(",")],
                               dtype=np.float64)
            except (ValueError, MalformedCode):
                skipped += 1
                continue
            key = (system.value, code.normalized)
            if len(vec) != dim or key in seen or not np.all(np.isfinite(vec)):
                skipped += 1
                continue
            seen.add(key)
            codes.append(key)
            vectors.append(vec)
    if rows != count:
        raise ParseError(f"header promises {count} rows, file has {rows}", path=path)
    matrix = np.stack(vectors) if vectors else np.zeros((0, dim))
    return EmbeddingTable(tuple(codes), matrix, encoder_id, skipped_rows=skipped)


def write_embedding_file(table: EmbeddingTable, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#dim={table.dim} count={len(table)} encoder={table.encoder_id}\n")
        for (system, code), vec in zip(table.codes, table.vectors):
            text = ",".join(f"{x:.9g}" for x in vec)
            fh.write(f"{system}\t{code}\t{text}\n")


def random_embedding_table(
    codes: list[MedicalCode] | list[tuple[str, str]],
    dim: int = 384,
    seed: int = 0,
    encoder_id: str = "synthetic-random-v1",
) -> EmbeddingTable:
    """Unit-norm Gaussian vectors, deterministic per seed; fixture helper."""
    keys: list[tuple[str, str]] = []
    for c in codes:
        if isinstance(c, MedicalCode):
            keys.append((c.system.value, c.normalized))
        else:
            keys.append((c[0], c[1]))
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((len(keys), dim))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return EmbeddingTable(tuple(keys), vectors, encoder_id)
