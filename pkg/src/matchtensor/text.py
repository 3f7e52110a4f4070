"""Tokenization, vocabulary, frozen embedding tables and padded id sequences."""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

QUERY_CAP = 8
DOCUMENT_CAP = 200

OOV, PAD, START, END, FIELD_BOUNDARY = "<oov>", "<pad>", "<s>", "</s>", "<field>"
RESERVED = (OOV, PAD, START, END, FIELD_BOUNDARY)


class EmbeddingParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


_APOSTROPHES = {"'", "’", "ʼ"}


def _is_separator(ch: str) -> bool:
    cat = unicodedata.category(ch)
    return ch.isspace() or cat.startswith("P") or cat.startswith("S")


def tokenize(text: str) -> list[str]:
    """Lowercase, drop apostrophes, split on whitespace/punctuation/symbols.

    >>> tokenize("Low-Fat, HIGH carb!")
    ['low', 'fat', 'high', 'carb']
    """
    chars = []
    for ch in text.lower():
        if ch in _APOSTROPHES:
            continue
        chars.append(" " if _is_separator(ch) else ch)
    return "".join(chars).split()


class Vocabulary:
    """Dense token ids; reserved tokens come after the file's tokens."""

    def __init__(self, tokens: Sequence[str]):
        self.itos: list[str] = []
        self.stoi: dict[str, int] = {}
        for tok in list(tokens) + list(RESERVED):
            if tok in self.stoi:
                raise ValueError(f"duplicate token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)
        self.oov_id = self.stoi[OOV]
        self.pad_id = self.stoi[PAD]
        self.start_id = self.stoi[START]
        self.end_id = self.stoi[END]
        self.boundary_id = self.stoi[FIELD_BOUNDARY]
        self.reserved_ids = frozenset(self.stoi[t] for t in RESERVED)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def lookup(self, token: str) -> int:
        return self.stoi.get(token, self.oov_id)

    def ids(self, tokens: Sequence[str], bigrams: bool = False, joiner: str = "_") -> tuple[list[int], list[str]]:
        """Map tokens to ids, optionally merging known bigrams greedily left to right.

        Returns the ids and the surface string of each id (used for OOV exact matching).
        """
        out, surface = [], []
        i = 0
        while i < len(tokens):
            if bigrams and i + 1 < len(tokens):
                pair = tokens[i] + joiner + tokens[i + 1]
                if pair in self.stoi:
                    out.append(self.stoi[pair])
                    surface.append(pair)
                    i += 2
                    continue
            out.append(self.lookup(tokens[i]))
            surface.append(tokens[i])
            i += 1
        return out, surface


@dataclass
class EmbeddingTable:
    """Frozen vocab x dim matrix; the PAD row is all zeros."""

    matrix: np.ndarray
    trainable: bool = False

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def lookup(self, ids: np.ndarray) -> np.ndarray:
        return self.matrix[np.asarray(ids, dtype=np.int64)]


@dataclass
class ProcessedText:
    ids: np.ndarray
    tokens: list[str]
    kind: str  # "query" | "document"
    mask: np.ndarray = field(init=False)

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.mask = np.ones(len(self.ids))

    @property
    def true_length(self) -> int:
        return int(self.mask.sum())

    def __len__(self) -> int:
        return len(self.ids)


def reserved_rows(count: int, dim: int, seed: int, pad_index: int) -> np.ndarray:
    rows = np.random.default_rng(seed).uniform(-0.05, 0.05, size=(count, dim))
    rows[pad_index] = 0.0
    return rows


def build_table(vocab_tokens: Sequence[str], vectors: np.ndarray, seed: int = 0) -> tuple[Vocabulary, EmbeddingTable]:
    vocab = Vocabulary(vocab_tokens)
    vectors = np.asarray(vectors, dtype=np.float64)
    extra = reserved_rows(len(RESERVED), vectors.shape[1], seed, RESERVED.index(PAD))
    return vocab, EmbeddingTable(np.vstack([vectors, extra]))


def load_embeddings(path: str | Path, seed: int = 0) -> tuple[Vocabulary, EmbeddingTable]:
    """Read the textual ``<count> <dim>`` + ``token v1 .. vdim`` format."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise EmbeddingParseError("header must be '<vocab_size> <dim>'", 1)
        count, dim = int(header[0]), int(header[1])
        if dim < 1:
            raise EmbeddingParseError("dimension must be positive", 1)
        tokens: list[str] = []
        seen: dict[str, int] = {}
        rows = np.empty((count, dim))
        lineno = 1
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split()
            if len(parts) != dim + 1:
                raise EmbeddingParseError(f"expected {dim + 1} columns, found {len(parts)}", lineno)
            tok = parts[0]
            if tok in seen:
                raise EmbeddingParseError(f"duplicate token {tok!r} (first on line {seen[tok]})", lineno)
            if tok in RESERVED:
                raise EmbeddingParseError(f"token {tok!r} collides with a reserved token", lineno)
            if len(tokens) >= count:
                raise EmbeddingParseError(f"more rows than the declared {count}", lineno)
            try:
                rows[len(tokens)] = [float(v) for v in parts[1:]]
            except ValueError:
                raise EmbeddingParseError("non-numeric vector entry", lineno) from None
            seen[tok] = lineno
            tokens.append(tok)
        if len(tokens) != count:
            raise EmbeddingParseError(f"header declares {count} tokens but file has {len(tokens)}", lineno)
    return build_table(tokens, rows, seed=seed)


def save_embeddings(path: str | Path, tokens: Sequence[str], vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(tokens)} {vectors.shape[1]}\n")
        for tok, vec in zip(tokens, vectors):
            fh.write(tok + " " + " ".join(f"{v:.8g}" for v in vec) + "\n")


def process_query(text: str, vocab: Vocabulary, cap: int = QUERY_CAP, bigrams: bool = False) -> ProcessedText:
    ids, surface = vocab.ids(tokenize(text), bigrams=bigrams)
    return ProcessedText(ids[:cap], surface[:cap], "query")


def assemble_document(
    fields: Mapping[str, str] | Sequence[tuple[str, str]],
    vocab: Vocabulary,
    cap: int = DOCUMENT_CAP,
    bigrams: bool = False,
) -> ProcessedText:
    """START, field tokens separated by FIELD_BOUNDARY, END; empty fields are skipped."""
    items = list(fields.items()) if isinstance(fields, Mapping) else list(fields)
    if not items:
        raise ValueError("a document needs at least one field")
    ids, surface = [vocab.start_id], [START]
    first = True
    for _, text in items:
        fid, fsurf = vocab.ids(tokenize(text or ""), bigrams=bigrams)
        if not fid:
            continue
        if not first:
            ids.append(vocab.boundary_id)
            surface.append(FIELD_BOUNDARY)
        ids.extend(fid)
        surface.extend(fsurf)
        first = False
    ids.append(vocab.end_id)
    surface.append(END)
    return ProcessedText(ids[:cap], surface[:cap], "document")


def pad_batch(texts: Sequence[ProcessedText], pad_id: int, length: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
    """Stack texts into (B, L) id and mask arrays, right-padding with ``pad_id``."""
    n = max(len(t) for t in texts) if length is None else length
    ids = np.full((len(texts), n), pad_id, dtype=np.int64)
    mask = np.zeros((len(texts), n))
    for r, t in enumerate(texts):
        k = min(len(t), n)
        ids[r, :k] = t.ids[:k]
        mask[r, :k] = 1.0
    return ids, mask
