"""Triplet datasets: the tab-separated file format and seeded synthetic tasks."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .metrics import RelevanceGrade
from .text import save_embeddings

SPLITS = ("train", "validation", "test")
FIELDS = ("title", "author", "body")
TASKS = ("exact_match", "order_sensitive", "semantic")


class DatasetError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class TripletRecord:
    query: str
    fields: dict
    grade: RelevanceGrade

    def __post_init__(self):
        if not self.query.strip():
            raise DatasetError("empty query")
        if not any((v or "").strip() for v in self.fields.values()):
            raise DatasetError(f"document for query {self.query!r} has no non-empty field")

    @property
    def text(self) -> str:
        return " ".join(self.fields.get(f, "") for f in FIELDS)


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def __post_init__(self):
        self.check_disjoint()

    def check_disjoint(self) -> None:
        owner: dict[str, str] = {}
        for name in SPLITS:
            for rec in getattr(self, name):
                prev = owner.setdefault(rec.query, name)
                if prev != name:
                    raise DatasetError(f"query {rec.query!r} appears in both {prev} and {name}")

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def groups(self, name: str) -> dict[str, list]:
        out: dict[str, list] = {}
        for rec in self.split(name):
            out.setdefault(rec.query, []).append(rec)
        return out


def _clean(text: str) -> str:
    return " ".join(str(text).split())


def save_dataset(path: str | Path, data: DatasetSplit) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name in SPLITS:
            for rec in data.split(name):
                cols = [name, _clean(rec.query), rec.grade.name] + [_clean(rec.fields.get(f, "")) for f in FIELDS]
                fh.write("\t".join(cols) + "\n")


def load_dataset(path: str | Path) -> DatasetSplit:
    """Parse ``split, query, grade, title, author, body`` tab-separated lines."""
    parts: dict[str, list] = {s: [] for s in SPLITS}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 6:
                raise DatasetError(f"expected 6 tab-separated columns, found {len(cols)}", lineno)
            split, query, grade = cols[0], cols[1], cols[2]
            if split not in parts:
                raise DatasetError(f"unknown split {split!r}", lineno)
            try:
                g = RelevanceGrade[grade.strip().upper()]
            except KeyError:
                raise DatasetError(f"unknown grade {grade!r}", lineno) from None
            try:
                parts[split].append(TripletRecord(query, dict(zip(FIELDS, cols[3:])), g))
            except DatasetError as e:
                raise DatasetError(str(e), lineno) from None
    return DatasetSplit(parts["train"], parts["validation"], parts["test"])


def fingerprint(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Synthetic tasks
# ---------------------------------------------------------------------------


@dataclass
class SyntheticTaskSpec:
    task: str = "order_sensitive"
    n_clusters: int = 60
    cluster_size: int = 8
    n_filler: int = 600
    queries: tuple = (300, 60, 60)  # train, validation, test
    results_per_query: int = 17
    grade_distribution: tuple = (0.10, 0.35, 0.55)  # VITAL, RELEVANT, NONRELEVANT
    query_length: tuple = (2, 6)
    doc_length: tuple = (20, 120)
    embedding_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.results_per_query < 2:
            raise ValueError("results_per_query must be >= 2")
        if self.cluster_size < 2:
            raise ValueError("clusters need at least two members (one for the query, one synonym)")
        if self.query_length[0] < 2 or self.query_length[1] > self.n_clusters // 2:
            raise ValueError("query length must be >= 2 and leave unused clusters for negatives")

    @property
    def vocab_size(self) -> int:
        return self.n_clusters * self.cluster_size + self.n_filler


def grade_counts(n: int, dist: Sequence[float]) -> tuple[int, int, int]:
    vital = int(round(dist[0] * n))
    relevant = int(round(dist[1] * n))
    if vital + relevant == 0:
        relevant = 1
    if vital + relevant >= n:
        relevant = max(n - 1 - vital, 0)
        if vital + relevant == 0:
            vital = 0
            relevant = 1
    return vital, relevant, n - vital - relevant


def _scramble(phrase: list, rng: np.random.Generator) -> list:
    """A reordering that keeps none of the phrase's adjacent in-order pairs."""
    bigrams = set(zip(phrase, phrase[1:]))
    for _ in range(1000):
        cand = [phrase[i] for i in rng.permutation(len(phrase))]
        if not bigrams & set(zip(cand, cand[1:])):
            return cand
    return phrase[::-1]


class _Generator:
    def __init__(self, spec: SyntheticTaskSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        s = spec
        self.content = [[f"k{c:03d}v{j}" for j in range(s.cluster_size)] for c in range(s.n_clusters)]
        self.filler = [f"f{i:04d}" for i in range(s.n_filler)]
        self.tokens = [t for cl in self.content for t in cl] + self.filler

    def embeddings(self) -> np.ndarray:
        s, rng = self.spec, self.rng
        d = s.embedding_dim
        centers = rng.normal(0.0, 1.0 / math.sqrt(d), size=(s.n_clusters, d))
        rows = [centers[c] + rng.normal(0.0, 0.25 / math.sqrt(d), size=d)
                for c in range(s.n_clusters) for _ in range(s.cluster_size)]
        rows += list(rng.normal(0.0, 0.3 / math.sqrt(d), size=(s.n_filler, d)))
        return np.asarray(rows)

    def query(self) -> tuple[list[str], list[int]]:
        lo, hi = self.spec.query_length
        n = int(self.rng.integers(lo, hi + 1))
        clusters = [int(c) for c in self.rng.choice(self.spec.n_clusters, size=n, replace=False)]
        return [self.content[c][int(self.rng.integers(self.spec.cluster_size))] for c in clusters], clusters

    def filler_tokens(self, n: int) -> list[str]:
        return [self.filler[i] for i in self.rng.integers(len(self.filler), size=n)]

    def document(self, payload: list[str], in_title: bool, contiguous: bool) -> dict:
        lo, hi = self.spec.doc_length
        total = int(self.rng.integers(lo, hi + 1))
        n_title = int(self.rng.integers(3, 9))
        n_author = int(self.rng.integers(1, 3))
        n_body = max(total - n_title - n_author, len(payload) + 1)
        title = self.filler_tokens(n_title)
        author = self.filler_tokens(n_author)
        body = self.filler_tokens(n_body - len(payload))
        target = title if in_title else body
        if contiguous:
            at = int(self.rng.integers(0, len(target) + 1))
            target[at:at] = payload
        else:
            for tok in payload:
                target.insert(int(self.rng.integers(0, len(target) + 1)), tok)
        return {"title": " ".join(title), "author": " ".join(author), "body": " ".join(body)}

    def others(self, clusters: list[int], n: int, exclude: set) -> list[str]:
        pool = [c for c in range(self.spec.n_clusters) if c not in clusters]
        picks = self.rng.choice(pool, size=n, replace=False)
        out = []
        for c in picks:
            cands = [t for t in self.content[int(c)] if t not in exclude]
            out.append(cands[int(self.rng.integers(len(cands)))])
        return out

    def synonyms(self, query: list[str], clusters: list[int]) -> list[str]:
        out = []
        for tok, c in zip(query, clusters):
            cands = [t for t in self.content[c] if t != tok]
            out.append(cands[int(self.rng.integers(len(cands)))])
        return out

    def group(self, query: list[str], clusters: list[int]) -> list[TripletRecord]:
        s = self.spec
        n_vital, n_rel, n_non = grade_counts(s.results_per_query, s.grade_distribution)
        grades = [RelevanceGrade.VITAL] * n_vital + [RelevanceGrade.RELEVANT] * n_rel + [RelevanceGrade.NONRELEVANT] * n_non
        p_title = n_vital / max(n_vital + n_rel, 1)
        qset = set(query)
        records = []
        for g in grades:
            relevant = g >= RelevanceGrade.RELEVANT
            if s.task == "exact_match":
                if relevant:
                    fields = self.document(list(query), g == RelevanceGrade.VITAL, g == RelevanceGrade.VITAL)
                else:
                    fields = self.document(self.others(clusters, len(query), qset), False, False)
            elif s.task == "order_sensitive":
                phrase = list(query) if relevant else _scramble(list(query), self.rng)
                in_title = g == RelevanceGrade.VITAL if relevant else bool(self.rng.random() < p_title)
                fields = self.document(phrase, in_title, True)
            else:
                if relevant:
                    payload = self.synonyms(query, clusters)
                    if g == RelevanceGrade.VITAL:
                        payload += self.synonyms(query, clusters)
                else:
                    payload = self.others(clusters, len(query), qset)
                fields = self.document(payload, False, False)
            records.append(TripletRecord(" ".join(query), fields, g))
        order = self.rng.permutation(len(records))
        return [records[i] for i in order]


def generate_synthetic(spec: SyntheticTaskSpec) -> tuple[DatasetSplit, list[str], np.ndarray]:
    """Return the dataset plus the vocabulary tokens and their embedding vectors."""
    gen = _Generator(spec)
    vectors = gen.embeddings()
    total = sum(spec.queries)
    lo, hi = spec.query_length
    # distinct strings available: ordered choices of distinct clusters, any member each
    capacity = sum(math.perm(spec.n_clusters, n) * spec.cluster_size ** n for n in range(lo, hi + 1))
    if total > capacity // 2:
        raise ValueError(f"vocabulary too small for {total} distinct queries (capacity ~{capacity})")
    seen: set[str] = set()
    splits: dict[str, list] = {s: [] for s in SPLITS}
    for name, count in zip(SPLITS, spec.queries):
        made = 0
        while made < count:
            q, clusters = gen.query()
            key = " ".join(q)
            if key in seen:
                continue
            seen.add(key)
            splits[name].extend(gen.group(q, clusters))
            made += 1
    return DatasetSplit(splits["train"], splits["validation"], splits["test"]), gen.tokens, vectors


def write_synthetic(spec: SyntheticTaskSpec, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data, tokens, vectors = generate_synthetic(spec)
    data_path, emb_path = out / "data.tsv", out / "embeddings.txt"
    save_dataset(data_path, data)
    save_embeddings(emb_path, tokens, vectors)
    return data_path, emb_path


def save_features(path: str | Path, names: Sequence[str], X: np.ndarray, y: Sequence[int], target: str = "target") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(list(names) + [target]) + "\n")
        for row, t in zip(np.asarray(X), y):
            fh.write("\t".join(repr(float(v)) for v in row) + f"\t{int(t)}\n")


def load_features(path: str | Path, target: str = "target") -> tuple[list[str], np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if target not in header:
            raise DatasetError(f"feature file has no {target!r} column", 1)
        ti = header.index(target)
        rows, ys = [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            cols = line.rstrip("\n").split("\t")
            if len(cols) != len(header):
                raise DatasetError(f"expected {len(header)} columns, found {len(cols)}", lineno)
            try:
                vals = [float(c) for c in cols]
            except ValueError:
                raise DatasetError("non-numeric feature value", lineno) from None
            ys.append(int(vals.pop(ti)))
            rows.append(vals)
    names = [h for i, h in enumerate(header) if i != ti]
    return names, np.asarray(rows), np.asarray(ys)
