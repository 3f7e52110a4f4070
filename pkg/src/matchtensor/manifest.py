"""Run manifests: a JSON text header followed by a little-endian float64 payload.

Layout::

    MATCHTENSOR-MANIFEST <version>\\n
    <one-line JSON header>\\n
    <payload bytes>

The header lists every tensor with its name, shape and offset into the payload,
so files can be inspected with ``head -2``.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import Bm25Params, BoostedEnsemble
from .models import ModelConfig, RankingModel, build_model
from .text import RESERVED, EmbeddingTable, Vocabulary

MAGIC = "MATCHTENSOR-MANIFEST"
VERSION = 1
KINDS = ("neural", "bm25", "ensemble")


class ManifestError(ValueError):
    pass


@dataclass
class RunManifest:
    kind: str
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    dataset_fingerprint: str = ""
    metrics: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    version: int = VERSION

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ManifestError(f"unknown manifest kind {self.kind!r}")

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _atomic_write(path: Path, chunks) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            for c in chunks:
                fh.write(c)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    _atomic_write(Path(path), [text.encode("utf-8")])


def save_manifest(path: str | Path, manifest: RunManifest) -> None:
    entries, blobs, offset = [], [], 0
    for name, arr in manifest.tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.size
    header = {
        "version": manifest.version, "kind": manifest.kind, "config": manifest.config,
        "config_hash": manifest.config_hash, "seeds": manifest.seeds,
        "dataset_fingerprint": manifest.dataset_fingerprint, "metrics": manifest.metrics,
        "extra": manifest.extra, "tensors": entries,
    }
    text = f"{MAGIC} {manifest.version}\n" + json.dumps(header, allow_nan=True, default=float) + "\n"
    _atomic_write(Path(path), [text.encode("utf-8"), *blobs])


def load_manifest(path: str | Path) -> RunManifest:
    with open(path, "rb") as fh:
        first = fh.readline().decode("utf-8", "replace").split()
        if len(first) != 2 or first[0] != MAGIC:
            raise ManifestError(f"{path}: not a manifest file")
        if int(first[1]) != VERSION:
            raise ManifestError(f"{path}: unsupported manifest version {first[1]}")
        try:
            header = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: corrupt header ({exc.msg})") from None
        payload = np.frombuffer(fh.read(), dtype="<f8")
    tensors = {}
    for e in header["tensors"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        if e["offset"] + n > payload.size:
            raise ManifestError(f"{path}: payload truncated at tensor {e['name']!r}")
        tensors[e["name"]] = payload[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float64)
    m = RunManifest(header["kind"], header["config"], header["seeds"], header["dataset_fingerprint"],
                    header["metrics"], tensors, header.get("extra", {}), header["version"])
    if m.config_hash != header["config_hash"]:
        raise ManifestError(f"{path}: config hash mismatch")
    return m


# ---------------------------------------------------------------------------
# Conversions
# ---------------------------------------------------------------------------


def model_manifest(model: RankingModel, dataset_fingerprint: str = "", metrics: Optional[dict] = None,
                   training: Optional[dict] = None) -> RunManifest:
    tokens = model.vocab.itos[: len(model.vocab) - len(RESERVED)]
    tensors = {n: p.data for n, p in model.named_parameters()}
    return RunManifest(
        "neural", config=model.config.to_dict(), seeds={"model": model.config.seed, **({"training": training.get("seed")} if training else {})},
        dataset_fingerprint=dataset_fingerprint, metrics=metrics or {}, tensors=tensors,
        extra={"vocab": tokens, "training": training or {}},
    )


def model_from_manifest(m: RunManifest) -> RankingModel:
    if m.kind != "neural":
        raise ManifestError(f"expected a neural manifest, got {m.kind!r}")
    vocab = Vocabulary(m.extra["vocab"])
    table = EmbeddingTable(m.tensors["embedding.table"])
    model = build_model(ModelConfig(**m.config), vocab, table)
    params = model.parameters()
    missing = set(params) ^ set(m.tensors)
    if missing:
        raise ManifestError(f"parameter names differ from the architecture: {sorted(missing)}")
    for name, p in params.items():
        if p.data.shape != m.tensors[name].shape:
            raise ManifestError(f"shape mismatch for {name}: {p.data.shape} vs {m.tensors[name].shape}")
        p.data[...] = m.tensors[name]
    return model


def bm25_manifest(params: Bm25Params = Bm25Params(), dataset_fingerprint: str = "",
                  metrics: Optional[dict] = None) -> RunManifest:
    """BM25 has no fitted state: corpus statistics come from whatever split is scored."""
    return RunManifest("bm25", config={"k1": params.k1, "b": params.b}, dataset_fingerprint=dataset_fingerprint,
                       metrics=metrics or {})


def bm25_from_manifest(m: RunManifest) -> Bm25Params:
    if m.kind != "bm25":
        raise ManifestError(f"expected a bm25 manifest, got {m.kind!r}")
    return Bm25Params(**m.config)


def ensemble_manifest(ens: BoostedEnsemble, sources: dict, dataset_fingerprint: str = "",
                      metrics: Optional[dict] = None) -> RunManifest:
    """``sources`` maps each feature name to the manifest path that produces it."""
    return RunManifest("ensemble", config={"features": list(ens.feature_names), "shrinkage": ens.shrinkage},
                       dataset_fingerprint=dataset_fingerprint, metrics=metrics or {},
                       extra={"ensemble": ens.to_dict(), "sources": sources})


def ensemble_from_manifest(m: RunManifest) -> BoostedEnsemble:
    if m.kind != "ensemble":
        raise ManifestError(f"expected an ensemble manifest, got {m.kind!r}")
    return BoostedEnsemble.from_dict(m.extra["ensemble"])
