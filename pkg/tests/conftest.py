import numpy as np
import pytest

from matchtensor.models import ModelConfig, build_model
from matchtensor.text import assemble_document, build_table, process_query

TOY_TOKENS = ["low", "fat", "high", "carb", "diet", "recipe", "tv", "show", "music", "news", "a", "b", "c", "d"]


def toy_vocab(dim: int = 6, seed: int = 0):
    rng = np.random.default_rng(seed)
    return build_table(TOY_TOKENS, rng.normal(0, 0.5, (len(TOY_TOKENS), dim)), seed=seed)


def toy_config(arch: str, encoder: str = "bilstm", **kw) -> ModelConfig:
    base = dict(arch=arch, encoder=encoder, projection_dim=4, doc_hidden=3, query_hidden=3, hidden=3,
                match_size=3, filters1=2, filters2=2, dropout=0.0, seed=3)
    base.update(kw)
    return ModelConfig(**base)


def toy_model(arch: str, encoder: str = "bilstm", **kw):
    vocab, table = toy_vocab()
    return build_model(toy_config(arch, encoder, **kw), vocab, table)


TOY_PAIRS = [
    ("low fat high carb", {"title": "low fat high carb diet", "body": "recipe"}),
    ("low carb", {"title": "tv show", "body": "low carb music"}),
    ("music news", {"title": "news", "body": "music tv show a b"}),
    ("diet", {"title": "high fat", "author": "c", "body": "d recipe"}),
    ("tv show a", {"body": "show tv a"}),
]


def toy_pairs(vocab):
    return [(process_query(q, vocab), assemble_document(f, vocab)) for q, f in TOY_PAIRS]


@pytest.fixture
def vocab_table():
    return toy_vocab()
