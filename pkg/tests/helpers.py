"""Shared builders for tests: randomized micro-models and small corpora."""

from __future__ import annotations

import numpy as np

from qac.corpus import Vocabulary
from qac.model import ModelConfig, Parameters, UserEmbeddings


def random_model(
    seed: int,
    variant: str = "factor",
    e: int = 3,
    h: int = 4,
    m: int = 2,
    r: int = 2,
    chars: str = "abc",
    k: int = 3,
    float_width: int = 64,
    scale: float = 0.5,
) -> tuple[Parameters, ModelConfig, UserEmbeddings, Vocabulary]:
    """A model with every tensor randomized (adaptation tensors included),
    unlike production initialization. Gradient and oracle tests need all
    code paths live."""
    rng = np.random.default_rng(seed)
    vocab = Vocabulary(list(chars))
    cfg = ModelConfig(
        variant=variant, e=e, h=h, m=m, r=r,
        vocab_size=len(vocab), float_width=float_width,
    ).validate()
    eh, g3, v = e + h, 3 * h, len(vocab)
    dt = cfg.dtype

    def rand(*shape):
        return rng.normal(0, scale, shape).astype(dt)

    params = Parameters(
        E=rand(v, e),
        W=rand(eh, g3),
        b=(0.5 * rand(g3)),
        V=(0.5 * rand(m, g3)),
        Z_L=(0.5 * rand(m, eh, r)),
        Z_R=(0.5 * rand(r, g3, m)),
        ln_gain=(1.0 + 0.1 * rand(3, h)),
        ln_bias=(0.1 * rand(3, h)),
        P=rand(h, v),
        p_bias=(0.2 * rand(v)),
    )
    users = UserEmbeddings(rand(k, m))
    return params, cfg, users, vocab


def random_queries(rng: np.random.Generator, vocab: Vocabulary, n: int, max_len: int = 6):
    """Encoded random queries over the vocabulary's characters."""
    from qac.corpus import encode_query

    out = []
    for _ in range(n):
        length = int(rng.integers(1, max_len + 1))
        text = "".join(vocab.chars[i] for i in rng.integers(0, len(vocab.chars), length))
        out.append(encode_query(vocab, text))
    return out
