"""Synthetic two-archetype query corpora.

Users belong to one of two archetypes whose query pools share long neutral
stems but diverge in their suffixes, e.g. stem "qvkre" continuing as
"qvkrebalt" for archetype A users and "qvkredosu" for archetype B users. A
prefix sampled inside the stem is ambiguous between the pools, so a model
that has identified the user's archetype can rank the right continuation
first while an unpersonalized model cannot. Rare users mix both pools, which
trains the shared cold-start embedding on neutral behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import DatasetSplit, QueryRecord

ALPHABET = "abcdefghijklmnopqrstuvwxyz"


@dataclass
class ArchetypeCorpus:
    split: DatasetSplit
    tune_groups: list[tuple[str, list[str]]]
    pool_a: list[str]
    pool_b: list[str]


def _word(rng: np.random.Generator, length: int) -> str:
    return "".join(ALPHABET[i] for i in rng.integers(0, len(ALPHABET), size=length))


def _make_pools(
    rng: np.random.Generator, pool_size: int, stem_len: int, suffix_len: int
) -> tuple[list[str], list[str]]:
    stems: set[str] = set()
    while len(stems) < pool_size:
        stems.add(_word(rng, stem_len))
    pool_a, pool_b = [], []
    for stem in sorted(stems):
        sa = _word(rng, suffix_len)
        sb = _word(rng, suffix_len)
        while sb[0] == sa[0]:
            sb = _word(rng, suffix_len)
        pool_a.append(stem + sa)
        pool_b.append(stem + sb)
    return pool_a, pool_b


def make_archetype_corpus(
    n_train_users: int = 50,
    queries_per_user: int = 40,
    valid_tail: int = 1,
    n_rare_users: int = 10,
    rare_queries: int = 5,
    n_test_users: int = 10,
    test_queries_per_user: int = 45,
    n_tune_users: int = 4,
    tune_queries_per_user: int = 30,
    pool_size: int = 50,
    stem_len: int = 6,
    suffix_len: int = 3,
    seed: int = 0,
) -> ArchetypeCorpus:
    rng = np.random.default_rng(seed)
    pool_a, pool_b = _make_pools(rng, pool_size, stem_len, suffix_len)
    pools = (pool_a, pool_b)
    clock = [0.0]

    def draw(pool: list[str], n: int) -> list[str]:
        return [pool[i] for i in rng.integers(0, len(pool), size=n)]

    def records(user_key: str, texts: list[str]) -> list[QueryRecord]:
        out = []
        for text in texts:
            clock[0] += 1.0
            out.append(QueryRecord(user_key, text, clock[0]))
        return out

    train: list[QueryRecord] = []
    valid: list[QueryRecord] = []
    for i in range(n_train_users):
        pool = pools[i % 2]
        recs = records(f"train{i:03d}", draw(pool, queries_per_user))
        cut = len(recs) - valid_tail
        train.extend(recs[:cut])
        valid.extend(recs[cut:])
    for i in range(n_rare_users):
        texts = draw(pool_a, rare_queries - rare_queries // 2) + draw(pool_b, rare_queries // 2)
        train.extend(records(f"rare{i:03d}", texts))

    test: list[QueryRecord] = []
    for i in range(n_test_users):
        pool = pools[i % 2]
        test.extend(records(f"test{i:03d}", draw(pool, test_queries_per_user)))

    tune_groups = []
    for i in range(n_tune_users):
        pool = pools[i % 2]
        tune_groups.append((f"tune{i:03d}", draw(pool, tune_queries_per_user)))

    split = DatasetSplit(train=train, valid=valid, test=test)
    return ArchetypeCorpus(split=split, tune_groups=tune_groups, pool_a=pool_a, pool_b=pool_b)
