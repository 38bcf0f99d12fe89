"""Ranked query completion: LM beam search and the popularity baseline.

Beam search materializes the user's adapted recurrent weights exactly once
per request (cached across requests until the embedding changes) and reuses
them for every hypothesis step. The baseline is a frequency-annotated prefix
trie over training queries that survive a minimum-count filter.
"""

from __future__ import annotations

import struct
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from . import kernels
from .corpus import Vocabulary, encode_query, normalize_query
from .errors import ArchiveError, ConfigError
from .model import (
    ModelConfig,
    Parameters,
    UserEmbeddings,
    adapted_recurrent_weights,
    log_softmax,
)


@dataclass
class BeamConfig:
    beam_width: int = 100
    branching: int = 4
    max_completion_chars: int = 100
    top_n: int = 10

    def validate(self, vocab_size: int) -> "BeamConfig":
        if not 1 <= self.branching <= vocab_size:
            raise ConfigError("branching must be in 1..vocab_size")
        if not 1 <= self.top_n <= self.beam_width:
            raise ConfigError("need beam_width >= top_n >= 1")
        return self


class WeightCache:
    """Per-user adapted weights keyed by embedding version.

    Entries are immutable once inserted; an embedding update bumps the row
    version, which makes the stale entry unreachable. ``computations`` counts
    how many times adapted weights were actually built.
    """

    def __init__(self, params: Parameters, config: ModelConfig):
        self.params = params
        self.config = config
        self.computations = 0
        self.hits = 0
        self._entries: dict[int, tuple[int, np.ndarray, np.ndarray]] = {}
        self._lock = threading.Lock()

    def get(self, users: UserEmbeddings, user_id: int) -> tuple[np.ndarray, np.ndarray]:
        if self.config.variant == "unadapted":
            return self.params.W, self.params.b
        version = users.version(user_id)
        with self._lock:
            entry = self._entries.get(user_id)
            if entry is not None and entry[0] == version:
                self.hits += 1
                return entry[1], entry[2]
        w_eff, b_eff = adapted_recurrent_weights(self.params, self.config, users.row(user_id))
        with self._lock:
            self.computations += 1
            self._entries[user_id] = (version, w_eff, b_eff)
        return w_eff, b_eff

    def invalidate(self, user_id: int) -> None:
        with self._lock:
            self._entries.pop(user_id, None)


@dataclass
class Hypothesis:
    """A partial completion: generated suffix, accumulated logprob, state."""

    text: str
    logprob: float
    h: np.ndarray
    c: np.ndarray
    row: np.ndarray  # next-symbol log-probabilities from this state
    finished: bool = False


def _advance(params, config, w_eff, b_eff, tokens, h, c):
    """Feed one symbol per row; returns (h, c, next-symbol logprob rows)."""
    xh = np.concatenate([params.E[tokens], h], axis=1)
    h, c = kernels.cell_batch(
        xh, w_eff, b_eff, params.ln_gain, params.ln_bias, c, config.ln_epsilon
    )
    rows = log_softmax((h @ params.P + params.p_bias).astype(np.float64))
    return h, c, rows


def beam_search(
    params: Parameters,
    config: ModelConfig,
    users: UserEmbeddings,
    user_id: int,
    prefix: str,
    vocab: Vocabulary,
    beam: BeamConfig | None = None,
    cache: WeightCache | None = None,
) -> list[tuple[str, float]]:
    """Top completions for a prefix, ranked by completion log-probability.

    The state is initialized by feeding START plus the prefix characters
    (out-of-vocabulary characters map to UNK). Each live hypothesis proposes
    its ``branching`` best next symbols; the pooled candidates, finished ones
    included, are pruned to ``beam_width``. A hypothesis freezes when it
    emits STOP. Returned completions are full queries (prefix + suffix) with
    the accumulated log-probability of suffix + STOP; the shared prefix
    probability is a constant and excluded. Equal scores break on ascending
    completion text.
    """
    if not prefix:
        raise ValueError("prefix must be non-empty")
    beam = (beam or BeamConfig()).validate(len(vocab))
    if cache is not None:
        w_eff, b_eff = cache.get(users, user_id)
    else:
        w_eff, b_eff = adapted_recurrent_weights(params, config, users.row(user_id))

    prefix_ids = encode_query(vocab, prefix)[:-1]  # START + chars, no STOP
    h = np.zeros((1, config.h), dtype=config.dtype)
    c = np.zeros_like(h)
    rows = None
    for tok in prefix_ids:
        h, c, rows = _advance(params, config, w_eff, b_eff, np.array([tok]), h, c)

    # START can never be emitted; UNK would not render as text.
    blocked = np.zeros(len(vocab))
    blocked[vocab.start_id] = -np.inf
    blocked[vocab.unk_id] = -np.inf

    live = [Hypothesis("", 0.0, h[0], c[0], rows[0])]
    finished: list[Hypothesis] = []

    while live:
        candidates: list[tuple[float, str, Hypothesis | None, int]] = [
            (hyp.logprob, hyp.text, None, -1) for hyp in finished
        ]
        for hyp in live:
            if len(hyp.text) >= beam.max_completion_chars:
                scores = hyp.row
                choices = np.array([vocab.stop_id])
            else:
                scores = hyp.row + blocked
                k = min(beam.branching, len(scores))
                choices = np.argpartition(-scores, k - 1)[:k]
            for tok in choices:
                step_lp = float(scores[tok])
                if not np.isfinite(step_lp):
                    continue
                lp = hyp.logprob + step_lp
                if tok == vocab.stop_id:
                    candidates.append((lp, hyp.text, None, -1))
                else:
                    candidates.append((lp, hyp.text + vocab.symbols[int(tok)], hyp, int(tok)))
        candidates.sort(key=lambda cand: (-cand[0], cand[1]))
        candidates = candidates[: beam.beam_width]

        finished = [
            Hypothesis(text, lp, h[0], c[0], rows[0], finished=True)
            for lp, text, parent, _ in candidates
            if parent is None
        ]
        pending = [(lp, text, parent, tok) for lp, text, parent, tok in candidates if parent is not None]
        if not pending:
            break
        if len(finished) >= beam.top_n:
            bar = sorted(finished, key=lambda f: -f.logprob)[beam.top_n - 1].logprob
            if max(lp for lp, *_ in pending) < bar:
                break

        tokens = np.array([tok for *_rest, tok in pending])
        h_in = np.stack([parent.h for _, _, parent, _ in pending])
        c_in = np.stack([parent.c for _, _, parent, _ in pending])
        h_out, c_out, rows_out = _advance(params, config, w_eff, b_eff, tokens, h_in, c_in)
        live = [
            Hypothesis(text, lp, h_out[i], c_out[i], rows_out[i])
            for i, (lp, text, _parent, _tok) in enumerate(pending)
        ]

    finished.sort(key=lambda f: (-f.logprob, f.text))
    return [(prefix + f.text, f.logprob) for f in finished[: beam.top_n]]


class _Node:
    __slots__ = ("children", "count")

    def __init__(self):
        self.children: dict[str, _Node] = {}
        self.count = 0


class MpcIndex:
    """Prefix trie over training queries with count >= min_count.

    Completion ranks by stored count descending, ties on ascending query
    text. Persistence is a versioned little-endian binary: magic header,
    (query, count) table, then the trie in preorder; load verifies the trie
    against the table.
    """

    MAGIC = b"QACMPC1\n"
    VERSION = 1

    def __init__(self, min_count: int = 3):
        self.min_count = min_count
        self.root = _Node()
        self.counts: dict[str, int] = {}

    @classmethod
    def build(cls, queries: Iterable[str], min_count: int = 3) -> "MpcIndex":
        index = cls(min_count)
        tally: Counter[str] = Counter()
        for q in queries:
            q = normalize_query(q)
            if q:
                tally[q] += 1
        for q, n in tally.items():
            if n >= min_count:
                index._insert(q, n)
        return index

    def _insert(self, query: str, count: int) -> None:
        node = self.root
        for ch in query:
            node = node.children.setdefault(ch, _Node())
        node.count = count
        self.counts[query] = count

    def _find(self, prefix: str) -> _Node | None:
        node = self.root
        for ch in prefix:
            node = node.children.get(ch)
            if node is None:
                return None
        return node

    def has_prefix(self, prefix: str) -> bool:
        """True when at least one indexed query starts with the prefix."""
        return bool(self.counts) and self._find(prefix) is not None

    def complete(self, prefix: str, top_n: int = 10) -> list[tuple[str, int]]:
        node = self._find(prefix)
        if node is None:
            return []
        matches: list[tuple[str, int]] = []
        stack = [(node, prefix)]
        while stack:
            cur, text = stack.pop()
            if cur.count > 0:
                matches.append((text, cur.count))
            for ch, child in cur.children.items():
                stack.append((child, text + ch))
        matches.sort(key=lambda qc: (-qc[1], qc[0]))
        return matches[:top_n]

    def __len__(self) -> int:
        return len(self.counts)

    def save(self, path: str | Path) -> None:
        chunks = [self.MAGIC, struct.pack("<IIQ", self.VERSION, self.min_count, len(self.counts))]
        for query in sorted(self.counts):
            raw = query.encode("utf-8")
            chunks.append(struct.pack("<I", len(raw)) + raw + struct.pack("<Q", self.counts[query]))
        self._write_node(chunks, self.root)
        with open(path, "wb") as fh:
            fh.write(b"".join(chunks))

    def _write_node(self, chunks: list[bytes], node: _Node) -> None:
        chunks.append(struct.pack("<QI", node.count, len(node.children)))
        for ch in sorted(node.children):
            raw = ch.encode("utf-8")
            chunks.append(struct.pack("<I", len(raw)) + raw)
            self._write_node(chunks, node.children[ch])

    @classmethod
    def load(cls, path: str | Path) -> "MpcIndex":
        data = Path(path).read_bytes()
        if data[: len(cls.MAGIC)] != cls.MAGIC:
            raise ArchiveError(f"{path}: not an MPC index file")
        pos = len(cls.MAGIC)
        version, min_count, n_queries = struct.unpack_from("<IIQ", data, pos)
        pos += struct.calcsize("<IIQ")
        if version != cls.VERSION:
            raise ArchiveError(f"{path}: unsupported index version {version}")
        index = cls(min_count)
        table: dict[str, int] = {}
        for _ in range(n_queries):
            (qlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            query = data[pos : pos + qlen].decode("utf-8")
            pos += qlen
            (count,) = struct.unpack_from("<Q", data, pos)
            pos += 8
            table[query] = count
        index.root, pos = cls._read_node(data, pos)
        if pos != len(data):
            raise ArchiveError(f"{path}: trailing bytes in index file")
        index._rebuild_counts(index.root, "")
        if index.counts != table:
            raise ArchiveError(f"{path}: count table does not match serialized trie")
        return index

    @classmethod
    def _read_node(cls, data: bytes, pos: int) -> tuple[_Node, int]:
        node = _Node()
        try:
            node.count, n_children = struct.unpack_from("<QI", data, pos)
        except struct.error as exc:
            raise ArchiveError("truncated index file") from exc
        pos += struct.calcsize("<QI")
        for _ in range(n_children):
            (clen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            ch = data[pos : pos + clen].decode("utf-8")
            pos += clen
            child, pos = cls._read_node(data, pos)
            node.children[ch] = child
        return node, pos

    def _rebuild_counts(self, node: _Node, text: str) -> None:
        if node.count > 0:
            self.counts[text] = node.count
        for ch, child in node.children.items():
            self._rebuild_counts(child, text + ch)


def build_mpc_index(train_queries: Iterable[str], min_count: int = 3) -> MpcIndex:
    return MpcIndex.build(train_queries, min_count)


def mpc_complete(index: MpcIndex, prefix: str, top_n: int = 10) -> list[tuple[str, int]]:
    return index.complete(prefix, top_n)
