"""MRR evaluation with sequential online adaptation.

The protocol walks each held-out user's queries in chronological order: spawn
a fresh embedding row, sample one prefix per query (when the query is long
enough to admit one), rank completions, score the reciprocal rank of the true
query, and only then adapt the embedding on that query. Prefix sampling is
keyed by (user, query index) so every completer under comparison sees the
identical prefixes.
"""

from __future__ import annotations

import zlib
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .complete import BeamConfig, MpcIndex, WeightCache, beam_search
from .corpus import QueryRecord, Vocabulary, encode_query, sample_prefix
from .errors import EmptyCorpusError, ProtocolError
from .kernels import seq_nll
from .model import ModelConfig, Parameters, UserEmbeddings, pack_batch
from .train import AdadeltaState, OnlineConfig, online_update, spawn_user

TOP_N = 10


@dataclass
class EvalResult:
    mrr_seen: float
    mrr_unseen: float
    mrr_all: float
    n_seen: int
    n_unseen: int

    @property
    def n_total(self) -> int:
        return self.n_seen + self.n_unseen


@dataclass(frozen=True)
class TraceEvent:
    """One scored prefix: who, how far into their session, and the outcome."""

    user_key: str
    query_index: int
    rr: float
    prefix_len: int
    query_len: int
    seen: bool
    prefix: str
    truth: str


def reciprocal_rank(candidates: Sequence[str], truth: str) -> float:
    """1/rank of the exact true query among the top ten candidates, else 0."""
    for rank, cand in enumerate(candidates[:TOP_N], start=1):
        if cand == truth:
            return 1.0 / rank
    return 0.0


def is_seen_prefix(index: MpcIndex, prefix: str) -> bool:
    """True when some indexed training query starts with the prefix."""
    return index.has_prefix(prefix)


def result_from_events(events: Sequence[TraceEvent]) -> EvalResult:
    seen = [e.rr for e in events if e.seen]
    unseen = [e.rr for e in events if not e.seen]
    total = len(seen) + len(unseen)
    return EvalResult(
        mrr_seen=float(np.mean(seen)) if seen else 0.0,
        mrr_unseen=float(np.mean(unseen)) if unseen else 0.0,
        mrr_all=(float(sum(seen)) + float(sum(unseen))) / total if total else 0.0,
        n_seen=len(seen),
        n_unseen=len(unseen),
    )


def _prefix_rng(seed: int, user_key: str, query_index: int) -> np.random.Generator:
    # Keyed by (user, query index) rather than execution order so paired runs
    # and concurrent per-user evaluation draw identical prefixes.
    return np.random.default_rng([seed, zlib.crc32(user_key.encode("utf-8")), query_index])


def group_by_user(records: Sequence[QueryRecord]) -> "OrderedDict[str, list[QueryRecord]]":
    groups: OrderedDict[str, list[QueryRecord]] = OrderedDict()
    for rec in records:
        groups.setdefault(rec.user_key, []).append(rec)
    for recs in groups.values():
        recs.sort(key=lambda r: r.timestamp)
    return groups


def evaluate_model(
    params: Parameters,
    config: ModelConfig,
    vocab: Vocabulary,
    users: UserEmbeddings,
    test_records: Sequence[QueryRecord],
    seen_index: MpcIndex,
    beam: BeamConfig | None = None,
    online: OnlineConfig | None = None,
    seed: int = 0,
    train_user_keys: set[str] | None = None,
) -> tuple[EvalResult, list[TraceEvent]]:
    """Sequential predict-then-update evaluation of the language model.

    Queries shorter than 3 characters cannot be split into prefix plus
    completion and are skipped for scoring, but still drive online updates.
    The update for query i is applied strictly after query i is scored.
    """
    beam = beam or BeamConfig()
    online = online or OnlineConfig()
    groups = group_by_user(test_records)
    if train_user_keys is not None:
        overlap = set(groups) & train_user_keys
        if overlap:
            raise ProtocolError(f"test users overlap training users: {sorted(overlap)[:5]}")

    eval_users = users.copy()
    ada = AdadeltaState(rho=online.rho, eps=online.eps)
    cache = WeightCache(params, config)
    events: list[TraceEvent] = []
    for user_key, recs in groups.items():
        uid = spawn_user(eval_users, ada)
        for qidx, rec in enumerate(recs):
            query = rec.text
            if len(query) >= 3:
                ps = sample_prefix(_prefix_rng(seed, user_key, qidx), query)
                ranked = beam_search(
                    params, config, eval_users, uid, ps.prefix, vocab, beam, cache
                )
                rr = reciprocal_rank([text for text, _ in ranked], query)
                events.append(
                    TraceEvent(
                        user_key=user_key,
                        query_index=qidx,
                        rr=rr,
                        prefix_len=len(ps.prefix),
                        query_len=len(query),
                        seen=is_seen_prefix(seen_index, ps.prefix),
                        prefix=ps.prefix,
                        truth=query,
                    )
                )
            online_update(
                params, config, eval_users, ada, uid, encode_query(vocab, query), online.lr
            )
    return result_from_events(events), events


def evaluate_mpc(
    index: MpcIndex,
    test_records: Sequence[QueryRecord],
    seed: int = 0,
    top_n: int = TOP_N,
    seen_index: MpcIndex | None = None,
) -> tuple[EvalResult, list[TraceEvent]]:
    """Popularity-baseline evaluation under the same prefix-sampling seeds."""
    seen_index = seen_index or index
    events: list[TraceEvent] = []
    for user_key, recs in group_by_user(test_records).items():
        for qidx, rec in enumerate(recs):
            query = rec.text
            if len(query) < 3:
                continue
            ps = sample_prefix(_prefix_rng(seed, user_key, qidx), query)
            ranked = [q for q, _count in index.complete(ps.prefix, top_n)]
            events.append(
                TraceEvent(
                    user_key=user_key,
                    query_index=qidx,
                    rr=reciprocal_rank(ranked, query),
                    prefix_len=len(ps.prefix),
                    query_len=len(query),
                    seen=is_seen_prefix(seen_index, ps.prefix),
                    prefix=ps.prefix,
                    truth=query,
                )
            )
    return result_from_events(events), events


@dataclass
class ImprovementCurve:
    """Relative MRR improvement over a baseline vs queries seen so far."""

    x: list[int]
    y: list[float]
    window: int


def _mrr_by_index(events: Sequence[TraceEvent]) -> dict[int, float]:
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for e in events:
        sums[e.query_index] = sums.get(e.query_index, 0.0) + e.rr
        counts[e.query_index] = counts.get(e.query_index, 0) + 1
    return {i: sums[i] / counts[i] for i in sums}


def improvement_curve(
    adapted: Sequence[TraceEvent],
    unadapted: Sequence[TraceEvent],
    window: int = 9,
) -> ImprovementCurve:
    """Per-query-index relative improvement, smoothed by a centered moving
    average of the given width (shrunk symmetrically at the edges). Indices
    where either trace has no samples, or the baseline MRR is zero, are
    excluded before smoothing.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    a = _mrr_by_index(adapted)
    u = _mrr_by_index(unadapted)
    xs = [i for i in sorted(set(a) & set(u)) if u[i] > 0.0]
    raw = [(a[i] - u[i]) / u[i] for i in xs]
    half = window // 2
    smooth = []
    for j in range(len(raw)):
        lo = max(0, j - half)
        hi = min(len(raw), j + half + 1)
        smooth.append(float(np.mean(raw[lo:hi])))
    return ImprovementCurve(x=xs, y=smooth, window=window)


@dataclass
class LengthTables:
    """Bucketed MRR: {length: (mrr, sample count)}; empty buckets omitted."""

    by_prefix_len: dict[int, tuple[float, int]]
    by_query_len: dict[int, tuple[float, int]]


def mrr_by_length(events: Sequence[TraceEvent]) -> LengthTables:
    if not events:
        raise EmptyCorpusError("empty trace")

    def bucket(key_fn):
        sums: dict[int, float] = {}
        counts: dict[int, int] = {}
        for e in events:
            k = key_fn(e)
            sums[k] = sums.get(k, 0.0) + e.rr
            counts[k] = counts.get(k, 0) + 1
        return {k: (sums[k] / counts[k], counts[k]) for k in sorted(sums)}

    return LengthTables(
        by_prefix_len=bucket(lambda e: e.prefix_len),
        by_query_len=bucket(lambda e: e.query_len),
    )


def _pool_nlls(
    params: Parameters,
    config: ModelConfig,
    users: UserEmbeddings,
    user_id: int,
    encoded: Sequence[np.ndarray],
) -> np.ndarray:
    from .model import user_factors

    out = np.empty(len(encoded), dtype=np.float64)
    for start in range(0, len(encoded), 256):
        chunk = encoded[start : start + 256]
        tokens, lengths, u_rows = pack_batch(users, [(user_id, ids) for ids in chunk], config.dtype)
        L, R, bias = user_factors(params, config, u_rows)
        nll, _ = seq_nll(
            tokens, lengths, params.E, params.W, L, R, bias,
            params.ln_gain, params.ln_bias, params.P, params.p_bias,
            config.ln_epsilon,
        )
        out[start : start + len(chunk)] = nll
    return out


def likelihood_ratio_case_study(
    params: Parameters,
    config: ModelConfig,
    vocab: Vocabulary,
    users: UserEmbeddings,
    probe_queries: Sequence[str],
    candidate_pool: Sequence[str],
    online: OnlineConfig | None = None,
    max_candidates: int = 1500,
) -> list[tuple[str, float]]:
    """Rank frequent queries by how much adaptation raised their likelihood.

    Spawns a fresh user, records each candidate's NLL, adapts on the probe
    queries in order, re-records, and reports exp(NLL_before - NLL_after)
    sorted descending. Ratios above 1 mean the query became more likely.
    """
    if not candidate_pool:
        raise EmptyCorpusError("empty candidate pool")
    online = online or OnlineConfig()
    pool = list(candidate_pool)[:max_candidates]
    encoded = [encode_query(vocab, q) for q in pool]

    study_users = users.copy()
    ada = AdadeltaState(rho=online.rho, eps=online.eps)
    uid = spawn_user(study_users, ada)
    before = _pool_nlls(params, config, study_users, uid, encoded)
    for probe in probe_queries:
        online_update(
            params, config, study_users, ada, uid, encode_query(vocab, probe), online.lr
        )
    after = _pool_nlls(params, config, study_users, uid, encoded)
    ratios = np.exp(before - after)
    report = sorted(zip(pool, ratios.tolist()), key=lambda qr: (-qr[1], qr[0]))
    return report
