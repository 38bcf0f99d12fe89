"""Query-log ingestion, vocabulary, user ids, splits, and prefix sampling.

The corpus layer turns an AOL-style tab-separated log into the structures the
rest of the package consumes: normalized ``QueryRecord`` streams, a dense
character ``Vocabulary`` with START/STOP/UNK specials, a ``UserTable`` that
folds infrequent users into one shared id, user-disjoint train/valid/test
splits, integer encodings, and random prefix/completion splits for evaluation.
"""

from __future__ import annotations

import os
from collections import Counter, OrderedDict
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, EmptyCorpusError

#: Shared id for users below the rare threshold. Ids are 1-based; retained
#: users get 2, 3, ... in first-seen order.
RARE_USER_ID = 1

DEFAULT_RARE_THRESHOLD = 15
DEFAULT_VOCAB_SIZE = 79
DEFAULT_VALID_FRACTION = 0.02


@dataclass(frozen=True)
class QueryRecord:
    """One (user, normalized query, timestamp) event from a log."""

    user_key: str
    text: str
    timestamp: float


@dataclass
class LogSchema:
    """Column layout of a tab-separated query log.

    ``time_format`` is a ``strptime`` pattern, or None to parse the column as
    raw epoch seconds. Timestamps are only used for ordering.
    """

    user_col: int = 0
    query_col: int = 1
    time_col: int = 2
    delimiter: str = "\t"
    has_header: bool = True
    time_format: str | None = "%Y-%m-%d %H:%M:%S"


@dataclass
class LoadedLog:
    records: list[QueryRecord]
    skipped: int

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def normalize_query(raw: str) -> str:
    """Lowercase, strip, and collapse internal whitespace runs to one space.

    May return the empty string; callers filter.
    """
    return " ".join(raw.split()).lower()


def _parse_time(value: str, fmt: str | None) -> float:
    if fmt is None:
        return float(value)
    dt = datetime.strptime(value.strip(), fmt)
    return dt.replace(tzinfo=timezone.utc).timestamp()


def load_query_log(path: str | Path, schema: LogSchema | None = None) -> LoadedLog:
    """Read a query log, normalizing text and skipping malformed rows.

    A row is malformed when it has too few columns, an unparseable timestamp,
    or a query that normalizes to the empty string. Malformed rows are counted
    in ``LoadedLog.skipped``. Raises ``EmptyCorpusError`` when no row parses.
    """
    schema = schema or LogSchema()
    path = Path(path)
    if not path.is_file():
        raise OSError(f"query log not found: {path}")
    needed = max(schema.user_col, schema.query_col, schema.time_col) + 1
    records: list[QueryRecord] = []
    skipped = 0
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh):
            if schema.has_header and lineno == 0:
                continue
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split(schema.delimiter)
            if len(cols) < needed:
                skipped += 1
                continue
            text = normalize_query(cols[schema.query_col])
            if not text:
                skipped += 1
                continue
            try:
                ts = _parse_time(cols[schema.time_col], schema.time_format)
            except ValueError:
                skipped += 1
                continue
            records.append(QueryRecord(cols[schema.user_col].strip(), text, ts))
    if not records:
        raise EmptyCorpusError(f"no parseable rows in {path}")
    return LoadedLog(records, skipped)


class Vocabulary:
    """Dense character vocabulary with START, STOP, and UNK specials.

    Ids are 0..len-1 with the specials first (START=0, STOP=1, UNK=2) followed
    by data characters. Identical input text always produces the same symbol
    order.
    """

    START = "<s>"
    STOP = "</s>"
    UNK = "<unk>"

    def __init__(self, chars: Sequence[str]):
        self.symbols: list[str] = [self.START, self.STOP, self.UNK, *chars]
        self.index: dict[str, int] = {s: i for i, s in enumerate(self.symbols)}
        if len(self.index) != len(self.symbols):
            raise ConfigError("duplicate symbols in vocabulary")

    start_id = 0
    stop_id = 1
    unk_id = 2

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.symbols == other.symbols

    @property
    def chars(self) -> list[str]:
        return self.symbols[3:]


def build_vocabulary(
    records: Iterable[QueryRecord], max_chars: int = DEFAULT_VOCAB_SIZE
) -> Vocabulary:
    """Most frequent training characters, capped so the total size (specials
    included) is at most ``max_chars``. Ties break on ascending codepoint.
    """
    counts: Counter[str] = Counter()
    for rec in records:
        counts.update(rec.text)
    if not counts:
        raise EmptyCorpusError("cannot build a vocabulary from empty records")
    if max_chars < 4:
        raise ConfigError("max_chars must leave room for specials plus one char")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [ch for ch, _ in ranked[: max_chars - 3]]
    return Vocabulary(keep)


def encode_query(
    vocab: Vocabulary, text: str, max_len: int | None = None
) -> np.ndarray:
    """Encode normalized text as [START] + char ids + [STOP] (int32).

    Out-of-vocabulary characters map to UNK. When ``max_len`` is given (the
    training path) the character portion is truncated before STOP is added;
    inference paths pass None.
    """
    if max_len is not None:
        text = text[:max_len]
    ids = [vocab.start_id]
    ids.extend(vocab.index.get(ch, vocab.unk_id) for ch in text)
    ids.append(vocab.stop_id)
    return np.asarray(ids, dtype=np.int32)


def decode_tokens(vocab: Vocabulary, token_ids: Sequence[int]) -> str:
    """Inverse of ``encode_query`` on in-vocabulary text: drop specials, map
    ids back to characters."""
    out = []
    for tid in token_ids:
        if tid in (vocab.start_id, vocab.stop_id):
            continue
        out.append(vocab.symbols[int(tid)])
    return "".join(out)


@dataclass
class UserTable:
    """user_key -> 1-based user id, with rare users folded into id 1."""

    ids: dict[str, int]
    query_counts: dict[str, int]
    rare_threshold: int

    @property
    def user_count(self) -> int:
        """k: number of retained users plus the shared rare entity."""
        return max(self.ids.values(), default=RARE_USER_ID)

    def id_for(self, user_key: str) -> int:
        return self.ids[user_key]


def assign_user_ids(
    records: Iterable[QueryRecord], rare_threshold: int = DEFAULT_RARE_THRESHOLD
) -> UserTable:
    """Map users with fewer than ``rare_threshold`` queries to the shared id 1;
    every other user gets a unique id starting at 2, in first-seen order."""
    if rare_threshold < 1:
        raise ConfigError("rare_threshold must be >= 1")
    counts: OrderedDict[str, int] = OrderedDict()
    for rec in records:
        counts[rec.user_key] = counts.get(rec.user_key, 0) + 1
    ids: dict[str, int] = {}
    next_id = RARE_USER_ID + 1
    for key, n in counts.items():
        if n < rare_threshold:
            ids[key] = RARE_USER_ID
        else:
            ids[key] = next_id
            next_id += 1
    return UserTable(ids=ids, query_counts=dict(counts), rare_threshold=rare_threshold)


@dataclass
class SplitConfig:
    """How to carve records into train/valid/test.

    ``test_users`` (a count) or ``test_fraction`` (of distinct users) selects
    how many users are held out entirely for test. Validation takes the
    chronological tail of each remaining user's queries.
    """

    test_users: int | None = None
    test_fraction: float | None = 0.2
    valid_fraction: float = DEFAULT_VALID_FRACTION
    seed: int = 0


@dataclass
class DatasetSplit:
    train: list[QueryRecord]
    valid: list[QueryRecord]
    test: list[QueryRecord]


def _group_by_user(records: Sequence[QueryRecord]) -> OrderedDict[str, list[QueryRecord]]:
    groups: OrderedDict[str, list[QueryRecord]] = OrderedDict()
    for rec in records:
        groups.setdefault(rec.user_key, []).append(rec)
    for recs in groups.values():
        recs.sort(key=lambda r: r.timestamp)  # stable: file order breaks ties
    return groups


def make_splits(records: Sequence[QueryRecord], config: SplitConfig | None = None) -> DatasetSplit:
    """User-disjoint test split plus per-user chronological-tail validation.

    Test users never appear in train or valid. Of each remaining user's
    queries, floor(n * valid_fraction) from the chronological tail go to
    valid and the rest to train.
    """
    config = config or SplitConfig()
    groups = _group_by_user(records)
    users = list(groups)
    if len(users) < 2:
        raise ConfigError("need at least 2 distinct users to build splits")

    if config.test_users is not None:
        n_test = config.test_users
    elif config.test_fraction is not None:
        n_test = int(round(len(users) * config.test_fraction))
    else:
        n_test = 0
    if n_test < 0 or n_test >= len(users):
        raise ConfigError(
            f"test allocation of {n_test} users out of {len(users)} leaves no training users"
        )
    if not 0.0 <= config.valid_fraction < 1.0:
        raise ConfigError("valid_fraction must be in [0, 1)")

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(users))
    test_keys = {users[i] for i in order[:n_test]}

    train: list[QueryRecord] = []
    valid: list[QueryRecord] = []
    test: list[QueryRecord] = []
    for key, recs in groups.items():
        if key in test_keys:
            test.extend(recs)
            continue
        n_valid = int(len(recs) * config.valid_fraction)
        cut = len(recs) - n_valid
        train.extend(recs[:cut])
        valid.extend(recs[cut:])
    return DatasetSplit(train=train, valid=valid, test=test)


@dataclass(frozen=True)
class PrefixSample:
    prefix: str
    completion: str
    source_query: str

    def __post_init__(self):
        assert self.prefix + self.completion == self.source_query
        assert len(self.prefix) >= 2 and len(self.completion) >= 1


def sample_prefix(rng: np.random.Generator, query: str) -> PrefixSample | None:
    """Uniform split point in {2, ..., len-1}: at least two prefix characters
    and at least one completion character. Queries shorter than 3 characters
    admit no legal split and yield None."""
    if len(query) < 3:
        return None
    split = int(rng.integers(2, len(query)))
    return PrefixSample(prefix=query[:split], completion=query[split:], source_query=query)


# Split persistence: newline-delimited `user \t timestamp \t query`, UTF-8.
# The user field is an opaque integer key; readers treat it as a string key.


def write_split_file(
    path: str | Path, records: Iterable[QueryRecord], id_of: Mapping[str, int]
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(f"{id_of[rec.user_key]}\t{rec.timestamp:.0f}\t{rec.text}\n")


def read_split_file(path: str | Path) -> list[QueryRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            user, ts, text = line.split("\t", 2)
            records.append(QueryRecord(user, text, float(ts)))
    return records


def write_split_dir(out_dir: str | Path, split: DatasetSplit) -> None:
    """Persist a DatasetSplit as train.tsv / valid.tsv / test.tsv.

    Each side gets per-user integer keys assigned in first-seen order; keys
    only need to group queries by user within one file.
    """
    out_dir = Path(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    next_id = 1
    id_of: dict[str, int] = {}
    for part, records in (("train", split.train), ("valid", split.valid), ("test", split.test)):
        for rec in records:
            if rec.user_key not in id_of:
                id_of[rec.user_key] = next_id
                next_id += 1
        write_split_file(out_dir / f"{part}.tsv", records, id_of)


def read_split_dir(data_dir: str | Path) -> DatasetSplit:
    data_dir = Path(data_dir)
    parts = {}
    for part in ("train", "valid", "test"):
        path = data_dir / f"{part}.tsv"
        parts[part] = read_split_file(path) if path.is_file() else []
    if not parts["train"]:
        raise EmptyCorpusError(f"no training records under {data_dir}")
    return DatasetSplit(**parts)
