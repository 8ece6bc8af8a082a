"""Click-log ingestion, session filtering and augmentation, temporal splits,
synthetic corpora and the on-disk processed-dataset format."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ContractError, DataError, EmptyDatasetError, EmptyInputError, UsageError

logger = logging.getLogger(__name__)

FORMATS = ("canonical", "yoochoose", "diginetica")
CANONICAL_HEADER = ("session_id", "timestamp_ms", "item_id")
DIGINETICA_HEADER = ("sessionId", "userId", "itemId", "timeframe", "eventdate")
_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_MS = timedelta(milliseconds=1)


@dataclass(frozen=True)
class RawEvent:
    session_key: str
    timestamp: int
    item_key: str


class EventList(list):
    """A list of RawEvent that also remembers how many rows were skipped."""

    skipped: int = 0


@dataclass
class KeyedSession:
    key: str
    items: list
    last_timestamp: int


@dataclass(frozen=True)
class TrainingExample:
    prefix: tuple
    label: int


@dataclass
class ItemVocabulary:
    index_to_key: list = field(default_factory=list)

    def __post_init__(self):
        self.key_to_index = {k: i for i, k in enumerate(self.index_to_key)}
        if len(self.key_to_index) != len(self.index_to_key):
            raise ContractError("vocabulary keys must be unique")

    @property
    def m(self) -> int:
        return len(self.index_to_key)

    def __len__(self) -> int:
        return self.m

    def add(self, key: str) -> int:
        idx = self.key_to_index.get(key)
        if idx is None:
            idx = self.key_to_index[key] = len(self.index_to_key)
            self.index_to_key.append(key)
        return idx

    def encode(self, keys: Iterable[str]) -> list:
        return [self.key_to_index[k] for k in keys]

    def decode(self, indices: Iterable[int]) -> list:
        return [self.index_to_key[i] for i in indices]


@dataclass
class Dataset:
    train_examples: list
    test_examples: list
    vocab: ItemVocabulary
    stats: dict = field(default_factory=dict)

    @property
    def n_items(self) -> int:
        return self.vocab.m


# ---------------------------------------------------------------- loading


def parse_iso8601_ms(text: str) -> int:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return (dt - _EPOCH) // _MS


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8", newline=""), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"), newline=""), True
    if isinstance(source, io.TextIOBase):
        return source, False
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), False


def load_events(source, fmt: str = "canonical") -> EventList:
    """Parse click events from a path, bytes, or a binary/text stream.

    Rows whose fields cannot be parsed are skipped and counted in
    ``result.skipped``.
    """
    if fmt not in FORMATS:
        raise UsageError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    stream, close = _open_text(source)
    try:
        rows = list(csv.reader(stream, delimiter=";" if fmt == "diginetica" else ","))
    finally:
        if close:
            stream.close()
    if fmt == "canonical" and rows and tuple(c.strip() for c in rows[0]) == CANONICAL_HEADER:
        rows = rows[1:]
    elif fmt == "diginetica" and rows and tuple(c.strip() for c in rows[0]) == DIGINETICA_HEADER:
        rows = rows[1:]
    events = EventList()
    for lineno, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            events.append(_parse_row(row, fmt))
        except (ValueError, IndexError) as exc:
            events.skipped += 1
            logger.debug("skipping row %d (%s): %s", lineno, exc, row)
    if events.skipped:
        logger.warning("skipped %d unparsable rows", events.skipped)
    if not events:
        raise EmptyInputError(f"no parsable {fmt} rows in input")
    return events


def _parse_row(row: list, fmt: str) -> RawEvent:
    if fmt == "canonical":
        session, ts, item = row[0], row[1], row[2]
        if len(row) != 3:
            raise ValueError(f"expected 3 fields, got {len(row)}")
        stamp = int(ts)
    elif fmt == "yoochoose":
        session, ts, item = row[0], row[1], row[2]
        stamp = parse_iso8601_ms(ts)
    else:
        session, item, frame, day = row[0], row[2], row[3], row[4]
        d = date.fromisoformat(day.strip())
        stamp = (datetime(d.year, d.month, d.day, tzinfo=timezone.utc) - _EPOCH) // _MS + int(frame)
    session, item = session.strip(), item.strip()
    if not session or not item:
        raise ValueError("empty session or item key")
    if stamp < 0:
        raise ValueError("negative timestamp")
    return RawEvent(session, stamp, item)


def sessionize(events: Sequence[RawEvent]) -> list:
    """Group events by session, ordered by time within and by last event across sessions.

    Both sorts are stable, so input order breaks ties.
    """
    groups: dict = {}
    for ev in events:
        groups.setdefault(ev.session_key, []).append(ev)
    sessions = []
    for key, evs in groups.items():
        evs = sorted(evs, key=lambda e: e.timestamp)
        sessions.append(KeyedSession(key, [e.item_key for e in evs], evs[-1].timestamp))
    sessions.sort(key=lambda s: s.last_timestamp)
    return sessions


# ---------------------------------------------------------------- filtering and augmentation


def filter_sessions(sessions: Sequence, min_item_support: int = 5, min_session_len: int = 2):
    """Drop rare items, then short sessions. One pass each, no fixpoint iteration.

    ``sessions`` may be KeyedSession objects or plain item lists. Returns the
    surviving sessions (same kind) and the vocabulary in first-appearance order.
    """
    def items_of(s):
        return s.items if isinstance(s, KeyedSession) else list(s)

    support = Counter(v for s in sessions for v in items_of(s))
    kept = []
    vocab = ItemVocabulary()
    for s in sessions:
        items = [v for v in items_of(s) if support[v] >= min_item_support]
        if len(items) < min_session_len:
            continue
        for v in items:
            vocab.add(v)
        kept.append(KeyedSession(s.key, items, s.last_timestamp) if isinstance(s, KeyedSession) else items)
    if not kept:
        raise EmptyDatasetError("every session was removed by filtering")
    return kept, vocab


def augment(session: Sequence[int]) -> list:
    """Expand a length-n session into its n−1 (prefix, next item) examples."""
    items = list(session)
    if len(items) < 2:
        raise ContractError(f"augment needs a session of length >= 2, got {len(items)}")
    return [TrainingExample(tuple(items[:i]), items[i]) for i in range(1, len(items))]


def temporal_split(sessions: Sequence[Sequence[int]], vocab: ItemVocabulary,
                   test_fraction: float = 0.1, train_recency_fraction: float = 1.0) -> Dataset:
    """Split index sessions (ordered oldest first) into augmented train/test examples.

    The newest ``ceil(test_fraction * N)`` sessions become test; of the rest,
    the newest ``ceil(train_recency_fraction * N_rest)`` become train.
    """
    if not 0.0 < test_fraction < 1.0:
        raise UsageError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if not 0.0 < train_recency_fraction <= 1.0:
        raise UsageError(f"train_recency_fraction must lie in (0, 1], got {train_recency_fraction}")
    sessions = [list(s) for s in sessions]
    n = len(sessions)
    n_test = math.ceil(test_fraction * n)
    rest = sessions[: n - n_test]
    test_sessions = sessions[n - n_test:]
    n_train = math.ceil(train_recency_fraction * len(rest))
    train_sessions = rest[len(rest) - n_train:]
    if not train_sessions:
        raise EmptyDatasetError("no sessions left for training")

    train = [ex for s in train_sessions for ex in augment(s)]
    seen = {v for s in train_sessions for v in s}
    test, dropped = [], 0
    for s in test_sessions:
        for ex in augment(s):
            if ex.label in seen:
                test.append(ex)
            else:
                dropped += 1
    used = train_sessions + test_sessions
    stats = {
        "n_clicks": sum(len(s) for s in used),
        "n_train_sessions": len(train_sessions),
        "n_test_sessions": len(test_sessions),
        "n_train_examples": len(train),
        "n_test_examples": len(test),
        "n_items": vocab.m,
        "avg_length": round(sum(len(s) for s in used) / len(used), 4),
        "dropped_test_examples": dropped,
    }
    return Dataset(train, test, vocab, stats)


def compute_stats(dataset: Dataset) -> dict:
    """Recompute the example-derived part of the stats block from the contents."""
    return {
        "n_train_examples": len(dataset.train_examples),
        "n_test_examples": len(dataset.test_examples),
        "n_items": dataset.vocab.m,
    }


def preprocess(source, fmt: str = "canonical", min_item_support: int = 5, min_session_len: int = 2,
               test_fraction: float = 0.1, train_recency_fraction: float = 1.0) -> Dataset:
    """load → sessionize → filter → split (with augmentation)."""
    events = load_events(source, fmt)
    sessions, vocab = filter_sessions(sessionize(events), min_item_support, min_session_len)
    dataset = temporal_split([vocab.encode(s.items) for s in sessions], vocab,
                             test_fraction, train_recency_fraction)
    dataset.stats["skipped_rows"] = events.skipped
    return dataset


# ---------------------------------------------------------------- synthetic corpora


def synth_transition_matrix(n_items: int, transition_concentration: float,
                            rng: np.random.Generator) -> np.ndarray:
    """Row-stochastic matrix; each row spreads its mass uniformly over
    ceil(concentration * n_items) randomly chosen successors."""
    k = math.ceil(transition_concentration * n_items)
    probs = np.zeros((n_items, n_items))
    for i in range(n_items):
        successors = rng.choice(n_items, size=k, replace=False)
        probs[i, successors] = 1.0 / k
    return probs


def synth_generate(n_items: int, n_sessions: int, length_range=(2, 10),
                   transition_concentration: float = 0.04, seed: int = 0) -> list:
    """Sample sessions from a random first-order Markov chain over items."""
    lo, hi = length_range
    if n_items < 2 or n_sessions < 1:
        raise UsageError("synth_generate needs n_items >= 2 and n_sessions >= 1")
    if lo < 1 or hi < lo:
        raise UsageError(f"invalid length_range {length_range!r}")
    if not 0.0 < transition_concentration <= 1.0:
        raise UsageError("transition_concentration must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    probs = synth_transition_matrix(n_items, transition_concentration, rng)
    cumulative = np.cumsum(probs, axis=1)
    sessions = []
    for _ in range(n_sessions):
        length = int(rng.integers(lo, hi + 1))
        item = int(rng.integers(n_items))
        seq = [item]
        for _ in range(length - 1):
            item = min(int(np.searchsorted(cumulative[item], rng.random(), side="right")), n_items - 1)
            seq.append(item)
        sessions.append(seq)
    return sessions


def sessions_to_csv(sessions: Sequence[Sequence[int]], item_prefix: str = "i",
                    step_ms: int = 1000) -> str:
    """Canonical CSV text; sessions get consecutive timestamps so file order is recency order."""
    out = io.StringIO(newline="")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CANONICAL_HEADER)
    t = 0
    for s, seq in enumerate(sessions):
        for item in seq:
            t += step_ms
            writer.writerow([f"s{s}", t, f"{item_prefix}{item}"])
    return out.getvalue()


# ---------------------------------------------------------------- persistence


def _write_examples(path: Path, examples: Sequence[TrainingExample]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(" ".join(map(str, ex.prefix)) + "\t" + str(ex.label) + "\n")


def _read_examples(path: Path, m: int) -> list:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                prefix, label = line.split("\t")
                ex = TrainingExample(tuple(int(v) for v in prefix.split()), int(label))
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed example line") from None
            if not ex.prefix or not all(0 <= v < m for v in ex.prefix + (ex.label,)):
                raise DataError(f"{path}:{lineno}: empty prefix or item index outside 0..{m - 1}")
            examples.append(ex)
    return examples


def save_dataset(dataset: Dataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": 1,
        "vocab": dataset.vocab.index_to_key,
        "stats": dataset.stats,
        "splits": {"train": len(dataset.train_examples), "test": len(dataset.test_examples)},
    }
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_examples(out / "train.txt", dataset.train_examples)
    _write_examples(out / "test.txt", dataset.test_examples)


def load_dataset(path) -> Dataset:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DataError(f"no dataset manifest at {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        vocab = ItemVocabulary(list(manifest["vocab"]))
    except (ValueError, KeyError) as exc:
        raise DataError(f"{manifest_path}: invalid manifest ({exc})") from None
    train = _read_examples(root / "train.txt", vocab.m)
    test = _read_examples(root / "test.txt", vocab.m)
    splits = manifest.get("splits", {})
    if splits and (splits.get("train") != len(train) or splits.get("test") != len(test)):
        raise DataError(f"{root}: example files do not match manifest split sizes")
    return Dataset(train, test, vocab, manifest.get("stats", {}))
