"""Top-K ranking metrics and the shared evaluation protocol."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import UsageError
from .model import label_ranks, topk_rows

DEFAULT_KS = (5, 10, 20)
SHORT_SESSION_MAX = 5


def _check_pair(rankings, labels) -> None:
    if len(rankings) == 0 or len(rankings) != len(labels):
        raise UsageError(f"need equal, non-zero numbers of rankings and labels "
                         f"(got {len(rankings)} and {len(labels)})")


def recall_at_k(rankings: Sequence[Sequence[int]], labels: Sequence[int]) -> float:
    """Fraction of cases whose label appears in its top-K list."""
    _check_pair(rankings, labels)
    hits = sum(1 for ranked, y in zip(rankings, labels) if y in list(ranked))
    return hits / len(labels)


def mrr_at_k(rankings: Sequence[Sequence[int]], labels: Sequence[int]) -> float:
    """Mean of 1/rank of the label inside its top-K list, 0 when absent."""
    _check_pair(rankings, labels)
    total = 0.0
    for ranked, y in zip(rankings, labels):
        ranked = list(ranked)
        if y in ranked:
            total += 1.0 / (ranked.index(y) + 1)
    return total / len(labels)


def metrics_from_ranks(ranks: np.ndarray, ks: Sequence[int] = DEFAULT_KS) -> tuple:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise UsageError("cannot compute metrics over zero test cases")
    recall = {k: float(np.mean(ranks <= k)) for k in ks}
    mrr = {k: float(np.mean(np.where(ranks <= k, 1.0 / ranks, 0.0))) for k in ks}
    return recall, mrr


@dataclass
class EvalReport:
    method: str
    n_test: int
    recall: dict = field(default_factory=dict)
    mrr: dict = field(default_factory=dict)

    @property
    def ks(self) -> list:
        return sorted(self.recall)

    def rows(self) -> list:
        return [{"method": self.method, "K": k, "recall": self.recall[k], "mrr": self.mrr[k],
                 "n_test": self.n_test} for k in self.ks]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows())


def format_table(reports: Sequence[EvalReport]) -> str:
    """Aligned plain-text table with one row per method: R@K and MRR@K columns."""
    if not reports:
        return ""
    ks = reports[0].ks
    head = ["method"] + [f"R@{k}" for k in ks] + [f"MRR@{k}" for k in ks] + ["n_test"]
    body = [[r.method] + [f"{100 * r.recall[k]:.2f}" for k in ks]
            + [f"{100 * r.mrr[k]:.2f}" for k in ks] + [str(r.n_test)] for r in reports]
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)  # noqa: E731
                                for i, (c, w) in enumerate(zip(row, widths)))
    return "\n".join([fmt(head)] + [fmt(row) for row in body]) + "\n"


def rank_examples(ranker, examples, batch_size: int = 100) -> np.ndarray:
    """1-based label ranks of every example under ``ranker.score_sequences``."""
    ranks = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        scores = ranker.score_sequences([ex.prefix for ex in chunk])
        ranks.append(label_ranks(scores, [ex.label for ex in chunk]))
    return np.concatenate(ranks) if ranks else np.zeros(0, np.intp)


def evaluate(ranker, examples, ks: Sequence[int] = DEFAULT_KS, method: str = None,
             batch_size: int = 100) -> EvalReport:
    if len(examples) == 0:
        raise UsageError("evaluate needs at least one test example")
    ks = tuple(sorted(int(k) for k in ks))
    recall, mrr = metrics_from_ranks(rank_examples(ranker, examples, batch_size), ks)
    name = method or getattr(ranker, "method_name", type(ranker).__name__)
    return EvalReport(name, len(examples), recall, mrr)


def evaluate_by_length(ranker, examples, ks: Sequence[int] = DEFAULT_KS, method: str = None,
                       threshold: int = SHORT_SESSION_MAX) -> dict:
    """Separate reports for short (prefix length <= threshold) and long test cases."""
    name = method or getattr(ranker, "method_name", type(ranker).__name__)
    groups = {
        "short": [ex for ex in examples if len(ex.prefix) <= threshold],
        "long": [ex for ex in examples if len(ex.prefix) > threshold],
    }
    return {g: evaluate(ranker, exs, ks, f"{name}[{g}]") for g, exs in groups.items() if exs}


def topk_lists(ranker, sequences, k: int) -> list:
    return [list(map(int, row)) for row in topk_rows(ranker.score_sequences(sequences), k)]
