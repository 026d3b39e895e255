"""Target ranking and top-k hit rates, pooled and per stratum."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import ContractError, DataError

DEFAULT_KS = (1, 5, 10)
Ranking = List[Tuple[str, float]]


def rank_scores(target_ids: Sequence[str], scores: Sequence[float]) -> Ranking:
    """Descending score; equal scores fall back to ascending target id."""
    if len(target_ids) != len(scores):
        raise ContractError(f"{len(target_ids)} targets but {len(scores)} scores")
    if not len(target_ids):
        raise ContractError("cannot rank an empty target list")
    pairs = [(str(t), float(s)) for t, s in zip(target_ids, scores)]
    return sorted(pairs, key=lambda p: (-p[1], p[0]))


def score_matrix(model, query_features: np.ndarray, target_features: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Symmetric pair scores for every (query, target) combination, shape (Q, T)."""
    nq, nt = len(query_features), len(target_features)
    qi, ti = np.divmod(np.arange(nq * nt), nt)
    out = np.empty(nq * nt, dtype=np.float64)
    for start in range(0, nq * nt, batch_size):
        sl = slice(start, start + batch_size)
        out[sl] = model.score_features(query_features[qi[sl]], target_features[ti[sl]])
    return out.reshape(nq, nt)


def rank_targets(
    query: np.ndarray,
    targets: Mapping[str, np.ndarray],
    model,
    batch_size: int = 64,
) -> Ranking:
    """Rank target images for one query image by eval-mode pair score."""
    if not targets:
        raise ContractError("targets must not be empty")
    ids = list(targets)
    tf = np.concatenate([
        model.features(np.stack([targets[i] for i in ids[s:s + batch_size]])).data
        for s in range(0, len(ids), batch_size)
    ])
    qf = model.features(query[None]).data
    return rank_scores(ids, score_matrix(model, qf, tf, batch_size)[0])


def rank_all(
    query_ids: Sequence[str],
    query_features: np.ndarray,
    target_ids: Sequence[str],
    target_features: np.ndarray,
    model,
    workers: int = 1,
    chunk: int = 32,
) -> Dict[str, Ranking]:
    """Rankings for many queries; chunks run on a thread pool, results keep query order."""
    starts = list(range(0, len(query_ids), chunk))

    def job(s):
        return score_matrix(model, query_features[s:s + chunk], target_features)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(job, starts))
    else:
        blocks = [job(s) for s in starts]
    scores = np.concatenate(blocks) if blocks else np.zeros((0, len(target_ids)))
    return {q: rank_scores(target_ids, row) for q, row in zip(query_ids, scores)}


def _check(rankings: Mapping[str, Ranking], truth: Mapping[str, Set[str]], k: int) -> None:
    if k < 1:
        raise ContractError(f"k must be positive, got {k}")
    for q, ranking in rankings.items():
        if q not in truth:
            raise DataError(f"query {q!r} has no ground truth")
        if not truth[q]:
            raise DataError(f"query {q!r} has no true target")
        if k > len(ranking):
            raise ContractError(f"k={k} exceeds the {len(ranking)} ranked targets of {q!r}")


def hit_rate(rankings: Mapping[str, Ranking], ground_truth: Mapping[str, Set[str]], k: int) -> float:
    """Fraction of queries with at least one true target in the top k."""
    _check(rankings, ground_truth, k)
    if not rankings:
        raise ContractError("no rankings to score")
    hits = sum(any(t in ground_truth[q] for t, _ in r[:k]) for q, r in rankings.items())
    return hits / len(rankings)


def recall_at_k(rankings: Mapping[str, Ranking], ground_truth: Mapping[str, Set[str]], k: int) -> float:
    """Mean fraction of each query's true targets found in its top k."""
    _check(rankings, ground_truth, k)
    if not rankings:
        raise ContractError("no rankings to score")
    per_query = [
        sum(t in ground_truth[q] for t, _ in r[:k]) / len(ground_truth[q]) for q, r in rankings.items()
    ]
    return float(np.mean(per_query))


@dataclass
class RetrievalReport:
    """Per-query rankings plus hit/recall rates per grouping and stratum.

    ``strata[grouping][stratum]`` holds ``count``, ``hit@k`` and ``recall@k``;
    every grouping also carries the pooled stratum ``"all"``.
    """

    ks: Tuple[int, ...]
    rankings: Dict[str, Ranking]
    strata: Dict[str, Dict[str, dict]] = field(default_factory=dict)

    def rate(self, grouping: str, stratum, k: int) -> Optional[float]:
        entry = self.strata.get(grouping, {}).get(str(stratum))
        return None if entry is None else entry[f"hit@{k}"]

    def to_dict(self, include_rankings: bool = True, top: int = 10) -> dict:
        out = {"ks": list(self.ks), "strata": self.strata}
        if include_rankings:
            out["rankings"] = {
                q: [[t, round(s, 9)] for t, s in r[:top]] for q, r in sorted(self.rankings.items())
            }
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(**kwargs), indent=1, sort_keys=True) + "\n"

    def to_table(self) -> str:
        lines = []
        for grouping, strata in self.strata.items():
            head = f"{grouping:<14}{'count':>7}" + "".join(f"{'top ' + str(k):>9}" for k in self.ks)
            lines += [head, "-" * len(head)]
            for name, entry in strata.items():
                rates = "".join(f"{entry[f'hit@{k}']:>9.3f}" for k in self.ks)
                lines.append(f"{name:<14}{entry['count']:>7}{rates}")
            lines.append("")
        return "\n".join(lines)


def _stratum_entry(rankings, truth, ks) -> dict:
    entry = {"count": len(rankings)}
    for k in ks:
        entry[f"hit@{k}"] = hit_rate(rankings, truth, k)
        entry[f"recall@{k}"] = recall_at_k(rankings, truth, k)
    return entry


def stratified_report(
    rankings: Mapping[str, Ranking],
    ground_truth: Mapping[str, Set[str]],
    groupings: Mapping[str, Mapping[str, int]],
    ks: Sequence[int] = DEFAULT_KS,
) -> RetrievalReport:
    """Hit rates for every stratum of every grouping, plus the pooled "all" row.

    ``groupings`` maps a grouping name (e.g. noise level, quality decile) to a
    per-query stratum label. Strata without queries are left out.
    """
    ks = tuple(int(k) for k in ks)
    n_targets = min((len(r) for r in rankings.values()), default=0)
    ks = tuple(k for k in ks if k <= n_targets) or ks
    report = RetrievalReport(ks=ks, rankings=dict(rankings))
    for name, labels in groupings.items():
        missing = [q for q in rankings if q not in labels]
        if missing:
            raise DataError(f"grouping {name!r} has no stratum for query {missing[0]!r}")
        strata: Dict[str, dict] = {}
        for level in sorted({labels[q] for q in rankings}):
            subset = {q: r for q, r in rankings.items() if labels[q] == level}
            strata[str(level)] = _stratum_entry(subset, ground_truth, ks)
        strata["all"] = _stratum_entry(rankings, ground_truth, ks)
        report.strata[name] = strata
    if not groupings:
        report.strata["pooled"] = {"all": _stratum_entry(rankings, ground_truth, ks)}
    return report


def scorer_rankings(
    query_ids: Sequence[str], target_ids: Sequence[str], scorer: Callable[[str, str], float]
) -> Dict[str, Ranking]:
    """Rankings from an arbitrary (query id, target id) -> score function."""
    return {q: rank_scores(target_ids, [scorer(q, t) for t in target_ids]) for q in query_ids}
