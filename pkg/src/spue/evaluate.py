"""Retrieval evaluation (mean average precision, cumulative match curve)
and pseudo-label precision reporting.

The synthetic protocol holds the ground-truth identities out of training
supervision, not out of the feature pool: queries are the lowest-id
non-labeled sample of each identity, the gallery is every other
non-labeled sample, and the one-shot labeled samples take no part.
Queries without a single valid gallery match are excluded from the
averages and counted.
"""

import dataclasses
import warnings

import numpy as np

from . import kernels
from .encoder import forward_deterministic_batch


@dataclasses.dataclass(frozen=True)
class RetrievalProtocol:
    query_ids: tuple
    gallery_ids: tuple
    same_camera_excluded: bool = False

    def __post_init__(self):
        if not self.query_ids or not self.gallery_ids:
            raise ValueError("queries and gallery must be non-empty")
        if set(self.query_ids) & set(self.gallery_ids):
            raise ValueError("query and gallery ids overlap")


@dataclasses.dataclass
class EvalResult:
    map: float
    cmc: np.ndarray
    num_queries_used: int

    def rank(self, k):
        """CMC at rank k (1-indexed); saturates at the curve's last entry."""
        return float(self.cmc[min(k, len(self.cmc)) - 1])

    CSV_HEADER = "t,mAP,rank1,rank5,rank10,rank20,num_queries"

    def csv_row(self, t):
        vals = (self.map, self.rank(1), self.rank(5), self.rank(10), self.rank(20))
        return f"{t}," + ",".join(repr(float(v)) for v in vals) + f",{self.num_queries_used}"


def make_unlabeled_protocol(dataset, same_camera_excluded=False):
    """Queries = one non-labeled sample per identity (lowest sample_id),
    gallery = the remaining non-labeled samples."""
    queries = {}
    for s in dataset.unlabeled_samples():
        if s.identity not in queries:
            queries[s.identity] = s.sample_id
    query_ids = tuple(sorted(queries.values()))
    chosen = set(query_ids)
    gallery_ids = tuple(
        s.sample_id for s in dataset.unlabeled_samples() if s.sample_id not in chosen
    )
    return RetrievalProtocol(query_ids=query_ids, gallery_ids=gallery_ids,
                             same_camera_excluded=same_camera_excluded)


def rank_by_distance(query_vec, gallery_vecs, gallery_ids):
    """Gallery ids ascending by Euclidean distance, ties by sample_id."""
    q = np.ascontiguousarray(np.asarray(query_vec, dtype=np.float64)[None, :])
    g = np.ascontiguousarray(gallery_vecs, dtype=np.float64)
    sq = kernels.pairwise_sqdist(q, g)[0]
    ids = np.asarray(gallery_ids)
    order = np.lexsort((ids, sq))
    return [int(i) for i in ids[order]]


def rank_gallery(model, query, gallery):
    """Rank gallery samples for one query sample by embedding distance."""
    feats = np.ascontiguousarray([s.features for s in [query] + list(gallery)])
    emb = forward_deterministic_batch(model, feats)
    return rank_by_distance(emb[0], emb[1:], [s.sample_id for s in gallery])


def mean_average_precision(rankings, relevance):
    """Mean over queries of the average precision of the ranked gallery.

    Per query, AP = mean over retrieved relevant items of the precision
    at each such hit. Queries whose relevance set is empty (or never
    retrieved) are excluded from the mean and reported via a warning.
    """
    aps = []
    skipped = 0
    for ranked, rel in zip(rankings, relevance, strict=True):
        hits = 0
        precs = []
        for pos, gid in enumerate(ranked, start=1):
            if gid in rel:
                hits += 1
                precs.append(hits / pos)
        if not precs:
            skipped += 1
            continue
        aps.append(sum(precs) / len(precs))
    if skipped:
        warnings.warn(f"{skipped} queries had no relevant gallery items and were excluded")
    if not aps:
        raise ValueError("no query has a relevant gallery item")
    return sum(aps) / len(aps)


def cmc_curve(rankings, relevance, max_rank):
    """cmc[r] = fraction of queries whose first relevant hit is at rank <= r+1."""
    if max_rank < 1:
        raise ValueError("max_rank must be >= 1")
    first_hits = []
    skipped = 0
    for ranked, rel in zip(rankings, relevance, strict=True):
        hit = next((pos for pos, gid in enumerate(ranked, start=1) if gid in rel), None)
        if hit is None:
            skipped += 1
            continue
        first_hits.append(hit)
    if skipped:
        warnings.warn(f"{skipped} queries had no relevant gallery items and were excluded")
    if not first_hits:
        raise ValueError("no query has a relevant gallery item")
    cmc = np.empty(max_rank)
    for r in range(max_rank):
        cmc[r] = sum(1 for h in first_hits if h <= r + 1) / len(first_hits)
    return cmc


def evaluate_retrieval(model, dataset, protocol, max_rank=20):
    """Rank every query against the gallery and aggregate mAP and CMC."""
    all_ids = list(protocol.query_ids) + list(protocol.gallery_ids)
    emb = forward_deterministic_batch(model, dataset.features_of(all_ids))
    by_id = {sid: emb[i] for i, sid in enumerate(all_ids)}
    gallery = [dataset.sample(sid) for sid in protocol.gallery_ids]
    rankings, relevance = [], []
    for qid in protocol.query_ids:
        q = dataset.sample(qid)
        keep = gallery
        if protocol.same_camera_excluded:
            keep = [g for g in gallery if not (g.identity == q.identity and g.camera == q.camera)]
        rel = {g.sample_id for g in keep if g.identity == q.identity}
        ids = [g.sample_id for g in keep]
        vecs = np.ascontiguousarray([by_id[i] for i in ids]) if ids else np.zeros((0, emb.shape[1]))
        rankings.append(rank_by_distance(by_id[qid], vecs, ids) if ids else [])
        relevance.append(rel)
    used = sum(1 for rel in relevance if rel)
    if used == 0:
        raise ValueError("no query has a valid gallery match")
    with warnings.catch_warnings():
        # skipped queries already accounted for in num_queries_used
        warnings.simplefilter("ignore")
        m = mean_average_precision(rankings, relevance)
        cmc = cmc_curve(rankings, relevance, max_rank)
    return EvalResult(map=float(m), cmc=cmc, num_queries_used=used)


@dataclasses.dataclass
class PrecisionReport:
    """Pseudo-label precision per set; empty sets report 1.0 and are flagged."""

    pseudo_all: float
    subset_a: float
    subset_b: float
    empty_sets: tuple

    def astuple(self):
        return (self.pseudo_all, self.subset_a, self.subset_b)


def pseudo_label_precision(state, dataset):
    """Fraction of pseudo-labels matching ground truth, for P = A u B, A, and B."""

    def precision(estimates):
        if not estimates:
            return 1.0, True
        correct = sum(1 for e in estimates if dataset.sample(e.sample_id).identity == e.label)
        return correct / len(estimates), False

    p_a, empty_a = precision(state.subset_a)
    p_b, empty_b = precision(state.subset_b)
    p_all, empty_all = precision(tuple(state.subset_a) + tuple(state.subset_b))
    empty = tuple(
        name for name, flag in (("P", empty_all), ("A", empty_a), ("B", empty_b)) if flag
    )
    return PrecisionReport(pseudo_all=p_all, subset_a=p_a, subset_b=p_b, empty_sets=empty)
