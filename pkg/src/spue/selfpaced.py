"""Pseudo-label estimation, expansion-rate selection, subset division,
and the outer self-paced training loop.

Each non-labeled sample gets a pseudo-label from its nearest labeled
neighbor in the deterministic embedding space; the distance is the
confidence (smaller = more confident). At selection step t the
k = min(round(er*t*m), m) most confident estimates become the selected
pseudo-label set; its most confident floor(alpha*k) go to subset A
(uncertainty training), the rest to subset B (determinacy training);
everything unselected gets a dense index label for the exclusive loss.

The outer loop alternates: train on the current selection state,
re-estimate pseudo-labels with the updated model, expand the selection.
Step t=0 is the initial state (nothing selected yet); it satisfies the
same size law since round(er*0*m) = 0.
"""

import dataclasses
import math
from typing import NamedTuple

import numpy as np

from . import kernels
from .data import Index, PseudoA, PseudoB
from .encoder import EncoderDims, EncoderModel, forward_deterministic_batch
from .evaluate import evaluate_retrieval, make_unlabeled_protocol, pseudo_label_precision
from .train import train_iteration


class Estimate(NamedTuple):
    sample_id: int
    label: int
    conf: float


def _round_half_up(x):
    # 1e-9 guard: 0.15*10 is 1.4999... in binary floating point but must round to 2
    return int(math.floor(x + 0.5 + 1e-9))


def _floor_count(x):
    # 1e-9 guard: 0.3*10 is 2.999... in binary floating point but must floor to 3
    return int(math.floor(x + 1e-9))


@dataclasses.dataclass(frozen=True)
class SelectionState:
    """The step-t partition of the dataset into L, A, B, and index sets."""

    t: int
    er: float
    alpha: float
    labeled_ids: tuple
    subset_a: tuple  # Estimates, ascending confidence
    subset_b: tuple
    index_ids: tuple  # dense index label == position

    @property
    def k(self):
        return len(self.subset_a) + len(self.subset_b)

    @property
    def m(self):
        return self.k + len(self.index_ids)

    @classmethod
    def initial(cls, dataset, er, alpha):
        """Step-0 state: subsets empty, every non-labeled sample index-labeled."""
        labeled = tuple(s.sample_id for s in dataset.labeled_samples())
        if len(labeled) != dataset.n:
            raise ValueError("dataset must be one-shot split before training")
        index_ids = tuple(s.sample_id for s in dataset.unlabeled_samples())
        return cls(t=0, er=er, alpha=alpha, labeled_ids=labeled,
                   subset_a=(), subset_b=(), index_ids=index_ids)


def estimate_pseudo_labels(model, dataset):
    """Nearest-labeled-neighbor estimates for every non-labeled sample.

    Distances are Euclidean between deterministic embeddings; ties go to
    the lower identity. Returns Estimates in sample_id order.
    """
    labeled = sorted(dataset.labeled_samples(), key=lambda s: s.identity)
    unlabeled = dataset.unlabeled_samples()
    if not labeled or not unlabeled:
        raise ValueError("dataset must be one-shot split before pseudo-label estimation")
    ref = forward_deterministic_batch(model, dataset.features_of([s.sample_id for s in labeled]))
    emb = forward_deterministic_batch(model, dataset.features_of([s.sample_id for s in unlabeled]))
    sq = kernels.pairwise_sqdist(np.ascontiguousarray(emb), np.ascontiguousarray(ref))
    nearest = sq.argmin(axis=1)  # first minimum = lowest identity on exact ties
    conf = np.sqrt(sq[np.arange(len(unlabeled)), nearest])
    return [
        Estimate(s.sample_id, labeled[j].identity, float(c))
        for s, j, c in zip(unlabeled, nearest, conf)
    ]


def select_and_divide(estimates, t, er, alpha, m, labeled_ids=()):
    """Top-k selection by ascending confidence and the A/B split.

    k = min(round(er*t*m), m); |A| = floor(alpha*k). Ties in confidence
    break by sample_id; unselected samples get dense index labels in
    sample_id order. Deterministic.
    """
    if er <= 0:
        raise ValueError("er must be > 0")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    if t < 1:
        raise ValueError("selection step t must be >= 1")
    if len(estimates) != m:
        raise ValueError(f"expected estimates for all {m} non-labeled samples, got {len(estimates)}")
    if len({e.sample_id for e in estimates}) != m:
        raise ValueError("duplicate sample_id in estimates")
    ordered = sorted(estimates, key=lambda e: (e.conf, e.sample_id))
    k = min(_round_half_up(er * t * m), m)
    n_a = _floor_count(alpha * k)
    selected = ordered[:k]
    index_ids = tuple(sorted(e.sample_id for e in ordered[k:]))
    return SelectionState(
        t=t, er=er, alpha=alpha, labeled_ids=tuple(labeled_ids),
        subset_a=tuple(selected[:n_a]), subset_b=tuple(selected[n_a:]),
        index_ids=index_ids,
    )


def apply_selection(dataset, state):
    """Dataset with label states rewritten to match `state`.

    Validates that the state partitions exactly the non-labeled samples
    and that labeled ids agree.
    """
    labeled_ids = {s.sample_id for s in dataset.labeled_samples()}
    if state.labeled_ids and set(state.labeled_ids) != labeled_ids:
        raise ValueError("selection state labeled_ids disagree with the dataset")
    a_ids = {e.sample_id for e in state.subset_a}
    b_ids = {e.sample_id for e in state.subset_b}
    i_ids = set(state.index_ids)
    if len(a_ids) + len(b_ids) + len(i_ids) != state.m:
        raise ValueError("selection state sets overlap")
    unlabeled_ids = {s.sample_id for s in dataset.unlabeled_samples()}
    if a_ids | b_ids | i_ids != unlabeled_ids:
        raise ValueError("selection state does not cover the non-labeled samples")
    states = {}
    for e in state.subset_a:
        states[e.sample_id] = PseudoA(e.label, e.conf)
    for e in state.subset_b:
        states[e.sample_id] = PseudoB(e.label, e.conf)
    for pos, sid in enumerate(state.index_ids):
        states[sid] = Index(pos)
    return dataset.with_states(states)


@dataclasses.dataclass
class IterationRecord:
    t: int
    k: int
    size_a: int
    size_b: int
    size_i: int
    precision_p: float
    precision_a: float
    precision_b: float
    map: float
    rank1: float
    rank5: float
    rank10: float
    rank20: float
    num_queries: int

    CSV_HEADER = "t,k,size_A,size_B,size_I,precision_P,precision_A,precision_B,mAP,rank1,rank5,rank10,rank20"

    def csv_row(self):
        ints = (self.t, self.k, self.size_a, self.size_b, self.size_i)
        floats = (self.precision_p, self.precision_a, self.precision_b, self.map,
                  self.rank1, self.rank5, self.rank10, self.rank20)
        return ",".join(str(v) for v in ints) + "," + ",".join(repr(float(v)) for v in floats)


@dataclasses.dataclass
class TrainingReport:
    records: list
    states: list
    epoch_logs: list
    step_logs: list
    model: EncoderModel


def _effective_alpha(config):
    if config.ablation == "no_coop":
        return 1.0
    if config.ablation == "no_coop_no_unc":
        return 0.0
    return config.alpha


def run_self_paced(dataset, config):
    """Full self-paced loop on a one-shot-split dataset.

    Trains on selection states t = 0, 1, ... until the step with k = m
    has been trained on; evaluates retrieval and pseudo-label precision
    after every iteration. Fully determined by (dataset, config).
    """
    if dataset.m < 1:
        raise ValueError("dataset has no unlabeled samples")
    dims = EncoderDims(
        d_in=dataset.d_in, hidden=config.hidden_dim, d_latent=config.latent_dim,
        n_identities=dataset.n, m_cap=dataset.m,
    )
    init_rng = np.random.default_rng([config.seed, 0])
    train_rng = np.random.default_rng([config.seed, 1])
    model = EncoderModel.initialize(dims, init_rng)
    protocol = make_unlabeled_protocol(dataset, config.same_camera_excluded)
    alpha = _effective_alpha(config)
    state = SelectionState.initial(dataset, config.er, alpha)

    records, states, epoch_logs, step_logs = [], [state], [], []
    while True:
        if not config.warm_start and state.t > 0:
            model = EncoderModel.initialize(dims, np.random.default_rng([config.seed, 2, state.t]))
        work = apply_selection(dataset, state)
        model, elogs, slogs = train_iteration(model, work, state, config, train_rng)
        epoch_logs.extend(elogs)
        step_logs.extend(slogs)
        prec = pseudo_label_precision(state, dataset)
        res = evaluate_retrieval(model, dataset, protocol, max_rank=config.max_rank)
        records.append(IterationRecord(
            t=state.t, k=state.k, size_a=len(state.subset_a), size_b=len(state.subset_b),
            size_i=len(state.index_ids),
            precision_p=prec.pseudo_all, precision_a=prec.subset_a, precision_b=prec.subset_b,
            map=res.map, rank1=res.rank(1), rank5=res.rank(5), rank10=res.rank(10),
            rank20=res.rank(20), num_queries=res.num_queries_used,
        ))
        if state.k == dataset.m:
            break
        estimates = estimate_pseudo_labels(model, dataset)
        state = select_and_divide(
            estimates, t=state.t + 1, er=config.er, alpha=alpha,
            m=dataset.m, labeled_ids=state.labeled_ids,
        )
        states.append(state)
    return TrainingReport(records=records, states=states, epoch_logs=epoch_logs,
                          step_logs=step_logs, model=model)
