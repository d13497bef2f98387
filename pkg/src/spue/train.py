"""Mini-batch SGD training of the encoder on one selection state.

SGD uses the coupled momentum form: the weight-decay gradient enters the
velocity, i.e. v <- momentum*v + g + wd*p; p <- p - lr*v. The learning
rate is lr_initial through lr_drop_epoch (1-indexed, inclusive) and
lr_after_drop afterwards.
"""

import dataclasses

import numpy as np

from . import kernels
from .data import Index, Labeled, PseudoA, PseudoB
from .encoder import PARAM_NAMES
from .losses import KL_FORMS, backward, record_spue

ABLATIONS = ("full", "no_coop", "no_coop_no_unc")


class NonFiniteLossError(ArithmeticError):
    """Training produced a non-finite loss or parameter update."""


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """All scalar knobs of a run; defaults match the reference recipe."""

    er: float = 0.2
    alpha: float = 0.3
    gamma: float = 0.8
    kl_weight: float = 0.01
    epochs_per_iter: int = 70
    batch_size: int = 16
    lr_initial: float = 0.1
    lr_drop_epoch: int = 55
    lr_after_drop: float = 0.01
    momentum: float = 0.5
    weight_decay: float = 0.0005
    kl_form: str = "standard"
    warm_start: bool = True
    ablation: str = "full"
    hidden_dim: int = 128
    latent_dim: int = 32
    max_rank: int = 20
    same_camera_excluded: bool = False
    log_steps: bool = False
    seed: int = 1

    def __post_init__(self):
        if not 0.0 < self.er <= 1.0:
            raise ValueError("er must be in (0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        if self.epochs_per_iter < 1:
            raise ValueError("epochs_per_iter must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.lr_initial > 0 and self.lr_after_drop > 0):
            raise ValueError("learning rates must be > 0")
        if self.lr_drop_epoch < 1:
            raise ValueError("lr_drop_epoch must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.kl_form not in KL_FORMS:
            raise ValueError(f"kl_form must be one of {KL_FORMS}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")
        if self.hidden_dim < 1 or self.latent_dim < 1:
            raise ValueError("model dims must be >= 1")
        if self.max_rank < 1:
            raise ValueError("max_rank must be >= 1")

    def lr_at(self, epoch):
        return self.lr_initial if epoch <= self.lr_drop_epoch else self.lr_after_drop


@dataclasses.dataclass
class OptimizerState:
    velocity: dict

    @classmethod
    def zeros_like(cls, model):
        return cls(velocity={k: np.zeros_like(v) for k, v in model.params.items()})


@dataclasses.dataclass
class EpochLog:
    t: int
    epoch: int
    lr: float
    mean_total_loss: float
    mean_kl: float

    CSV_HEADER = "t,epoch,lr,mean_total_loss,mean_kl"

    def csv_row(self):
        return (f"{self.t},{self.epoch},{repr(float(self.lr))},"
                f"{repr(float(self.mean_total_loss))},{repr(float(self.mean_kl))}")


@dataclasses.dataclass
class StepLog:
    t: int
    step: int
    epoch: int
    breakdown: object

    def csv_row(self):
        return self.breakdown.csv_row(self.step, self.epoch)


def sgd_step(model, grads, opt_state, lr, momentum, weight_decay):
    """In-place momentum SGD update of every parameter tensor."""
    for name in PARAM_NAMES:
        p = model.params[name]
        kernels.sgd_update(p, grads[name], opt_state.velocity[name], lr, momentum, weight_decay)
        if not np.isfinite(p).all():
            raise NonFiniteLossError(f"non-finite values in parameter {name} after update")
    return model


def _check_consistent(dataset, state):
    a_ids = {e.sample_id for e in state.subset_a}
    b_ids = {e.sample_id for e in state.subset_b}
    i_ids = dict(zip(state.index_ids, range(len(state.index_ids))))
    for s in dataset.samples:
        st = s.state
        ok = (
            (isinstance(st, Labeled) and s.sample_id in state.labeled_ids)
            or (isinstance(st, PseudoA) and s.sample_id in a_ids)
            or (isinstance(st, PseudoB) and s.sample_id in b_ids)
            or (isinstance(st, Index) and i_ids.get(s.sample_id) == st.idx)
        )
        if not ok:
            raise ValueError(
                f"sample {s.sample_id}: dataset state {st!r} inconsistent with the selection state"
            )


def train_iteration(model, dataset, state, config, rng):
    """Train for config.epochs_per_iter epochs on the given selection state.

    The dataset's label states must already reflect `state` (see
    selfpaced.apply_selection). Re-initializes the index classifier (the
    index class set is new), shuffles all samples each epoch, and applies
    per-batch SGD steps. Returns (model, epoch_logs, step_logs);
    step_logs is empty unless config.log_steps.
    """
    _check_consistent(dataset, state)
    model.active_m = len(state.index_ids)
    model.reinit_index_rows(rng)
    opt_state = OptimizerState.zeros_like(model)
    n = len(dataset.samples)
    epoch_logs, step_logs = [], []
    step = 0
    for epoch in range(1, config.epochs_per_iter + 1):
        lr = config.lr_at(epoch)
        order = rng.permutation(n)
        totals, kls = [], []
        for start in range(0, n, config.batch_size):
            rows = order[start : start + config.batch_size]
            batch = [dataset.samples[i] for i in rows]
            breakdown, tape = record_spue(model, batch, config, rng)
            if not np.isfinite(breakdown.total):
                raise NonFiniteLossError(
                    f"non-finite loss at iteration t={state.t}, epoch {epoch}, "
                    f"batch starting at {start}"
                )
            grads = backward(model, tape)
            sgd_step(model, grads, opt_state, lr, config.momentum, config.weight_decay)
            totals.append(breakdown.total)
            kls.append(breakdown.l_kl)
            step += 1
            if config.log_steps:
                step_logs.append(StepLog(t=state.t, step=step, epoch=epoch, breakdown=breakdown))
        epoch_logs.append(EpochLog(
            t=state.t, epoch=epoch, lr=lr,
            mean_total_loss=sum(totals) / len(totals),
            mean_kl=sum(kls) / len(kls),
        ))
    return model, epoch_logs, step_logs
