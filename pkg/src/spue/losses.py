"""Loss terms and the combined training objective.

Four per-sample losses over the label-state splits:

  uncertainty  (Labeled, PseudoA): cross-entropy on a reparameterized
      latent draw plus a weighted KL regularizer toward N(0, I);
  determinacy  (PseudoB): cross-entropy on the deterministic embedding;
  exclusive    (Index): cross-entropy over per-sample index classes,
      pushing index-labeled embeddings apart.

The combined objective over a mixed batch is

  total = gamma * mean_labeled(L_unc)
        + gamma * mean_selected(L_unc for A rows, L_det for B rows)
        + (1 - gamma) * mean_index(L_exc)

with empty splits contributing 0. Each split's term is a mean, so the
loss scale does not drift as the selection expands.

Two KL forms are provided. "standard" uses mu^2 inside the sum and is a
true divergence (non-negative, zero iff mu=0, sigma=1). "paper_literal"
uses mu instead of mu^2 and can go negative; it exists for comparison
and is off by default.
"""

import dataclasses

import numpy as np

from . import kernels
from .data import Index, Labeled, PseudoA, PseudoB
from .encoder import (
    LOGVAR_MAX,
    LOGVAR_MIN,
    forward_deterministic,
    forward_gaussian,
    logits_identity,
    logits_index,
    logvar_from_trunk,
    mu_from_trunk,
    reparameterize,
    trunk_backward,
    trunk_forward,
    zero_gradients,
)

KL_FORMS = ("standard", "paper_literal")


@dataclasses.dataclass
class LossBreakdown:
    """Per-split means, counts, and the combined total for one batch."""

    l_ue_labeled: float
    l_ue_subset_a: float
    l_de_subset_b: float
    l_ex_index: float
    l_kl: float
    total: float
    n_labeled: int
    n_subset_a: int
    n_subset_b: int
    n_index: int

    CSV_HEADER = "step,epoch,l_ue_L,l_ue_A,l_de_B,l_ex_I,l_kl,total"

    def csv_row(self, step, epoch):
        vals = (self.l_ue_labeled, self.l_ue_subset_a, self.l_de_subset_b,
                self.l_ex_index, self.l_kl, self.total)
        return f"{step},{epoch}," + ",".join(repr(float(v)) for v in vals)


def _softmax_xent_row(logits, target):
    losses, _ = kernels.softmax_xent(
        np.ascontiguousarray(logits, dtype=np.float64)[None, :],
        np.array([target], dtype=np.intp),
    )
    return float(losses[0])


def cross_entropy(logits, target):
    """-log softmax(logits)[target], stabilized by max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ValueError("logits must be a vector with at least 2 classes")
    if not np.isfinite(logits).all():
        raise ValueError("non-finite logits")
    if not 0 <= target < logits.shape[0]:
        raise ValueError(f"target {target} out of range for {logits.shape[0]} classes")
    return _softmax_xent_row(logits, target)


def _kl_terms(mu, log_sigma_sq, form):
    if form == "standard":
        first = mu * mu
    elif form == "paper_literal":
        first = mu
    else:
        raise ValueError(f"kl form must be one of {KL_FORMS}")
    return 0.5 * np.sum(first + np.exp(log_sigma_sq) - log_sigma_sq - 1.0, axis=-1)


def kl_to_standard_normal(emb, form="standard"):
    """KL(N(mu, sigma^2 I) || N(0, I)); see module docstring for the two forms."""
    log_sigma_sq = 2.0 * np.log(emb.sigma)
    return float(_kl_terms(emb.mu, log_sigma_sq, form))


def loss_uncertainty(model, sample, label, rng, kl_weight, kl_form="standard"):
    """Classification loss on one latent draw plus kl_weight * KL."""
    if not isinstance(sample.state, (Labeled, PseudoA)):
        raise ValueError(f"sample {sample.sample_id}: uncertainty loss needs a Labeled or PseudoA state")
    emb = forward_gaussian(model, sample.features)
    r = reparameterize(emb, rng)
    ce = cross_entropy(logits_identity(model, r), label)
    return ce + kl_weight * kl_to_standard_normal(emb, kl_form)


def loss_determinacy(model, sample, pseudo_label):
    """Plain cross-entropy on the deterministic embedding (no sampling, no KL)."""
    if not isinstance(sample.state, PseudoB):
        raise ValueError(f"sample {sample.sample_id}: determinacy loss needs a PseudoB state")
    return cross_entropy(logits_identity(model, forward_deterministic(model, sample.features)), pseudo_label)


def loss_exclusive(model, sample, index_label, active_m=None):
    """Cross-entropy over the active index classes against the sample's own index."""
    if not isinstance(sample.state, Index):
        raise ValueError(f"sample {sample.sample_id}: exclusive loss needs an Index state")
    if active_m is None:
        active_m = model.active_m
    if not 0 <= index_label < active_m:
        raise ValueError(f"index label {index_label} out of range for active_m={active_m}")
    logits = logits_index(model, forward_deterministic(model, sample.features), active_m)
    if active_m == 1:
        return 0.0  # single class: softmax probability is 1
    return _softmax_xent_row(logits, index_label)


@dataclasses.dataclass
class SpueTape:
    """Intermediates recorded by record_spue, consumed by backward()."""

    model_id: int
    x: np.ndarray
    z1: np.ndarray
    t: np.ndarray
    mu: np.ndarray
    ue_pos: np.ndarray
    de_pos: np.ndarray
    ex_pos: np.ndarray
    weights_ue: np.ndarray
    weights_de: np.ndarray
    weights_ex: np.ndarray
    kl_weight: float
    kl_form: str
    # uncertainty-path caches (empty arrays when no UE rows)
    t_ue: np.ndarray
    mu_ue: np.ndarray
    lv_raw: np.ndarray
    lv: np.ndarray
    sigma: np.ndarray
    eps: np.ndarray
    r: np.ndarray
    dlog_ue: np.ndarray | None = None
    dlog_de: np.ndarray | None = None
    dlog_ex: np.ndarray | None = None
    active_m: int = 0
    consumed: bool = False


def _split_batch(batch, n_identities, active_m):
    ue_pos, de_pos, ex_pos = [], [], []
    ue_targets, de_targets, ex_targets = [], [], []
    ue_is_labeled = []
    for i, s in enumerate(batch):
        st = s.state
        if isinstance(st, Labeled):
            ue_pos.append(i); ue_targets.append(st.identity); ue_is_labeled.append(True)
        elif isinstance(st, PseudoA):
            ue_pos.append(i); ue_targets.append(st.label); ue_is_labeled.append(False)
        elif isinstance(st, PseudoB):
            de_pos.append(i); de_targets.append(st.label)
        elif isinstance(st, Index):
            if not 0 <= st.idx < active_m:
                raise ValueError(
                    f"sample {s.sample_id}: index label {st.idx} out of range for active_m={active_m}"
                )
            ex_pos.append(i); ex_targets.append(st.idx)
        else:
            raise ValueError(f"sample {s.sample_id}: unknown label state {st!r}")
    for tgt in ue_targets + de_targets:
        if not 0 <= tgt < n_identities:
            raise ValueError(f"identity target {tgt} out of range")
    return (
        np.array(ue_pos, dtype=np.intp), np.array(de_pos, dtype=np.intp),
        np.array(ex_pos, dtype=np.intp),
        np.array(ue_targets, dtype=np.intp), np.array(de_targets, dtype=np.intp),
        np.array(ex_targets, dtype=np.intp),
        np.array(ue_is_labeled, dtype=bool),
    )


def record_spue(model, batch, config, rng):
    """Evaluate the combined objective on a mixed batch and record a tape.

    `config` needs gamma, kl_weight, and kl_form attributes. One eps draw
    of length d is consumed from `rng` per uncertainty-trained sample, in
    batch order. Returns (LossBreakdown, SpueTape).
    """
    if not batch:
        raise ValueError("empty batch")
    # overflow to inf is reported through the non-finite abort, not a warning
    with np.errstate(over="ignore", invalid="ignore"):
        return _record_spue(model, batch, config, rng)


def _record_spue(model, batch, config, rng):
    gamma, kl_weight, kl_form = config.gamma, config.kl_weight, config.kl_form
    if kl_form not in KL_FORMS:
        raise ValueError(f"kl form must be one of {KL_FORMS}")
    d = model.dims.d_latent
    active_m = model.active_m
    ue_pos, de_pos, ex_pos, ue_t, de_t, ex_t, ue_lab = _split_batch(
        batch, model.dims.n_identities, active_m
    )
    x = np.ascontiguousarray([s.features for s in batch])
    if x.shape[1] != model.dims.d_in:
        raise ValueError(f"batch feature length {x.shape[1]} != D_in {model.dims.d_in}")
    t, z1 = trunk_forward(model, x)
    mu = mu_from_trunk(model, t)
    p = model.params
    empty2 = np.zeros((0, d))

    n_l = int(ue_lab.sum())
    n_a = len(ue_pos) - n_l
    n_b = len(de_pos)
    n_i = len(ex_pos)
    n_sel = n_a + n_b

    l_ue_labeled = l_ue_a = l_de_b = l_ex_i = l_kl = 0.0
    t_ue = mu_ue = lv_raw = lv = sigma = eps = r = empty2
    dlog_ue = dlog_de = dlog_ex = None

    if len(ue_pos):
        t_ue = np.ascontiguousarray(t[ue_pos])
        mu_ue = np.ascontiguousarray(mu[ue_pos])
        lv_raw, lv = logvar_from_trunk(model, t_ue)
        sigma = np.exp(0.5 * lv)
        eps = rng.standard_normal((len(ue_pos), d))
        r = np.ascontiguousarray(mu_ue + eps * sigma)
        logits = kernels.affine_forward(r, p["w_id"], p["b_id"])
        ce, dlog_ue = kernels.softmax_xent(logits, ue_t)
        kl = _kl_terms(mu_ue, lv, kl_form)
        per_row = ce + kl_weight * kl
        if n_l:
            l_ue_labeled = float(per_row[ue_lab].sum() / n_l)
        if n_a:
            l_ue_a = float(per_row[~ue_lab].sum() / n_a)
        l_kl = float(kl.sum() / len(ue_pos))
    if n_b:
        mu_de = np.ascontiguousarray(mu[de_pos])
        logits = kernels.affine_forward(mu_de, p["w_id"], p["b_id"])
        ce, dlog_de = kernels.softmax_xent(logits, de_t)
        l_de_b = float(ce.sum() / n_b)
    if n_i:
        mu_ex = np.ascontiguousarray(mu[ex_pos])
        w_act = np.ascontiguousarray(p["w_index"][:active_m])
        logits = kernels.affine_forward(mu_ex, w_act, np.zeros(active_m))
        ce, dlog_ex = kernels.softmax_xent(logits, ex_t)
        l_ex_i = float(ce.sum() / n_i)

    total = 0.0
    if n_l:
        total += gamma * l_ue_labeled
    if n_sel:
        total += gamma * (n_a * l_ue_a + n_b * l_de_b) / n_sel
    if n_i:
        total += (1.0 - gamma) * l_ex_i

    # per-row weights = d total / d per-row loss
    w_ue = np.empty(len(ue_pos))
    if len(ue_pos):
        w_ue[ue_lab] = gamma / n_l if n_l else 0.0
        w_ue[~ue_lab] = gamma / n_sel if n_sel else 0.0
    w_de = np.full(n_b, gamma / n_sel if n_sel else 0.0)
    w_ex = np.full(n_i, (1.0 - gamma) / n_i if n_i else 0.0)

    breakdown = LossBreakdown(
        l_ue_labeled=l_ue_labeled, l_ue_subset_a=l_ue_a, l_de_subset_b=l_de_b,
        l_ex_index=l_ex_i, l_kl=l_kl, total=float(total),
        n_labeled=n_l, n_subset_a=n_a, n_subset_b=n_b, n_index=n_i,
    )
    tape = SpueTape(
        model_id=id(model), x=x, z1=z1, t=t, mu=mu,
        ue_pos=ue_pos, de_pos=de_pos, ex_pos=ex_pos,
        weights_ue=w_ue, weights_de=w_de, weights_ex=w_ex,
        kl_weight=kl_weight, kl_form=kl_form,
        t_ue=t_ue, mu_ue=mu_ue, lv_raw=lv_raw, lv=lv, sigma=sigma, eps=eps, r=r,
        dlog_ue=dlog_ue, dlog_de=dlog_de, dlog_ex=dlog_ex, active_m=active_m,
    )
    return breakdown, tape


def loss_spue(model, batch, config, rng):
    """Combined objective on a mixed batch; see record_spue for details."""
    breakdown, _ = record_spue(model, batch, config, rng)
    return breakdown


def backward(model, tape):
    """Gradients of the recorded objective for every parameter tensor.

    Raises if no forward tape is supplied, if the tape belongs to a
    different model, or if it was already consumed (parameters may have
    changed since it was recorded).
    """
    if tape is None:
        raise ValueError("backward requires the tape recorded by a forward pass")
    if tape.model_id != id(model):
        raise ValueError("tape was recorded for a different model")
    if tape.consumed:
        raise ValueError("tape already consumed; re-run the forward pass")
    tape.consumed = True

    p = model.params
    grads = zero_gradients(model)
    batch_size, d = tape.mu.shape
    d_mu = np.zeros((batch_size, d))

    if len(tape.ex_pos):
        dlog = np.ascontiguousarray(tape.dlog_ex * tape.weights_ex[:, None])
        mu_ex = np.ascontiguousarray(tape.mu[tape.ex_pos])
        w_act = np.ascontiguousarray(p["w_index"][: tape.active_m])
        dmu_ex, dw_act, _ = kernels.affine_backward(mu_ex, w_act, dlog)
        grads["w_index"][: tape.active_m] = dw_act
        d_mu[tape.ex_pos] += dmu_ex

    if len(tape.de_pos):
        dlog = np.ascontiguousarray(tape.dlog_de * tape.weights_de[:, None])
        mu_de = np.ascontiguousarray(tape.mu[tape.de_pos])
        dmu_de, dw_id, db_id = kernels.affine_backward(mu_de, p["w_id"], dlog)
        grads["w_id"] += dw_id
        grads["b_id"] += db_id
        d_mu[tape.de_pos] += dmu_de

    d_lv_raw = np.zeros((len(tape.ue_pos), d))
    if len(tape.ue_pos):
        w = tape.weights_ue[:, None]
        dlog = np.ascontiguousarray(tape.dlog_ue * w)
        dr, dw_id, db_id = kernels.affine_backward(tape.r, p["w_id"], dlog)
        grads["w_id"] += dw_id
        grads["b_id"] += db_id
        d_sigma = dr * tape.eps
        d_lv = d_sigma * 0.5 * tape.sigma
        lam = tape.kl_weight
        if tape.kl_form == "standard":
            d_mu_kl = lam * tape.mu_ue * w
        else:
            d_mu_kl = lam * 0.5 * w * np.ones_like(tape.mu_ue)
        d_lv += lam * 0.5 * (np.exp(tape.lv) - 1.0) * w
        # clamp: zero gradient outside the open interval
        mask = (tape.lv_raw > LOGVAR_MIN) & (tape.lv_raw < LOGVAR_MAX)
        d_lv_raw = np.ascontiguousarray(d_lv * mask)
        d_mu[tape.ue_pos] += dr + d_mu_kl

    d_t, grads["w_mu"], grads["b_mu"] = kernels.affine_backward(tape.t, p["w_mu"], d_mu)
    if len(tape.ue_pos):
        d_t_ue, grads["w_logvar"], grads["b_logvar"] = kernels.affine_backward(
            tape.t_ue, p["w_logvar"], d_lv_raw
        )
        d_t[tape.ue_pos] += d_t_ue
    for name, g in trunk_backward(model, tape.x, tape.z1, np.ascontiguousarray(d_t)).items():
        grads[name] = g
    return grads
