"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines. The
heavyweight end-to-end runs are shared through module fixtures; the
whole suite targets well under two minutes on one CPU core.
"""

import io
import time
from fractions import Fraction

import numpy as np
import pytest

from helpers import (
    max_gradcheck_error,
    oracle_average_precision,
    oracle_cmc,
    oracle_nearest_labeled,
    perturb_params,
)
from spue.data import (
    Index,
    Labeled,
    PseudoA,
    PseudoB,
    Sample,
    SynthSpec,
    generate_synthetic,
    one_shot_split,
)
from spue.encoder import EncoderDims, EncoderModel, GaussianEmbedding, forward_deterministic, reparameterize
from spue.evaluate import cmc_curve, mean_average_precision
from spue.losses import backward, kl_to_standard_normal, loss_spue, record_spue
from spue.selfpaced import Estimate, IterationRecord, estimate_pseudo_labels, run_self_paced, select_and_divide
from spue.train import TrainConfig

# Desk-scale stable learning rate (the reference recipe's 0.1 diverges on
# the batch-norm-free toy encoder; see README).
LR = dict(lr_initial=0.02, lr_after_drop=0.002)

CLEAN_SPEC = SynthSpec(n_identities=50, samples_per_identity=20, d_in=64,
                       cluster_spread=0.1, noise_heterogeneity=0.0, overlap=1.0, seed=1)
CLEAN_CONFIG = TrainConfig(er=0.2, alpha=0.3, gamma=0.8, kl_weight=0.01,
                           epochs_per_iter=30, seed=1, **LR)

OVERLAP_SEEDS = (11, 12, 13)


def overlap_spec(seed):
    return SynthSpec(n_identities=20, samples_per_identity=10, d_in=32,
                     cluster_spread=0.15, noise_heterogeneity=0.3, overlap=0.4, seed=seed)


def overlap_config(seed, ablation):
    return TrainConfig(er=0.25, alpha=0.3, gamma=0.8, kl_weight=0.01,
                       epochs_per_iter=12, ablation=ablation, seed=seed, **LR)


@pytest.fixture(scope="module")
def clean_run():
    dataset = one_shot_split(generate_synthetic(CLEAN_SPEC))
    start = time.perf_counter()
    report = run_self_paced(dataset, CLEAN_CONFIG)
    elapsed = time.perf_counter() - start
    return dataset, report, elapsed


@pytest.fixture(scope="module")
def overlap_runs():
    out = {}
    for seed in OVERLAP_SEEDS:
        dataset = one_shot_split(generate_synthetic(overlap_spec(seed)))
        for ablation in ("full", "no_coop"):
            out[(seed, ablation)] = run_self_paced(dataset, overlap_config(seed, ablation))
    return out


def iteration_csv_bytes(report):
    buf = io.StringIO()
    buf.write(IterationRecord.CSV_HEADER + "\n")
    for r in report.records:
        buf.write(r.csv_row() + "\n")
    return buf.getvalue().encode()


# --------------------------------------------------------------------------
# criterion 1: gradient soundness
# --------------------------------------------------------------------------

def test_criterion_1_gradient_soundness():
    start = time.perf_counter()
    dims = EncoderDims(d_in=16, hidden=24, d_latent=8, n_identities=5, m_cap=6)
    rng = np.random.default_rng(100)

    def build(zero_classifier=False):
        model = perturb_params(EncoderModel.initialize(dims, np.random.default_rng(7)),
                               np.random.default_rng(8), 0.2)
        model.active_m = 4
        if zero_classifier:
            model.params["w_id"][:] = 0.0
            model.params["b_id"][:] = 0.0
        return model

    def batch(states):
        return [Sample(i, rng.standard_normal(16), i % 5, 0, st)
                for i, st in enumerate(states)]

    ue = batch([Labeled(0), Labeled(1), PseudoA(2, 0.1), PseudoA(3, 0.2)])
    de = batch([PseudoB(0, 0.5), PseudoB(1, 0.6), PseudoB(4, 0.7)])
    ex = batch([Index(0), Index(1), Index(2), Index(3)])
    mixed = batch([Labeled(0), PseudoA(1, 0.1), PseudoA(2, 0.2),
                   PseudoB(3, 0.5), PseudoB(4, 0.6), Index(0), Index(2), Index(3)])

    trunk = ("w1", "b1", "w2", "b2", "w_mu", "b_mu")
    heads = trunk + ("w_logvar", "b_logvar")
    cases = [
        ("L_CE", ue, dict(gamma=1.0, kl_weight=0.0), False, heads + ("w_id", "b_id")),
        ("L_KL standard", ue, dict(gamma=1.0, kl_weight=1.0), True, heads),
        ("L_KL literal", ue, dict(gamma=1.0, kl_weight=1.0, kl_form="paper_literal"), True, heads),
        ("L_DE", de, dict(gamma=1.0), False, trunk + ("w_id", "b_id")),
        ("L_EX", ex, dict(gamma=0.0), False, trunk + ("w_index",)),
        ("combined", mixed, dict(gamma=0.8, kl_weight=0.01), False,
         heads + ("w_id", "b_id", "w_index")),
    ]
    worst = {}
    for name, b, cfg_kw, zero_cls, names in cases:
        model = build(zero_cls)
        cfg = TrainConfig(seed=0, **cfg_kw)

        def loss_fn():
            return loss_spue(model, b, cfg, np.random.default_rng(500)).total

        def grad_fn():
            _, tape = record_spue(model, b, cfg, np.random.default_rng(500))
            return backward(model, tape)

        err = max_gradcheck_error(loss_fn, grad_fn, model, names, count=50,
                                  rng=np.random.default_rng(42), h=1e-4)
        worst[name] = err
        assert err <= 1e-4, f"{name}: max relative error {err}"
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    detail = ", ".join(f"{k}={v:.2e}" for k, v in worst.items())
    print(f"\nACCEPTANCE 1 gradient soundness ({detail}; {elapsed:.1f}s): PASS")


# --------------------------------------------------------------------------
# criterion 2: oracle equivalence (metrics and NN labeling)
# --------------------------------------------------------------------------

def test_criterion_2_oracle_equivalence():
    rng = np.random.default_rng(200)
    for _ in range(200):
        g = int(rng.integers(2, 21))
        n_q = int(rng.integers(1, 9))
        rankings, relevance = [], []
        for _ in range(n_q):
            rankings.append([int(v) for v in rng.permutation(g)])
            size = int(rng.integers(1, g))
            relevance.append(set(rng.choice(g, size=size, replace=False).tolist()))
        got_map = mean_average_precision(rankings, relevance)
        aps = [oracle_average_precision(r, rel) for r, rel in zip(rankings, relevance)]
        assert got_map == sum(aps) / len(aps)
        got_cmc = cmc_curve(rankings, relevance, max_rank=g)
        assert list(got_cmc) == oracle_cmc(rankings, relevance, g)

    # NN pseudo-labeling vs exhaustive scan, m*n = 400*20 = 8000 <= 1e4
    ds = one_shot_split(generate_synthetic(SynthSpec(
        n_identities=20, samples_per_identity=21, d_in=12,
        cluster_spread=0.6, overlap=0.5, seed=9)))
    dims = EncoderDims(d_in=12, hidden=10, d_latent=4, n_identities=20, m_cap=ds.m)
    model = EncoderModel.initialize(dims, np.random.default_rng(3))
    got = estimate_pseudo_labels(model, ds)
    want = oracle_nearest_labeled(lambda f: forward_deterministic(model, f),
                                  ds.unlabeled_samples(), ds.labeled_samples())
    assert [(e.sample_id, e.label) for e in got] == [(s, l) for s, l, _ in want]
    conf_err = max(abs(e.conf - c) for e, (_, _, c) in zip(got, want))
    assert conf_err <= 1e-12
    print(f"\nACCEPTANCE 2 oracle equivalence (200 galleries exact; NN labels exact, "
          f"conf err {conf_err:.1e}): PASS")


# --------------------------------------------------------------------------
# criterion 3: partition invariants over 1,000 randomized calls
# --------------------------------------------------------------------------

def test_criterion_3_partition_invariants():
    rng = np.random.default_rng(300)
    for trial in range(1000):
        m = int(rng.integers(1, 200))
        er = int(rng.integers(1, 101)) / 100.0
        alpha = int(rng.integers(0, 101)) / 100.0
        t = int(rng.integers(1, 12))
        confs = rng.uniform(0, 1, m).round(3)
        est = [Estimate(i, 0, float(c)) for i, c in enumerate(confs)]
        state = select_and_divide(est, t=t, er=er, alpha=alpha, m=m)

        k_exact = min(int(Fraction(str(er)) * t * m + Fraction(1, 2)), m)
        assert state.k == k_exact, f"trial {trial}: k"
        assert len(state.subset_a) == int(Fraction(str(alpha)) * state.k), f"trial {trial}: |A|"

        a = {e.sample_id for e in state.subset_a}
        b = {e.sample_id for e in state.subset_b}
        i = set(state.index_ids)
        assert len(a) + len(b) + len(i) == m and a | b | i == set(range(m))
        conf = {e.sample_id: e.conf for e in est}
        if a and b:
            assert max(conf[x] for x in a) <= min(conf[x] for x in b)
        if b and i:
            assert max(conf[x] for x in b) <= min(conf[x] for x in i)
        if a and i:
            assert max(conf[x] for x in a) <= min(conf[x] for x in i)
    print("\nACCEPTANCE 3 partition invariants (1000 randomized calls): PASS")


# --------------------------------------------------------------------------
# criterion 4: KL properties
# --------------------------------------------------------------------------

def test_criterion_4_kl_properties():
    rng = np.random.default_rng(400)
    worst = 0.0
    for _ in range(100_000):
        d = 3
        emb = GaussianEmbedding(mu=rng.uniform(-4, 4, d),
                                sigma=np.exp(rng.uniform(-2.5, 2.5, d)))
        v = kl_to_standard_normal(emb, "standard")
        worst = min(worst, v)
        assert v >= -1e-12
    zero = kl_to_standard_normal(GaussianEmbedding(mu=np.zeros(4), sigma=np.ones(4)), "standard")
    assert abs(zero) <= 1e-12
    literal = kl_to_standard_normal(
        GaussianEmbedding(mu=np.array([-1.0, 0.0]), sigma=np.array([1.0, 1.0])),
        "paper_literal")
    assert abs(literal - (-0.5)) <= 1e-12
    print(f"\nACCEPTANCE 4 KL properties (min standard {worst:.1e}; zero at (0,1); "
          f"literal pathology -0.5): PASS")


# --------------------------------------------------------------------------
# criterion 5: reparameterization statistics
# --------------------------------------------------------------------------

def test_criterion_5_reparameterization_statistics():
    mu = np.array([0.5, -1.0, 0.0, 0.25])
    sigma = np.array([1.0, 0.5, 1.5, 1.0])
    emb = GaussianEmbedding(mu=mu, sigma=sigma)
    rng = np.random.default_rng(500)
    draws = np.empty((100_000, 4))
    for i in range(draws.shape[0]):
        draws[i] = reparameterize(emb, rng)
    mean_err = np.abs(draws.mean(axis=0) - mu).max()
    var_err = np.abs(draws.var(axis=0) - sigma**2).max()
    assert mean_err < 0.02
    assert var_err < 0.05
    print(f"\nACCEPTANCE 5 reparameterization stats (1e5 draws: mean err {mean_err:.4f} "
          f"< 0.02, var err {var_err:.4f} < 0.05): PASS")


# --------------------------------------------------------------------------
# criterion 6: end-to-end clean run
# --------------------------------------------------------------------------

def test_criterion_6_end_to_end_clean_run(clean_run):
    _, report, elapsed = clean_run
    t1_precision = report.records[1].precision_p
    final_rank1 = report.records[-1].rank1
    assert t1_precision >= 0.95
    assert final_rank1 >= 0.95
    assert elapsed <= 600.0
    print(f"\nACCEPTANCE 6 clean run (t1 precision {t1_precision:.4f} >= 0.95, "
          f"final rank1 {final_rank1:.4f} >= 0.95, {elapsed:.1f}s <= 600s): PASS")


# --------------------------------------------------------------------------
# criterion 7: ablation ordering on overlapping clusters
# --------------------------------------------------------------------------

def test_criterion_7_ablation_ordering(overlap_runs):
    outcomes = {}
    for seed in OVERLAP_SEEDS:
        full = overlap_runs[(seed, "full")].records[-1].rank1
        no_coop = overlap_runs[(seed, "no_coop")].records[-1].rank1
        outcomes[seed] = (full, no_coop, full >= no_coop)
    wins = sum(1 for *_, w in outcomes.values() if w)
    detail = "; ".join(f"seed {s}: full={f:.3f} vs no_coop={n:.3f} "
                       f"({'>=' if w else '<'})" for s, (f, n, w) in outcomes.items())
    assert wins >= 2, f"full >= no_coop in only {wins}/3 seeds ({detail})"
    print(f"\nACCEPTANCE 7 ablation ordering ({detail}; {wins}/3 seeds): PASS")


# --------------------------------------------------------------------------
# criterion 8: pseudo-label precision decay
# --------------------------------------------------------------------------

def test_criterion_8_precision_decay(overlap_runs):
    lines = []
    for seed in OVERLAP_SEEDS:
        records = overlap_runs[(seed, "full")].records
        precs = [r.precision_p for r in records if r.t >= 1]
        for a, b in zip(precs, precs[1:]):
            assert b <= a + 0.02, f"seed {seed}: precision rose {a:.3f} -> {b:.3f}"
        lines.append(f"seed {seed}: {', '.join(f'{p:.3f}' for p in precs)}")
    print("\nACCEPTANCE 8 precision decay (non-increasing within 0.02/step; "
          + " | ".join(lines) + "): PASS")


# --------------------------------------------------------------------------
# criterion 9: determinism
# --------------------------------------------------------------------------

def test_criterion_9_determinism(clean_run):
    dataset, report, _ = clean_run
    again = run_self_paced(dataset, CLEAN_CONFIG)
    first = iteration_csv_bytes(report)
    second = iteration_csv_bytes(again)
    assert first == second
    print(f"\nACCEPTANCE 9 determinism (two runs, {len(first)} identical CSV bytes): PASS")
