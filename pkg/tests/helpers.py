"""Shared test utilities: independent oracles and hand-built models.

The oracles here deliberately avoid the library's computation paths:
gradients come from central finite differences over re-run forward
passes, retrieval metrics from naive rescans of the ranked lists, and
nearest-neighbor labels from an explicit double loop.
"""

import numpy as np

from spue.encoder import EncoderDims, EncoderModel, PARAM_NAMES


def finite_difference_grad(loss_fn, model, name, flat_index, h=1e-4):
    """Central finite difference of loss_fn() w.r.t. one parameter coordinate.

    loss_fn must be deterministic (fix any rng seeds inside it).
    """
    p = model.params[name]
    orig = p.flat[flat_index]
    p.flat[flat_index] = orig + h
    up = loss_fn()
    p.flat[flat_index] = orig - h
    down = loss_fn()
    p.flat[flat_index] = orig
    return (up - down) / (2.0 * h)


def sample_coordinates(model, names, count, rng):
    """`count` random (param_name, flat_index) pairs drawn over `names`."""
    sizes = [model.params[n].size for n in names]
    total = sum(sizes)
    coords = []
    for flat in rng.choice(total, size=min(count, total), replace=False):
        for n, sz in zip(names, sizes):
            if flat < sz:
                coords.append((n, int(flat)))
                break
            flat -= sz
    return coords


def max_gradcheck_error(loss_fn, grad_fn, model, names, count, rng, h=1e-4):
    """Worst relative error between analytic and finite-difference gradients.

    Relative error uses max(|a|, |n|) as denominator; coordinates where
    both are below 1e-6 are compared absolutely against 1e-8.
    """
    grads = grad_fn()
    worst = 0.0
    for name, idx in sample_coordinates(model, names, count, rng):
        a = grads[name].flat[idx]
        n = finite_difference_grad(loss_fn, model, name, idx, h=h)
        denom = max(abs(a), abs(n))
        if denom < 1e-6:
            assert abs(a - n) <= 1e-8, f"{name}[{idx}]: analytic {a} vs fd {n}"
            continue
        worst = max(worst, abs(a - n) / denom)
    return worst


def oracle_average_precision(ranked, relevant):
    """Precision-at-each-hit AP, recomputed by rescanning prefixes."""
    precisions = []
    for pos, gid in enumerate(ranked, start=1):
        if gid in relevant:
            in_prefix = sum(1 for g in ranked[:pos] if g in relevant)
            precisions.append(in_prefix / pos)
    if not precisions:
        return None
    return sum(precisions) / len(precisions)


def oracle_cmc(rankings, relevance, max_rank):
    """First-hit counting, one rank at a time."""
    firsts = []
    for ranked, rel in zip(rankings, relevance):
        first = None
        for pos, gid in enumerate(ranked, start=1):
            if gid in rel:
                first = pos
                break
        if first is not None:
            firsts.append(first)
    out = []
    for r in range(1, max_rank + 1):
        out.append(sum(1 for f in firsts if f <= r) / len(firsts))
    return out


def oracle_nearest_labeled(model_embed, unlabeled, labeled):
    """Explicit O(m*n) nearest-labeled scan.

    model_embed maps a feature vector to its embedding; ties go to the
    lower identity because candidates are scanned in identity order.
    """
    out = []
    refs = sorted(labeled, key=lambda s: s.identity)
    for u in unlabeled:
        ue = model_embed(u.features)
        best_label, best_dist = None, None
        for ref in refs:
            dist = float(np.linalg.norm(ue - model_embed(ref.features)))
            if best_dist is None or dist < best_dist:
                best_label, best_dist = ref.identity, dist
        out.append((u.sample_id, best_label, best_dist))
    return out


def linear_identity_model(d, n_identities=2, m_cap=2):
    """Linear D=H=d network computing mu(x) = x, sigma = 1, zero classifiers."""
    dims = EncoderDims(d_in=d, hidden=d, d_latent=d, n_identities=n_identities, m_cap=m_cap)
    eye = np.eye(d)
    params = {
        "w1": eye.copy(), "b1": np.zeros(d),
        "w2": eye.copy(), "b2": np.zeros(d),
        "w_mu": eye.copy(), "b_mu": np.zeros(d),
        "w_logvar": np.zeros((d, d)), "b_logvar": np.zeros(d),
        "w_id": np.zeros((n_identities, d)), "b_id": np.zeros(n_identities),
        "w_index": np.zeros((m_cap, d)),
    }
    return EncoderModel(dims, params, activation="linear")


def random_model(dims, seed=0, activation="tanh"):
    return EncoderModel.initialize(dims, np.random.default_rng(seed), activation=activation)


def perturb_params(model, rng, scale=0.05):
    """Random nonzero offsets on every tensor (avoids zero-gradient plateaus)."""
    for name in PARAM_NAMES:
        model.params[name] += scale * rng.standard_normal(model.params[name].shape)
    return model
