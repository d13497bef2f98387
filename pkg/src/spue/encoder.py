"""Gaussian-embedding encoder.

Architecture (all float64, hand-differentiated):

    trunk:        x (D_in) -> affine -> tanh -> affine -> t (d)
    mean head:    t -> affine -> mu (d)          [the deterministic embedding]
    logvar head:  t -> affine -> log sigma^2 (d), clamped to [-10, 10]
    id classifier:    r (d) -> affine -> n logits
    index classifier: mu (d) -> W[:active_m] inner products -> active_m logits

The log-variance parameterization keeps sigma = exp(logvar/2) strictly
positive; the clamp bounds sigma within [e^-5, e^5] so exp never
overflows. The activation can be set to "linear" for hand-analyzable
networks in tests.
"""

import dataclasses
import math

import numpy as np

from . import kernels

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0
CLASSIFIER_INIT_SCALE = 0.01
CHECKPOINT_HEADER = "spue-checkpoint v1"

PARAM_NAMES = (
    "w1", "b1", "w2", "b2",
    "w_mu", "b_mu", "w_logvar", "b_logvar",
    "w_id", "b_id", "w_index",
)

ACTIVATIONS = ("tanh", "linear")


class CheckpointError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class EncoderDims:
    d_in: int
    hidden: int
    d_latent: int
    n_identities: int
    m_cap: int

    def __post_init__(self):
        for name in ("d_in", "hidden", "d_latent", "n_identities", "m_cap"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_identities < 2:
            raise ValueError("n_identities must be >= 2")


@dataclasses.dataclass(frozen=True)
class GaussianEmbedding:
    """Per-sample latent Gaussian: mean and (strictly positive) scale, both (d,)."""

    mu: np.ndarray
    sigma: np.ndarray


def _param_shapes(dims):
    return {
        "w1": (dims.hidden, dims.d_in),
        "b1": (dims.hidden,),
        "w2": (dims.d_latent, dims.hidden),
        "b2": (dims.d_latent,),
        "w_mu": (dims.d_latent, dims.d_latent),
        "b_mu": (dims.d_latent,),
        "w_logvar": (dims.d_latent, dims.d_latent),
        "b_logvar": (dims.d_latent,),
        "w_id": (dims.n_identities, dims.d_latent),
        "b_id": (dims.n_identities,),
        "w_index": (dims.m_cap, dims.d_latent),
    }


class EncoderModel:
    """Parameter container plus the active index-class count.

    `params` maps the names in PARAM_NAMES to float64 arrays. Parameters
    are mutated in place by the optimizer; forward passes never write.
    `active_m` is the number of index-classifier rows currently in use
    (maintained by the trainer; rows are re-initialized whenever the
    index set changes).
    """

    def __init__(self, dims, params, activation="tanh", active_m=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        shapes = _param_shapes(dims)
        if set(params) != set(shapes):
            raise ValueError("parameter names do not match the architecture")
        for name, shape in shapes.items():
            arr = params[name]
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise ValueError(f"{name}: non-finite values")
        self.dims = dims
        self.activation = activation
        self.params = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in params.items()}
        self.active_m = dims.m_cap if active_m is None else active_m

    @classmethod
    def initialize(cls, dims, rng, activation="tanh"):
        """Seeded init: fan-in uniform trunk/heads, small uniform classifiers.

        Head biases start at zero, so sigma starts near 1.
        """

        def fan_in(shape):
            bound = 1.0 / math.sqrt(shape[1])
            return rng.uniform(-bound, bound, shape)

        s = CLASSIFIER_INIT_SCALE
        shapes = _param_shapes(dims)
        params = {
            "w1": fan_in(shapes["w1"]),
            "b1": np.zeros(shapes["b1"]),
            "w2": fan_in(shapes["w2"]),
            "b2": np.zeros(shapes["b2"]),
            "w_mu": fan_in(shapes["w_mu"]),
            "b_mu": np.zeros(shapes["b_mu"]),
            "w_logvar": fan_in(shapes["w_logvar"]),
            "b_logvar": np.zeros(shapes["b_logvar"]),
            "w_id": rng.uniform(-s, s, shapes["w_id"]),
            "b_id": np.zeros(shapes["b_id"]),
            "w_index": rng.uniform(-s, s, shapes["w_index"]),
        }
        return cls(dims, params, activation=activation)

    def reinit_index_rows(self, rng):
        """Fresh index-classifier weights (the index class set changed)."""
        s = CLASSIFIER_INIT_SCALE
        self.params["w_index"][:] = rng.uniform(-s, s, self.params["w_index"].shape)

    def copy(self):
        return EncoderModel(
            self.dims,
            {k: v.copy() for k, v in self.params.items()},
            activation=self.activation,
            active_m=self.active_m,
        )

    def __eq__(self, other):
        if not isinstance(other, EncoderModel):
            return NotImplemented
        return (
            self.dims == other.dims
            and self.activation == other.activation
            and self.active_m == other.active_m
            and all(np.array_equal(self.params[k], other.params[k]) for k in PARAM_NAMES)
        )


def zero_gradients(model):
    return {k: np.zeros_like(v) for k, v in model.params.items()}


def _as_batch(features, d_in, what="features"):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != d_in:
        raise ValueError(f"{what}: expected vectors of length {d_in}, got shape {x.shape}")
    return np.ascontiguousarray(x)


def trunk_forward(model, x):
    """Trunk forward over a batch; returns (t, z1) with z1 the post-activation."""
    p = model.params
    a1 = kernels.affine_forward(x, p["w1"], p["b1"])
    z1 = kernels.tanh_forward(a1) if model.activation == "tanh" else a1
    t = kernels.affine_forward(z1, p["w2"], p["b2"])
    return t, z1


def trunk_backward(model, x, z1, dt):
    """Backward through the trunk; returns gradients for w1,b1,w2,b2."""
    dz1, dw2, db2 = kernels.affine_backward(z1, model.params["w2"], dt)
    da1 = kernels.tanh_backward(z1, dz1) if model.activation == "tanh" else dz1
    _, dw1, db1 = kernels.affine_backward(x, model.params["w1"], da1)
    return {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2}


def mu_from_trunk(model, t):
    return kernels.affine_forward(t, model.params["w_mu"], model.params["b_mu"])


def logvar_from_trunk(model, t):
    """Raw and clamped log-variance head outputs for trunk rows t."""
    raw = kernels.affine_forward(t, model.params["w_logvar"], model.params["b_logvar"])
    return raw, np.clip(raw, LOGVAR_MIN, LOGVAR_MAX)


def forward_deterministic_batch(model, features):
    """Deterministic embeddings mu(x) for a feature matrix (N, D_in)."""
    x = _as_batch(features, model.dims.d_in)
    t, _ = trunk_forward(model, x)
    return mu_from_trunk(model, t)


def forward_deterministic(model, features):
    """Deterministic embedding mu(x) for one feature vector."""
    if np.asarray(features).ndim != 1:
        raise ValueError("features must be a single vector; use the batch variant for matrices")
    return forward_deterministic_batch(model, features)[0]


def forward_gaussian(model, features):
    """Latent Gaussian (mu, sigma) for one feature vector."""
    if np.asarray(features).ndim != 1:
        raise ValueError("features must be a single vector")
    x = _as_batch(features, model.dims.d_in)
    t, _ = trunk_forward(model, x)
    mu = mu_from_trunk(model, t)[0]
    _, lv = logvar_from_trunk(model, t)
    sigma = np.exp(0.5 * lv[0])
    return GaussianEmbedding(mu=mu, sigma=sigma)


def reparameterize(emb, rng):
    """One latent draw r = mu + eps*sigma with eps ~ N(0, I) from `rng`."""
    eps = rng.standard_normal(emb.mu.shape[0])
    return emb.mu + eps * emb.sigma


def logits_identity(model, r):
    """Identity-classifier logits (n,) for a latent vector r (d,)."""
    r = _as_batch(r, model.dims.d_latent, what="latent")
    return kernels.affine_forward(r, model.params["w_id"], model.params["b_id"])[0]


def logits_index(model, embedding, active_m):
    """Index-classifier logits over the first active_m rows of W."""
    if not 1 <= active_m <= model.dims.m_cap:
        raise ValueError(f"active_m must be in [1, {model.dims.m_cap}], got {active_m}")
    e = _as_batch(embedding, model.dims.d_latent, what="embedding")
    w = np.ascontiguousarray(model.params["w_index"][:active_m])
    return kernels.affine_forward(e, w, np.zeros(active_m))[0]


def save_checkpoint(model, path):
    """Versioned text checkpoint; load(save(m)) == m bit-exact."""
    d = model.dims
    with open(path, "w", newline="") as fh:
        fh.write(CHECKPOINT_HEADER + "\n")
        fh.write(
            f"d_in={d.d_in} hidden={d.hidden} d_latent={d.d_latent} "
            f"n_identities={d.n_identities} m_cap={d.m_cap} "
            f"activation={model.activation} active_m={model.active_m}\n"
        )
        for name in PARAM_NAMES:
            arr = model.params[name]
            arr2 = arr if arr.ndim == 2 else arr[None, :]
            fh.write(f"tensor {name} {' '.join(str(s) for s in arr.shape)}\n")
            for row in arr2:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_checkpoint(path):
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise CheckpointError(f"not a checkpoint file (expected {CHECKPOINT_HEADER!r})")
    try:
        meta = dict(kv.split("=", 1) for kv in lines[1].split())
        dims = EncoderDims(
            d_in=int(meta["d_in"]),
            hidden=int(meta["hidden"]),
            d_latent=int(meta["d_latent"]),
            n_identities=int(meta["n_identities"]),
            m_cap=int(meta["m_cap"]),
        )
        activation = meta["activation"]
        active_m = int(meta["active_m"])
    except (KeyError, ValueError, IndexError) as exc:
        raise CheckpointError(f"bad checkpoint metadata: {exc}") from None
    params = {}
    pos = 2
    while pos < len(lines):
        header = lines[pos].split()
        if len(header) < 2 or header[0] != "tensor":
            raise CheckpointError(f"line {pos + 1}: expected a tensor header")
        name = header[1]
        shape = tuple(int(v) for v in header[2:])
        rows = shape[0] if len(shape) == 2 else 1
        block = lines[pos + 1 : pos + 1 + rows]
        if len(block) != rows:
            raise CheckpointError(f"tensor {name}: truncated data")
        arr = np.array([[float(v) for v in row.split()] for row in block])
        params[name] = arr.reshape(shape)
        pos += 1 + rows
    try:
        return EncoderModel(dims, params, activation=activation, active_m=active_m)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from None
