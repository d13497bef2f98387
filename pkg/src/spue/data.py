"""Samples, datasets, the one-shot labeling protocol, and a synthetic
identity-cluster generator.

A dataset is an immutable collection of feature vectors tagged with a
ground-truth identity, a camera id, and a label state. Ground truth is
kept on every sample but is only ever read for evaluation and precision
reporting; training losses see nothing but the label states.
"""

import dataclasses

import numpy as np

FEATURE_HEADER = "# spue-features v1 D_in="
NUM_CAMERAS = 4


class FeatureFileError(ValueError):
    """Malformed feature CSV; the message names the offending line."""


@dataclasses.dataclass(frozen=True)
class Labeled:
    identity: int


@dataclasses.dataclass(frozen=True)
class PseudoA:
    """High-confidence pseudo-label (trained with the uncertainty loss)."""

    label: int
    conf: float


@dataclasses.dataclass(frozen=True)
class PseudoB:
    """Low-confidence pseudo-label (trained with the determinacy loss)."""

    label: int
    conf: float


@dataclasses.dataclass(frozen=True)
class Index:
    """Per-sample index class for the exclusive loss."""

    idx: int


LabelState = Labeled | PseudoA | PseudoB | Index


@dataclasses.dataclass(frozen=True, eq=False)
class Sample:
    sample_id: int
    features: np.ndarray
    identity: int
    camera: int
    state: LabelState

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 1:
            raise ValueError(f"sample {self.sample_id}: features must be a 1-D vector")
        if not np.isfinite(feats).all():
            raise ValueError(f"sample {self.sample_id}: non-finite feature values")
        if self.identity < 0:
            raise ValueError(f"sample {self.sample_id}: negative identity")
        if self.camera < 0:
            raise ValueError(f"sample {self.sample_id}: negative camera tag")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)

    def with_state(self, state):
        return dataclasses.replace(self, state=state)

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.identity == other.identity
            and self.camera == other.camera
            and self.state == other.state
            and np.array_equal(self.features, other.features)
        )


class Dataset:
    """Immutable sample collection with a shared feature dimension.

    Samples are stored sorted by sample_id; ids must be dense 0..N-1 and
    identities dense 0..n-1 with n >= 2. When any sample is Labeled there
    must be exactly one Labeled sample per identity (one-shot protocol).
    """

    def __init__(self, samples):
        samples = tuple(sorted(samples, key=lambda s: s.sample_id))
        if not samples:
            raise ValueError("dataset is empty")
        ids = [s.sample_id for s in samples]
        if ids != list(range(len(samples))):
            raise ValueError("sample_ids must be unique and dense 0..N-1")
        d_in = samples[0].features.shape[0]
        for s in samples:
            if s.features.shape[0] != d_in:
                raise ValueError(
                    f"sample {s.sample_id}: feature length {s.features.shape[0]} != D_in {d_in}"
                )
        identities = sorted({s.identity for s in samples})
        n = len(identities)
        if identities != list(range(n)):
            raise ValueError("identities must be dense 0..n-1")
        if n < 2:
            raise ValueError("need at least 2 identities")
        labeled_by_identity = {}
        for s in samples:
            if isinstance(s.state, Labeled):
                if s.state.identity != s.identity:
                    raise ValueError(f"sample {s.sample_id}: Labeled state disagrees with identity")
                if s.identity in labeled_by_identity:
                    raise ValueError(f"identity {s.identity} has more than one Labeled sample")
                labeled_by_identity[s.identity] = s.sample_id
        if labeled_by_identity and len(labeled_by_identity) != n:
            raise ValueError("one-shot protocol requires exactly one Labeled sample per identity")
        self.samples = samples
        self.d_in = d_in
        self.n = n
        self._features = np.ascontiguousarray([s.features for s in samples])
        self._features.flags.writeable = False

    @property
    def m(self):
        """Number of non-labeled samples."""
        return sum(1 for s in self.samples if not isinstance(s.state, Labeled))

    def labeled_samples(self):
        return [s for s in self.samples if isinstance(s.state, Labeled)]

    def unlabeled_samples(self):
        return [s for s in self.samples if not isinstance(s.state, Labeled)]

    def sample(self, sample_id):
        return self.samples[sample_id]

    def features_of(self, sample_ids):
        """Stacked feature rows for the given ids (C-contiguous copy)."""
        return np.ascontiguousarray(self._features[np.asarray(sample_ids, dtype=np.intp)])

    @property
    def feature_matrix(self):
        return self._features

    def with_states(self, states):
        """New dataset with label states replaced per `states` {sample_id: state}."""
        return Dataset(
            [s.with_state(states[s.sample_id]) if s.sample_id in states else s for s in self.samples]
        )

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.samples == other.samples


@dataclasses.dataclass(frozen=True)
class SynthSpec:
    """Synthetic identity-cluster generator parameters.

    Identity centers are drawn uniformly in [-1, 1]^D_in and scaled by
    `overlap` (smaller -> centers closer together). Each sample is its
    center plus isotropic Gaussian noise of scale `cluster_spread`; a
    `noise_heterogeneity` fraction of samples gets 3x the spread
    (occlusion analog). Camera tags cycle round-robin over 4 cameras.
    """

    n_identities: int = 50
    samples_per_identity: int = 20
    d_in: int = 64
    cluster_spread: float = 0.1
    noise_heterogeneity: float = 0.0
    overlap: float = 1.0
    seed: int = 1

    def __post_init__(self):
        if self.n_identities < 2:
            raise ValueError("n_identities must be >= 2 (one-shot split impossible)")
        if self.samples_per_identity < 2:
            raise ValueError("samples_per_identity must be >= 2 (one-shot split impossible)")
        if self.d_in < 1:
            raise ValueError("d_in must be >= 1")
        if not self.cluster_spread > 0:
            raise ValueError("cluster_spread must be > 0")
        if not self.overlap > 0:
            raise ValueError("overlap must be > 0")
        if not 0.0 <= self.noise_heterogeneity <= 1.0:
            raise ValueError("noise_heterogeneity must be in [0, 1]")


def generate_synthetic(spec):
    """Generate a dataset from `spec`; deterministic for a fixed seed.

    All samples start as Index placeholders; apply one_shot_split to
    obtain the labeled/unlabeled partition.
    """
    rng = np.random.default_rng(spec.seed)
    n, per_id, d = spec.n_identities, spec.samples_per_identity, spec.d_in
    total = n * per_id
    centers = rng.uniform(-1.0, 1.0, (n, d)) * spec.overlap
    noise = rng.standard_normal((total, d))
    n_noisy = int(np.floor(spec.noise_heterogeneity * total + 0.5))
    noisy = set(rng.choice(total, size=n_noisy, replace=False).tolist()) if n_noisy else set()
    samples = []
    for sid in range(total):
        identity = sid // per_id
        spread = 3.0 * spec.cluster_spread if sid in noisy else spec.cluster_spread
        feats = centers[identity] + spread * noise[sid]
        samples.append(
            Sample(
                sample_id=sid,
                features=feats,
                identity=identity,
                camera=sid % NUM_CAMERAS,
                state=Index(sid),
            )
        )
    return Dataset(samples)


def one_shot_split(dataset):
    """Apply the one-shot protocol: one Labeled sample per identity.

    Per identity the sample with the lowest camera tag wins (ties broken
    by lowest sample_id); everything else becomes an Index placeholder,
    densely numbered in sample_id order.
    """
    chosen = {}
    for s in dataset.samples:
        best = chosen.get(s.identity)
        if best is None or (s.camera, s.sample_id) < (best.camera, best.sample_id):
            chosen[s.identity] = s
    labeled_ids = {s.sample_id for s in chosen.values()}
    states = {}
    idx = 0
    for s in dataset.samples:
        if s.sample_id in labeled_ids:
            states[s.sample_id] = Labeled(s.identity)
        else:
            states[s.sample_id] = Index(idx)
            idx += 1
    if idx < 1:
        raise ValueError("one-shot split leaves no unlabeled samples")
    return dataset.with_states(states)


def _fmt(x):
    return repr(float(x))


def save_features(dataset, path):
    """Write the dataset as CSV: header line, then one sample per line.

    Row format: sample_id,identity,camera,f_0,...,f_{D_in-1}. Floats are
    written as shortest round-trip decimals, so load(save(ds)) is
    bit-exact. Label states are not persisted; a loaded dataset starts
    from Index placeholders.
    """
    with open(path, "w", newline="") as fh:
        fh.write(f"{FEATURE_HEADER}{dataset.d_in}\n")
        for s in dataset.samples:
            row = [str(s.sample_id), str(s.identity), str(s.camera)]
            row.extend(_fmt(v) for v in s.features)
            fh.write(",".join(row) + "\n")


def load_features(path):
    """Parse a feature CSV written by save_features.

    Raises FeatureFileError naming the offending line for malformed rows,
    inconsistent feature counts, or duplicate sample_ids.
    """
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(FEATURE_HEADER):
        raise FeatureFileError(f"line 1: expected header starting with {FEATURE_HEADER!r}")
    try:
        d_in = int(lines[0][len(FEATURE_HEADER):])
    except ValueError:
        raise FeatureFileError("line 1: header D_in is not an integer") from None
    if d_in < 1:
        raise FeatureFileError("line 1: header D_in must be >= 1")
    samples = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 3 + d_in:
            raise FeatureFileError(
                f"line {lineno}: expected {3 + d_in} fields, got {len(fields)}"
            )
        try:
            sid = int(fields[0])
            identity = int(fields[1])
            camera = int(fields[2])
            feats = np.array([float(v) for v in fields[3:]], dtype=np.float64)
        except ValueError as exc:
            raise FeatureFileError(f"line {lineno}: {exc}") from None
        if sid in seen:
            raise FeatureFileError(f"line {lineno}: duplicate sample_id {sid}")
        seen.add(sid)
        try:
            samples.append(Sample(sid, feats, identity, camera, Index(0)))
        except ValueError as exc:
            raise FeatureFileError(f"line {lineno}: {exc}") from None
    # placeholder Index states, densified in sample_id order
    samples.sort(key=lambda s: s.sample_id)
    samples = [s.with_state(Index(i)) for i, s in enumerate(samples)]
    return Dataset(samples)
