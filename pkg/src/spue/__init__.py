"""Self-paced uncertainty estimation for one-shot identity retrieval.

Iterative pseudo-label expansion over a one-shot-labeled dataset, with a
cooperative objective that trains confident pseudo-labels through a
Gaussian latent (uncertainty) head and the rest through deterministic
embeddings, plus retrieval evaluation (mAP / CMC).
"""

from .data import (
    Dataset,
    FeatureFileError,
    Index,
    Labeled,
    PseudoA,
    PseudoB,
    Sample,
    SynthSpec,
    generate_synthetic,
    load_features,
    one_shot_split,
    save_features,
)
from .encoder import (
    EncoderDims,
    EncoderModel,
    GaussianEmbedding,
    forward_deterministic,
    forward_gaussian,
    load_checkpoint,
    logits_identity,
    logits_index,
    reparameterize,
    save_checkpoint,
)
from .evaluate import (
    EvalResult,
    RetrievalProtocol,
    cmc_curve,
    evaluate_retrieval,
    make_unlabeled_protocol,
    mean_average_precision,
    pseudo_label_precision,
    rank_gallery,
)
from .losses import (
    LossBreakdown,
    backward,
    cross_entropy,
    kl_to_standard_normal,
    loss_determinacy,
    loss_exclusive,
    loss_spue,
    loss_uncertainty,
    record_spue,
)
from .selfpaced import (
    Estimate,
    SelectionState,
    TrainingReport,
    apply_selection,
    estimate_pseudo_labels,
    run_self_paced,
    select_and_divide,
)
from .train import (
    NonFiniteLossError,
    OptimizerState,
    TrainConfig,
    sgd_step,
    train_iteration,
)

__version__ = "0.1.0"
