"""Bi-encoder contrastive retrieval with adaptive pooling and adaptive
negative sampling, runnable end to end on a synthetic paired corpus."""

from .data import Corpus, RawInstance, SyntheticCorpusConfig, generate_corpus, ground_truth
from .encoders import BiEncoder, EncoderParams, encode, init_encoder_params, project
from .evaluation import EmbeddingSet, RetrievalResult, ensemble_similarity, evaluate, recall_at_k
from .objectives import (
    BatchMaturity,
    LossConfig,
    NegativeSelection,
    adaptive_k,
    adopt_loss,
    alignment,
    hard_triplet_loss,
    info_nce_loss,
    negatives_only_info_nce,
    select_negatives,
    uniformity,
)
from .pooling import (
    PoolDiagnostics,
    PoolParams,
    PoolingSpec,
    adpool,
    balance_combine,
    embedding_level_adpool,
    kmax_pool,
    max_pool,
    mean_pool,
    pool,
    token_level_adpool,
)
from .tensor import DiffOp, GradCheckReport, finite_diff_check
from .training import AdamState, TrainConfig, TrainLog, adam_step, k_history, lr_at, train

__version__ = "0.1.0"
