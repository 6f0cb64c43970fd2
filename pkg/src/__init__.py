"""
tabtok - Tabular prediction with a pre-trained language-model trunk

Tables are read against explicit schemas, numerical values become shared
relative magnitude tokens through supervised C4.5 binning, every feature is
fused into one vector by intra-feature attention, and an order-agnostic
transformer encoder feeds per-dataset prediction heads.

Modules:
    table_store: Schemas, CSV I/O, splits and dataset statistics
    discretizer: C4.5 bin boundaries, bin indices and value multipliers
    text_codec: Word vocabulary and the magnitude-token id block
    feature_encoder: Embedding tables and intra-feature attention
    backbone: Encoder, prediction heads and losses
    model: Table tensorization and the assembled network
    checkpoint: Self-contained checkpoint directories
    training_engine: Multi-dataset pre-training and fine-tuning
    evaluation: AUC / RMSE, alpha, delta buckets, magnitude geometry
    ablation: Encoding variants against the default configuration
    synthetic: Desk-scale synthetic tasks
    cli: Command-line entry point

License: Apache 2.0
Python: 3.12+
"""

__version__ = "1.0.0"
__license__ = "Apache 2.0"

from .table_store import (
    FeatureSchema,
    Dataset,
    SplitSpec,
    load_csv,
    split,
)

from .discretizer import (
    BinConfig,
    fit_bins,
    bin_index,
    value_multiplier,
)

from .text_codec import (
    Vocabulary,
    build_vocab,
    encode_text,
)

from .model import (
    AblationConfig,
    ModelConfig,
    TabTokModel,
)

from .training_engine import (
    PretrainConfig,
    FinetuneConfig,
    pretrain,
    finetune,
)

from .evaluation import (
    MetricReport,
    auc,
    rmse,
)

# Define public API
__all__ = [
    # Data
    'FeatureSchema',
    'Dataset',
    'SplitSpec',
    'load_csv',
    'split',

    # Tokenization
    'BinConfig',
    'fit_bins',
    'bin_index',
    'value_multiplier',
    'Vocabulary',
    'build_vocab',
    'encode_text',

    # Model and training
    'AblationConfig',
    'ModelConfig',
    'TabTokModel',
    'PretrainConfig',
    'FinetuneConfig',
    'pretrain',
    'finetune',

    # Metrics
    'MetricReport',
    'auc',
    'rmse',
]
