"""Attention-gated classifier heads over feature maps, with genetic architecture search."""

from .attention import AttentionCache, SpatialAttention, attention_backward, attention_forward, attention_init
from .data import (
    DatasetManifest,
    FmapDimensionError,
    FmapDtypeError,
    FmapError,
    FmapMagicError,
    FmapTruncatedError,
    FmapVersionError,
    ManifestSample,
    SyntheticSpec,
    fmap_read,
    fmap_write,
    load_labeled,
    load_manifest,
    save_manifest,
    split_dataset,
    synthesize,
)
from .errors import (
    ConfigError,
    FitnessError,
    NumericError,
    ParameterError,
    ShapeError,
    ValidationError,
)
from .ga import (
    GaConfig,
    GaRecord,
    Individual,
    crossover,
    derive_seed,
    ga_history_to_csv,
    init_population,
    mutate,
    pair_parents,
    roulette_select,
    run_ga,
)
from .metrics import (
    ConfusionCounts,
    accumulate,
    accuracy,
    f1,
    f1_from_rates,
    metrics_report,
    metrics_report_json,
    precision,
    recall,
)
from .network import (
    Architecture,
    CheckpointError,
    CompositeModel,
    EpochStats,
    MlpHead,
    TrainConfig,
    accuracy_on,
    bce_loss,
    build_composite,
    build_head,
    composite_forward,
    head_forward,
    history_to_csv,
    load_checkpoint,
    predict,
    predict_prob,
    save_checkpoint,
    train,
)
from .tensor import (
    Tensor,
    channel_max,
    channel_mean,
    concat_channels,
    conv2d_same,
    gate_broadcast,
    global_avg_pool,
    sigmoid_map,
)

__version__ = "0.1.0"
