"""Re-ID identification models on embeddings, regularized with pseudo-positives mined from an unlabeled pool."""

from .data import (
    DataError,
    LabeledDataset,
    SplitSpec,
    UnlabeledPool,
    canonicalize_labels,
    read_embeddings,
    split,
    write_embeddings,
)
from .evaluation import (
    EvalReport,
    ProtocolConfig,
    average_precision,
    evaluate_cross_camera,
    evaluate_single_shot,
    rank_gallery,
)
from .experiment import (
    ExperimentConfig,
    RunCache,
    RunRecord,
    compare,
    run_baseline,
    run_disturb,
    run_ppr,
    run_sweep,
)
from .mining import (
    MinedPair,
    PseudoPositiveSet,
    disturb_labels,
    disturb_star,
    merge,
    mine_nearest,
    select_pseudo_positives,
)
from .model import (
    ModelParams,
    TrainConfig,
    backward,
    extract_features,
    forward,
    load_model,
    save_model,
    sgd_step,
    softmax_loss,
    train,
)
from .synth import SynthConfig, generate

__version__ = "0.1.0"
