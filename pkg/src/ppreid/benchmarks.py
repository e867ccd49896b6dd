"""Named experiment presets."""

from .evaluation import ProtocolConfig
from .experiment import ExperimentConfig
from .model import TrainConfig
from .synth import SynthConfig

# Small MLP settings under which training converges in 20 epochs on the
# standard synthetic benchmark.  Momentum, weight decay and the step factor
# keep their defaults.
BENCHMARK_TRAIN = TrainConfig(
    batch_size=32,
    learning_rate=0.05,
    epochs=20,
    lr_step_epochs=13,
    hidden_dims=(32, 16),
    init_std=0.1,
)


def standard_benchmark(repeats: int = 20, seed: int = 100, k_values=None, methods=None) -> ExperimentConfig:
    """50 identities x 6 samples, 2 cameras, pool of 2000 with overlap 0.7.

    The default sweep uses K = 10% of the look-alike part of the pool and
    K = |pool|, which saturates at all deduplicated mined pairs.
    """
    synth = SynthConfig()
    small_k = int(0.1 * synth.num_lookalikes)
    return ExperimentConfig(
        train=BENCHMARK_TRAIN,
        synth=synth,
        k_values=tuple(k_values) if k_values is not None else (small_k, synth.pool_size),
        methods=tuple(methods) if methods is not None else ("baseline", "ppr", "disturb", "disturb_star"),
        protocol=ProtocolConfig(mode="cross-camera"),
        repeats=repeats,
        seed=seed,
        train_fraction=1.0,
    )
