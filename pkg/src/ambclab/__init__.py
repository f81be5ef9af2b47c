"""ambclab: a detection laboratory for ambient backscatter communication.

Simulates the two-hypothesis tag-reflection channel, evaluates exact
likelihood-ratio detectors and a calibrated energy detector, trains a
covariance-feature CNN with per-frame transfer fine-tuning, and runs
reproducible Monte Carlo BER sweeps.
"""
__version__ = "0.1.0"

from .simcore import (  # noqa: F401
    GAUSSIAN,
    PSK,
    AmbientSource,
    ChannelRealization,
    SimParams,
    TagFrame,
    TagSymbolBlock,
    draw_channel,
    generate_block,
    generate_frame,
    sample_source,
)
from .features import block_feature, sample_covariance, to_feature_tensor  # noqa: F401
from .detectors import (  # noqa: F401
    EnergyDetector,
    GaussianLrtDetector,
    ModulatedLrtDetector,
    calibrate_ed_threshold,
    energy_statistic,
)
from .rng import substream  # noqa: F401
