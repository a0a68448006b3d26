"""Passive beamforming and information transfer over a large intelligent surface."""

__version__ = "0.1.0"

from .model import (
    BlockSignals,
    ChannelState,
    Constellation,
    PhaseShifts,
    RateInfo,
    SystemConfig,
    binary_entropy,
    entropy_inverse,
    make_rng,
    modulate,
    qpsk_gray,
    sample_channels,
    sample_lis_state,
    simulate_block,
)
from .beamforming import build_qcqp, expected_gain, optimize_phases, randomized_rounding, solve_sdp
from .factor import correct_ambiguity, demap, factor_bigamp, factor_svd
from .sparse import cosamp_recover, form_observation, gamp_recover, omp_recover
from .harness import ExperimentSpec, run_trial, sweep
