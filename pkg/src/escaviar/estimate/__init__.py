"""Maximum likelihood and adaptive MCMC estimation."""

from ._common import FitResult
from .mcmc import (AdaptiveBlockMetropolis, ChainOutput, EpochReport, McmcConfig, mcmc_fit, model_blocks, target_rate,
                   tune_scale, write_chain_csv)
from .mle import GAMMA_BOX, mle_fit
from .qr_init import fallback_start, quantile_reg_init

__all__ = [
    "AdaptiveBlockMetropolis", "ChainOutput", "EpochReport", "FitResult", "GAMMA_BOX", "McmcConfig",
    "fallback_start", "mcmc_fit", "mle_fit", "model_blocks", "quantile_reg_init", "target_rate", "tune_scale", "write_chain_csv",
]
