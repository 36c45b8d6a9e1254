from .acquisition import Normalization, acquisition_values, minmax, select_batch
from .loop import (AlState, IterationRecord, ModelConfig, SpectralConfig, compute_profile,
                   detect_changes, fit_models, initial_design, run_al_loop)
from .oracle import DatasetOracle, Oracle, SyntheticOracle
from .dacd import (DacdConfig, DacdState, DerivativeGP, dacd_acquisition, dacd_baseline,
                   rbf_derivative_kernels)
