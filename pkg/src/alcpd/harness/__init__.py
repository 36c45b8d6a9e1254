from .config import ExperimentConfig, Mode, preset
from .report import emit_report, summarize
from .runner import RunRecord, expand_grid, run_replication, run_sweep
