from .config import ExperimentConfig, load_config
from .report import emit_csv, emit_plot_series, read_csv
from .sweep import ResultRow, run_sweep

__all__ = ["ExperimentConfig", "ResultRow", "emit_csv", "emit_plot_series", "load_config", "read_csv", "run_sweep"]
