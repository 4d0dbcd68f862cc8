"""Figure generation over forwarding-experiment sweep CSVs."""

__version__ = "0.1.0"

from .figures import (FIGURES, SWEEP_FIGURES, SchemaError, plot_per_user,
                      plot_sweep)

__all__ = ["FIGURES", "SWEEP_FIGURES", "SchemaError", "plot_per_user",
           "plot_sweep"]
