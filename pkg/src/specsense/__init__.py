"""Distributed compressive spectrum sensing with diversity-based binary consensus."""

__version__ = "0.1.0"

from .scenario import ScenarioConfig  # noqa: E402
from .sensing import SolverOptions  # noqa: E402
from .metrics import MetricsReport, run_experiment  # noqa: E402

__all__ = ["ScenarioConfig", "SolverOptions", "MetricsReport", "run_experiment", "__version__"]
