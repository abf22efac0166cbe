"""Seeded market simulators, the scenario matrix, and the CLI."""

from .simulators import (  # noqa: F401
    ConsumerParams,
    MarketParams,
    SimulatorConfig,
    simulate_case1,
    simulate_case2,
    softmin_allocation,
)
from .scenarios import (  # noqa: F401
    DatasetKind,
    ModelKind,
    ScenarioSpec,
    Task,
    network_spec_for,
)
from .experiment import ExperimentConfig, run_matrix, sensitivity_noise  # noqa: F401
