"""Model-free control laboratory.

Simulates the discrete i-PI and i*-PI model-free controllers and a classic PI
baseline against switching linear plants with output and state delays.
"""

from mfc_lab import kernels
from mfc_lab.controller import (
    ClassicPI, GainFunction, IntelligentPI, IStarConfig, IStarPI, LambdaProfile,
    PiGains, UltraLocalConfig, classic_pi_update, controller_from_dict,
    estimate_derivative, estimate_F, gain_eval, ipi_update, istar_update, lambda_eval,
)
from mfc_lab.errors import ConfigError, ControllerFault, PlantDiverged
from mfc_lab.metrics import MetricsReport, compute_metrics
from mfc_lab.plant import (
    DelayLine, PlantRuntime, StateDelay, StateSpaceSystem, builtin_bank, read_delayed,
    switch_active, zoh_step,
)
from mfc_lab.scenario import (
    ReferenceTrajectory, ScenarioConfig, SimTrace, SwitchEvent, SwitchingSchedule,
    apply_schedule, builtin_scenario, builtin_scenarios, reference_eval, run_closed_loop,
)

__version__ = "0.1.0"

__all__ = [
    "ClassicPI", "ConfigError", "ControllerFault", "DelayLine", "GainFunction",
    "IStarConfig", "IStarPI", "IntelligentPI", "LambdaProfile", "MetricsReport",
    "PiGains", "PlantDiverged", "PlantRuntime", "ReferenceTrajectory", "ScenarioConfig",
    "SimTrace", "StateDelay", "StateSpaceSystem", "SwitchEvent", "SwitchingSchedule",
    "UltraLocalConfig", "apply_schedule", "builtin_bank", "builtin_scenario",
    "builtin_scenarios", "classic_pi_update", "compute_metrics", "controller_from_dict",
    "estimate_F", "estimate_derivative", "gain_eval", "ipi_update", "istar_update",
    "kernels", "lambda_eval", "read_delayed", "reference_eval", "run_closed_loop",
    "switch_active", "zoh_step",
]
