from .fedavg import FedAvgState, fedavg_round
from .focus import FocusState, focus_round, sg_focus_round, tracking_residual
from .lr_bounds import LrBound, Regime, max_stable_lr
from .stacked import (
    ScheduleError,
    StackedState,
    fedavg_condensed_step,
    fedavg_matrix_step,
    focus_matrix_step,
    init_fedavg_stacked,
    init_focus_stacked,
    run_fedavg_stacked,
    run_focus_stacked,
    stacked_gradient,
)

__all__ = [
    "FedAvgState", "fedavg_round", "FocusState", "focus_round", "sg_focus_round",
    "tracking_residual", "LrBound", "Regime", "max_stable_lr", "ScheduleError",
    "StackedState", "fedavg_condensed_step", "fedavg_matrix_step", "focus_matrix_step",
    "init_fedavg_stacked", "init_focus_stacked", "run_fedavg_stacked", "run_focus_stacked",
    "stacked_gradient",
]
