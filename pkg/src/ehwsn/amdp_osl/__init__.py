"""Distributed approximate-MDP controller with online stochastic learning."""

from .allocation import NodeRadio, compute_bid, linearized_gain, optimal_power, queue_cap, water_level
from .controller import TRACE_FIELDS, NodeAgent, OslController, OslRun, SlotRecord, simulate_osl
from .learning import (
    ExplorationSchedule,
    PerNodeValueTable,
    SlotObservation,
    StepSizeSchedule,
    lm_update,
    value_derivatives,
    reference_value,
    value_update,
)
from .protocol import (
    Bid,
    EmptyFlag,
    FcState,
    FusionCenter,
    ProtocolError,
    RsFlag,
    ScheduleNotice,
    fc_representative_check,
    fc_schedule,
)
