"""Model-free tuning of MIMO motion feedforward from plant experiments."""

from .lifted import BlockImpulseOperator, ShapeError, SignMatrix, Signal
from .plant import (
    ClosedLoopPlant,
    DeskPlantConfig,
    ExperimentError,
    ExperimentOracle,
    StateSpaceModel,
    default_desk_plant,
)
from .basis import BasisMatrix, ChannelMove, ReferenceProfile, build_basis, generate_reference
from .learner import IterationRecord, LearnerConfig, TuningAborted, run_tuning

__version__ = "0.1.0"
