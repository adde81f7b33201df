from .agent import (
    LossReport,
    NonFiniteLossError,
    SACAgent,
    SacConfig,
    actor_loss,
    critic_loss,
    critic_targets,
    polyak_update,
)
from .replay import Batch, BufferNotReady, InvalidTransitionError, PrioritizedReplay, SumTree, Transition

__all__ = [
    "LossReport", "NonFiniteLossError", "SACAgent", "SacConfig", "actor_loss", "critic_loss",
    "critic_targets", "polyak_update", "Batch", "BufferNotReady", "InvalidTransitionError",
    "PrioritizedReplay", "SumTree", "Transition",
]
