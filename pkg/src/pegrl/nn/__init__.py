from .layers import Dense, CausalConv1d, TCNBlock, TCN, ShapeError
from .nets import (
    ACTION_DIM,
    FT_CHANNELS,
    FT_WINDOW,
    PROPRIO_DIM,
    MLPPolicy,
    NetConfig,
    NumericError,
    PolicyNet,
    QNet,
    make_policy,
    policy_sample,
)
from .optim import Adam
from .gradcheck import grad_check
from .checkpoint import save_blocks, load_blocks, CheckpointVersionError

__all__ = [
    "Dense", "CausalConv1d", "TCNBlock", "TCN", "ShapeError",
    "ACTION_DIM", "FT_CHANNELS", "FT_WINDOW", "PROPRIO_DIM",
    "MLPPolicy", "NetConfig", "NumericError", "PolicyNet", "QNet", "make_policy", "policy_sample",
    "Adam", "grad_check", "save_blocks", "load_blocks", "CheckpointVersionError",
]
