from .config import ConfigError, ExperimentConfig, TrainConfig, load_config, dump_config
from .train import Trainer, TrainingHalted, evaluate, steps_to_threshold
from .experiments import cmd_ablate, cmd_eval, cmd_train, cmd_transfer
from .plots import CSVParseError, emit_plots

__all__ = [
    "ConfigError", "ExperimentConfig", "TrainConfig", "load_config", "dump_config",
    "Trainer", "TrainingHalted", "evaluate", "steps_to_threshold",
    "cmd_ablate", "cmd_eval", "cmd_train", "cmd_transfer", "CSVParseError", "emit_plots",
]
