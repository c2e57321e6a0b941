from .config import ExperimentConfig, config_from_dict, load_config
from .pipeline import (cmd_report, cmd_score, cmd_split, cmd_train_baseline, cmd_train_cl,
                       cmd_train_vanilla, prepare_data, run_all)

__all__ = ["ExperimentConfig", "config_from_dict", "load_config", "cmd_report", "cmd_score",
           "cmd_split", "cmd_train_baseline", "cmd_train_cl", "cmd_train_vanilla", "prepare_data",
           "run_all"]
