from .checkpoint import average_checkpoints, load_checkpoint, save_checkpoint
from .model import (PARAM_ORDER, Batch, ModelConfig, batch_loss, collate, forward, forward_batch, grad,
                    greedy_decode, greedy_decode_batch, init_model, loss, param_shapes)
from .optim import TrainState, adam_step, lr_schedule
from .trainer import Trainer, Translator, dev_bleu

__all__ = [
    "PARAM_ORDER", "Batch", "ModelConfig", "batch_loss", "collate", "forward", "forward_batch", "grad",
    "greedy_decode", "greedy_decode_batch", "init_model", "loss", "param_shapes", "TrainState", "adam_step",
    "lr_schedule", "Trainer", "Translator", "dev_bleu", "save_checkpoint", "load_checkpoint",
    "average_checkpoints",
]
