from .autograd import NonFiniteError, Tape, Tensor, backward, concat, no_grad_copy, take, where
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import gradcheck
from .nn import MlpParams, forward_mlp, init_mlp
from .optim import AdamState, adam_step, clip_grad_norm

__all__ = [
    "AdamState",
    "CheckpointError",
    "MlpParams",
    "NonFiniteError",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "clip_grad_norm",
    "concat",
    "forward_mlp",
    "gradcheck",
    "init_mlp",
    "load_checkpoint",
    "no_grad_copy",
    "save_checkpoint",
    "take",
    "where",
]
