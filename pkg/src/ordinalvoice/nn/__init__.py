from .autograd import Tensor, concat, log_sigmoid, mish, mish_array, stack, tensor
from .gradcheck import grad_check
from .model import (
    LEVELS,
    TASKS,
    Checkpoint,
    EncoderConfig,
    LexicalConfig,
    TrunkHeadConfig,
    audio_frames,
    build_audio_model,
    build_model,
    fit_norm,
    forward,
    forward_model,
    lora_linear,
)
from .optim import OptimizerState, adamw_step

__all__ = [
    "Tensor", "tensor", "concat", "stack", "mish", "mish_array", "log_sigmoid", "grad_check",
    "LEVELS", "TASKS", "Checkpoint", "EncoderConfig", "LexicalConfig", "TrunkHeadConfig",
    "audio_frames", "build_audio_model", "build_model", "fit_norm", "forward", "forward_model",
    "lora_linear", "OptimizerState", "adamw_step",
]
