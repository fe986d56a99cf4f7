from .tensor import (Tensor, ShapeMismatch, NonFiniteInput, no_grad,
                     concat, stack, softmax, sigmoid, relu, conv2d)
from .layers import (Parameter, Module, Linear, MLP, CausalConv1d, TCNBlock,
                     cross_attention_head)
from .optim import Adam
from .gradcheck import grad_check
from .checkpoint import save_checkpoint, load_checkpoint, load_into

__all__ = [
    "Tensor", "ShapeMismatch", "NonFiniteInput", "no_grad", "concat", "stack",
    "softmax", "sigmoid", "relu", "conv2d", "Parameter", "Module", "Linear",
    "MLP", "CausalConv1d", "TCNBlock", "cross_attention_head", "Adam",
    "grad_check", "save_checkpoint", "load_checkpoint", "load_into",
]
