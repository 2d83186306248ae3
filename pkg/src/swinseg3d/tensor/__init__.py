from .conv import conv3d, max_pool3d, transposed_conv3d, trilinear_upsample
from .ops import (add, concat, div, exp, gelu, getitem, layer_norm, matmul, mean, mul, neg, pad,
                  permute, relu, reshape, roll, sigmoid, softmax, sub, sum, swapaxes, take)
from .optim import AdamState, adam_step
from .tensor import (Tensor, as_tensor, backward, get_default_dtype, is_grad_enabled, no_grad,
                     set_default_dtype)

__all__ = [
    "Tensor", "as_tensor", "backward", "no_grad", "is_grad_enabled",
    "get_default_dtype", "set_default_dtype",
    "add", "sub", "mul", "div", "neg", "exp", "pad", "matmul", "sum", "mean", "reshape", "permute",
    "swapaxes", "roll", "concat", "getitem", "take", "sigmoid", "gelu", "relu", "softmax",
    "layer_norm", "conv3d", "transposed_conv3d", "trilinear_upsample", "max_pool3d",
    "AdamState", "adam_step",
]
