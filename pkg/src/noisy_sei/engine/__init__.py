"""Minimal reverse-mode autodiff, layers, Adam and checkpoints."""
from .tensor import (ShapeError, Tensor, add, add_scalar, as_tensor, batchnorm1d, concat, conv1d,
                     default_dtype, dropout, float64, grad_enabled, l2_normalize, linear, matmul,
                     maxpool1d, mean, mul, neg, no_grad, relu, reshape, scale, softmax_cross_entropy,
                     softmax_np, log_softmax_np, tsum)
from .nn import BatchNorm1d, Dropout, Linear, Module, Parameter
from .optim import Adam, MissingGradientError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
