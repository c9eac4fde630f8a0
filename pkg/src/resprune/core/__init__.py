"""Numeric kernels, layers, optimizer and gradient checking."""
from .gradcheck import GradCheckReport, gradient_check
from .nn import BatchNorm2d, Conv2d, GlobalAvgPool, Linear, Module, Parameter, ReLU
from .optim import OptimizerState, sgd_step

__all__ = [
    "BatchNorm2d", "Conv2d", "GlobalAvgPool", "GradCheckReport", "Linear", "Module",
    "OptimizerState", "Parameter", "ReLU", "gradient_check", "sgd_step",
]
