from .base import LOSSES, ForwardCache, LayerInfo, Problem
from .conv import ConvLayerSpec, ConvProblem, conv_forward_backward, kernel_to_matrix, matrix_to_kernel
from .logistic import LogisticRegressionProblem, lr_exact_hessian, lr_value_grad
from .mlp import MLPProblem, mlp_forward_backward
from .pairs import extract_kron_pairs

__all__ = [
    "LOSSES", "ForwardCache", "LayerInfo", "Problem",
    "ConvLayerSpec", "ConvProblem", "conv_forward_backward", "kernel_to_matrix", "matrix_to_kernel",
    "LogisticRegressionProblem", "lr_exact_hessian", "lr_value_grad",
    "MLPProblem", "mlp_forward_backward", "extract_kron_pairs",
]
