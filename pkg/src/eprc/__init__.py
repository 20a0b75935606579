"""Entropy-penalized reparameterization for compressing small neural classifiers.

Weights are represented as integer latents decoded by small per-group linear
decoders. A learned density model supplies a differentiable rate penalty
during training and the frequency tables used by the range coder afterwards.
"""
__version__ = "0.1.0"

from .autodiff import NonFiniteError, ShapeError, Tensor
from .coder import Bitstream, decode, encode, self_information
from .container import ModelArtifacts, deserialize, report_size, serialize
from .data import Dataset, load_mnist_idx, make_synthetic
from .decoders import (DecoderParameters, LatentTensor, decode_bias, decode_conv, decode_dense,
                       make_dft_basis, make_random_orthogonal)
from .density import DensityModel, PmfTable, extract_pmf_table, nll_noisy
from .kernels import backend_name
from .models import ModelSpec, build_lenet300, build_model, build_small_conv, predict
from .optim import EMA, Adam, OptimizerState, adam_step
from .quantizer import add_uniform_noise, ste_round
from .trainer import LossConfig, TrainState, finalize, total_loss, train, train_step

__all__ = [
    "Tensor", "ShapeError", "NonFiniteError",
    "Bitstream", "encode", "decode", "self_information",
    "ModelArtifacts", "serialize", "deserialize", "report_size",
    "Dataset", "load_mnist_idx", "make_synthetic",
    "DecoderParameters", "LatentTensor", "decode_dense", "decode_conv", "decode_bias",
    "make_dft_basis", "make_random_orthogonal",
    "DensityModel", "PmfTable", "nll_noisy", "extract_pmf_table",
    "backend_name",
    "ModelSpec", "build_lenet300", "build_small_conv", "build_model", "predict",
    "Adam", "EMA", "OptimizerState", "adam_step",
    "ste_round", "add_uniform_noise",
    "LossConfig", "TrainState", "total_loss", "train_step", "finalize", "train",
]
