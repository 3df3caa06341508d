"""Dense float64 tensors with reverse-mode differentiation."""

from .graph import Graph, GraphStateError, Node, ShapeError
from .io import decode_params, encode_params, load_params, save_params
from .layers import GRU_VARIANTS, bind, dense, dense_params, gru_cell, gru_params, init_uniform
from .optim import AdamState, adam_step

__all__ = [
    "AdamState", "GRU_VARIANTS", "Graph", "GraphStateError", "Node", "ShapeError",
    "adam_step", "bind", "decode_params", "dense", "dense_params", "encode_params",
    "gru_cell", "gru_params", "init_uniform", "load_params", "save_params",
]
