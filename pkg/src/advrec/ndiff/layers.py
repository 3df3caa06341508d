"""Neural building blocks on top of :class:`Graph`."""

from __future__ import annotations

import numpy as np

from .graph import Graph, Node, ShapeError

GRU_VARIANTS = ("standard", "paper")


def init_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def dense_params(rng, prefix: str, n_in: int, n_out: int) -> dict[str, np.ndarray]:
    return {
        f"{prefix}.W": init_uniform(rng, (n_out, n_in), n_in),
        f"{prefix}.b": np.zeros(n_out),
    }


def gru_params(rng, prefix: str, n_in: int, hidden: int) -> dict[str, np.ndarray]:
    """Gate weights W_* (hidden, n_in), U_* (hidden, hidden); zero biases."""
    params = {}
    for gate in ("z", "r", "h"):
        params[f"{prefix}.W_{gate}"] = init_uniform(rng, (hidden, n_in), n_in)
        params[f"{prefix}.U_{gate}"] = init_uniform(rng, (hidden, hidden), hidden)
        params[f"{prefix}.b_{gate}"] = np.zeros(hidden)
    return params


def bind(g: Graph, params: dict[str, np.ndarray]) -> dict[str, Node]:
    return {name: g.leaf(value, name=name) for name, value in params.items()}


def dense(g: Graph, x: Node, p: dict[str, Node], prefix: str) -> Node:
    return g.linear(x, p[f"{prefix}.W"], p[f"{prefix}.b"])


def gru_cell(g: Graph, a_t: Node, h_prev: Node, p: dict[str, Node], prefix: str,
             variant: str = "standard") -> Node:
    """One GRU step.

    ``standard`` uses the reset gate inside the candidate,
    ``tanh(W_h a + U_h (r * h) + b_h)``; ``paper`` drops it,
    ``tanh(W_h a + U_h h + b_h)``, leaving ``r`` computed but unused.
    """
    if variant not in GRU_VARIANTS:
        raise ValueError(f"unknown gru variant {variant!r}; expected one of {GRU_VARIANTS}")
    hidden = p[f"{prefix}.U_z"].shape[0]
    if h_prev.shape[-1] != hidden:
        raise ShapeError(f"gru_cell: hidden state shape {h_prev.shape} and hidden size {hidden} differ")

    def gate(name, h):
        return g.add(g.linear(a_t, p[f"{prefix}.W_{name}"], p[f"{prefix}.b_{name}"]),
                     g.linear(h, p[f"{prefix}.U_{name}"]))

    z = g.sigmoid(gate("z", h_prev))
    r = g.sigmoid(gate("r", h_prev))
    h_in = g.mul(r, h_prev) if variant == "standard" else h_prev
    h_cand = g.tanh(gate("h", h_in))
    # (1 - z) * h_prev + z * h_cand == h_prev + z * (h_cand - h_prev)
    return g.add(h_prev, g.mul(z, g.sub(h_cand, h_prev)))
