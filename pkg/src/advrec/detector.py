"""Black-box attack detector over action-embedding sequences.

A GRU encodes the sequence; an attention decoder re-reads it, scaling each
action by its attention weight before feeding a second GRU, and a sigmoid
head emits one attack probability per step.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import ndiff
from .env import Trajectory, World
from .ndiff import Graph, Node
from .seeding import stream

CLAMP = 1e-7
ATTN_CONTEXTS = ("final", "per_step")


@dataclass
class DetectorConfig:
    hidden: int = 32
    dropout: float = 0.5
    lr: float = 5e-4
    weight_decay: float = 0.01
    epochs: int = 60
    batch: int = 32
    split: float = 0.8
    seed: int = 0
    gru_variant: str = "standard"
    attn_context: str = "final"


@dataclass
class DetectionSample:
    actions: np.ndarray  # (T, item_dim)
    label: int


@dataclass
class PRFReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float = 0.5

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class DetectorParams:
    params: dict[str, np.ndarray]
    item_dim: int
    hidden: int
    gru_variant: str = "standard"
    attn_context: str = "final"
    history: list[dict] = field(default_factory=list)

    @classmethod
    def init(cls, item_dim: int, config: DetectorConfig, rng: np.random.Generator) -> "DetectorParams":
        if config.attn_context not in ATTN_CONTEXTS:
            raise ValueError(f"unknown attn_context {config.attn_context!r}; expected one of {ATTN_CONTEXTS}")
        h = config.hidden
        p = {}
        p.update(ndiff.gru_params(rng, "enc", item_dim, h))
        p.update(ndiff.dense_params(rng, "comb", item_dim + 2 * h, h))
        p.update(ndiff.dense_params(rng, "attn", h, 1))
        p.update(ndiff.gru_params(rng, "dec", item_dim, h))
        p.update(ndiff.dense_params(rng, "head", h, 1))
        return cls(p, item_dim, h, config.gru_variant, config.attn_context)

    def header(self) -> dict:
        return {"kind": "detector", "item_dim": self.item_dim, "hidden": self.hidden,
                "gru_variant": self.gru_variant, "attn_context": self.attn_context}

    def save(self, path) -> None:
        ndiff.save_params(path, self.params, self.header())

    @classmethod
    def load(cls, path) -> "DetectorParams":
        params, header = ndiff.load_params(path)
        if header.get("kind") != "detector":
            raise ValueError(f"{path} is not a detector checkpoint")
        return cls(params, header["item_dim"], header["hidden"], header["gru_variant"], header["attn_context"])


def _steps(g: Graph, actions: np.ndarray) -> list[Node]:
    """Split a (B, T, d) or (T, d) array into T constant nodes."""
    actions = np.asarray(actions, dtype=np.float64)
    return [g.constant(actions[..., t, :]) for t in range(actions.shape[-2])]


def encode(g: Graph, p: dict[str, Node], a: list[Node], hidden: int, variant: str = "standard"):
    h = g.constant(np.zeros(a[0].shape[:-1] + (hidden,)))
    outs = []
    for a_t in a:
        h = ndiff.gru_cell(g, a_t, h, p, "enc", variant)
        outs.append(h)
    return outs, h


def attend_classify(g: Graph, p: dict[str, Node], a: list[Node], enc_out: list[Node], hidden: int,
                    training: bool = False, dropout: float = 0.5, variant: str = "standard",
                    context: str = "final") -> tuple[list[Node], list[Node]]:
    """Per-step probabilities and attention weights.

    At decoder step t every position s gets a score from
    ``relu(W_c [a_s || hid_t || ctx_s])``; the T scores are softmax-normalized
    and component t scales ``a_t`` before the decoder GRU consumes it.
    """
    T = len(a)
    hid = g.constant(np.zeros(a[0].shape[:-1] + (hidden,)))
    probs, alphas = [], []
    for t in range(T):
        scores = []
        for s in range(T):
            ctx = enc_out[-1] if context == "final" else enc_out[s]
            e = g.relu(ndiff.dense(g, g.concat([a[s], hid, ctx]), p, "comb"))
            e = g.dropout(e, dropout, training)
            scores.append(g.pick(ndiff.dense(g, e, p, "attn"), 0))
        alpha = g.softmax(g.stack(scores))
        alphas.append(alpha)
        weight = g.pick(alpha, t)
        hid = ndiff.gru_cell(g, g.row_scale(a[t], weight), hid, p, "dec", variant)
        probs.append(g.sigmoid(g.pick(ndiff.dense(g, hid, p, "head"), 0)))
    return probs, alphas


def forward(det: DetectorParams, actions: np.ndarray, training: bool = False, dropout: float = 0.5,
            rng: np.random.Generator | int | None = None):
    g = Graph(rng)
    p = ndiff.bind(g, det.params)
    a = _steps(g, actions)
    enc_out, _ = encode(g, p, a, det.hidden, det.gru_variant)
    probs, alphas = attend_classify(g, p, a, enc_out, det.hidden, training, dropout,
                                    det.gru_variant, det.attn_context)
    return g, p, probs, alphas


def loss_node(g: Graph, probs: list[Node], labels: np.ndarray) -> Node:
    """Mean over steps (and batch) of clamped binary cross-entropy."""
    y = g.constant(labels)
    one = g.constant(np.ones(probs[0].shape))
    terms = []
    for p in probs:
        pc = g.clip(p, CLAMP, 1.0 - CLAMP)
        ll = g.add(g.mul(y, g.log(pc)), g.mul(g.sub(one, y), g.log(g.sub(one, pc))))
        terms.append(g.mean(ll))
    total = terms[0]
    for term in terms[1:]:
        total = g.add(total, term)
    return g.scale(total, -1.0 / len(probs))


def detector_loss(probs, label: int) -> float:
    p = np.clip(np.asarray(probs, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    return float(np.mean(-(label * np.log(p) + (1 - label) * np.log(1.0 - p))))


def predict_proba(det: DetectorParams, actions: np.ndarray) -> np.ndarray:
    """Last-step attack probability for each sequence in a (B, T, d) batch."""
    actions = np.asarray(actions, dtype=np.float64)
    single = actions.ndim == 2
    if single:
        actions = actions[None]
    if actions.shape[-1] != det.item_dim:
        raise ValueError(f"action dim {actions.shape[-1]} does not match detector input {det.item_dim}")
    _, _, probs, _ = forward(det, actions)
    out = probs[-1].value
    return out[0] if single else out


def prf(labels, preds, threshold: float = 0.5) -> PRFReport:
    labels = np.asarray(labels, dtype=bool)
    preds = np.asarray(preds, dtype=bool)
    tp = int(np.sum(labels & preds))
    fp = int(np.sum(~labels & preds))
    tn = int(np.sum(~labels & ~preds))
    fn = int(np.sum(labels & ~preds))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRFReport(precision, recall, f1, tp, fp, tn, fn, threshold)


def evaluate_detector(det: DetectorParams, samples: list[DetectionSample],
                      decision_threshold: float = 0.5, batch: int = 256) -> PRFReport:
    if not samples:
        return prf([], [], decision_threshold)
    probs = []
    for i in range(0, len(samples), batch):
        chunk = samples[i:i + batch]
        probs.append(predict_proba(det, np.stack([s.actions for s in chunk])))
    p = np.concatenate(probs)
    return prf([s.label for s in samples], p > decision_threshold, decision_threshold)


def _mean_loss(det: DetectorParams, samples: list[DetectionSample]) -> float:
    x = np.stack([s.actions for s in samples])
    y = np.array([s.label for s in samples], dtype=np.float64)
    g, _, probs, _ = forward(det, x)
    return float(loss_node(g, probs, y).value)


def train_detector(samples: list[DetectionSample], config: DetectorConfig) -> tuple[DetectorParams, PRFReport]:
    """Adam on shuffled mini-batches; keeps the epoch with the best validation F1.

    Ties on F1 go to the lower validation loss. The returned params carry a
    per-epoch ``history`` of train loss and validation scores.
    """
    labels = {s.label for s in samples}
    if labels != {0, 1}:
        raise ValueError(f"detector training needs both labels present, got {sorted(labels)}")
    rng = stream(config.seed, "detector-split")
    order = rng.permutation(len(samples))
    n_train = int(round(config.split * len(samples)))
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:]] or train
    item_dim = samples[0].actions.shape[-1]
    det = DetectorParams.init(item_dim, config, stream(config.seed, "detector-init"))
    opt = ndiff.AdamState(lr=config.lr, weight_decay=config.weight_decay)
    batch_rng = stream(config.seed, "detector-batches")
    drop_rng = stream(config.seed, "detector-dropout")

    best_report = evaluate_detector(det, val)
    best_key = (best_report.f1, -_mean_loss(det, val))
    best_params = {k: v.copy() for k, v in det.params.items()}
    det.history.append({"epoch": 0, "train_loss": None, "val_f1": best_report.f1, "val_loss": -best_key[1]})
    x_all = np.stack([s.actions for s in train])
    y_all = np.array([s.label for s in train], dtype=np.float64)
    for epoch in range(1, config.epochs + 1):
        perm = batch_rng.permutation(len(train))
        losses = []
        for i in range(0, len(train), config.batch):
            idx = perm[i:i + config.batch]
            g, p, probs, _ = forward(det, x_all[idx], training=True, dropout=config.dropout, rng=drop_rng)
            loss = loss_node(g, probs, y_all[idx])
            g.backward(loss)
            ndiff.adam_step(det.params, {k: n.grad for k, n in p.items()}, opt)
            losses.append(float(loss.value) * len(idx))
        report = evaluate_detector(det, val)
        val_loss = _mean_loss(det, val)
        det.history.append({"epoch": epoch, "train_loss": sum(losses) / len(train),
                            "val_f1": report.f1, "val_loss": val_loss})
        key = (report.f1, -val_loss)
        if key > best_key:
            best_key, best_report = key, report
            best_params = {k: v.copy() for k, v in det.params.items()}
    det.params = best_params
    return det, best_report


def samples_from_trajectories(world: World, trajectories: list[Trajectory],
                              label: int | None = None) -> list[DetectionSample]:
    items = world.table.items
    out = []
    for traj in trajectories:
        y = traj.label if label is None else label
        if y is None:
            raise ValueError(f"trajectory for user {traj.user} has no label")
        out.append(DetectionSample(items[np.array(traj.actions)], int(y)))
    return out
