"""Distribution shift (RBF-kernel MMD) and top-k ranking metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class MMDResult:
    value: float
    gamma: float
    n: int
    m: int


@dataclass(frozen=True)
class MetricsReport:
    ndcg: float
    recall: float
    hit_ratio: float
    precision: float
    k: int = 10
    users: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def _as_samples(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError(f"expected a non-empty (n, d) sample array, got shape {arr.shape}")
    return arr


def mmd_rbf(X, Y, gamma: float) -> MMDResult:
    """Biased squared-MMD estimate with ``k(a, b) = exp(-gamma * |a - b|^2)``."""
    X, Y = _as_samples(X), _as_samples(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    kxx = np.exp(-gamma * _sq_dists(X, X)).mean()
    kyy = np.exp(-gamma * _sq_dists(Y, Y)).mean()
    kxy = np.exp(-gamma * _sq_dists(X, Y)).mean()
    return MMDResult(float(kxx + kyy - 2.0 * kxy), float(gamma), len(X), len(Y))


def median_gamma(X) -> float:
    """Median heuristic ``1 / (2 * median^2)`` over distinct pairwise distances."""
    X = _as_samples(X)
    d2 = _sq_dists(X, X)[np.triu_indices(len(X), k=1)]
    # the expanded form leaves round-off residue on coincident points
    d2 = d2[d2 > 1e-9 * max(float(d2.max(initial=0.0)), 1e-300)]
    if d2.size == 0:
        return 1.0
    return float(1.0 / (2.0 * np.median(d2)))


def topk_metrics(rankings: Sequence[Sequence[int]], relevant: Sequence[set], k: int = 10) -> MetricsReport:
    """Macro-averaged NDCG/Recall/HR/Precision at ``k`` with binary gains.

    Users with an empty relevant set are excluded.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(rankings) != len(relevant):
        raise ValueError(f"{len(rankings)} rankings for {len(relevant)} relevant sets")
    discounts = 1.0 / np.log2(np.arange(2, k + 2))
    totals = np.zeros(4)
    counted = 0
    for user, (ranked, rel) in enumerate(zip(rankings, relevant)):
        if len(ranked) < k:
            raise ValueError(f"user {user}: ranked list of length {len(ranked)} shorter than k={k}")
        if not rel:
            continue
        hits = np.array([int(i) in rel for i in ranked[:k]], dtype=np.float64)
        h = hits.sum()
        idcg = discounts[: min(len(rel), k)].sum()
        totals += (hits @ discounts / idcg, h / len(rel), float(h > 0), h / k)
        counted += 1
    if counted == 0:
        return MetricsReport(0.0, 0.0, 0.0, 0.0, k, 0)
    ndcg, recall, hr, prec = (float(x) for x in totals / counted)
    return MetricsReport(ndcg, recall, hr, prec, k, counted)


# attack comparison over labeled trajectory sets


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    family: str
    epsilon: float
    scheduler: str
    achieved_frequency: float
    ndcg: float
    recall: float
    hr: float
    precision: float
    mmd_org: float
    mmd_ref: float

    def as_dict(self) -> dict:
        return asdict(self)


COMPARISON_COLUMNS = tuple(ComparisonRow.__dataclass_fields__)


def action_vectors(item_vectors: np.ndarray, trajectories) -> np.ndarray:
    """Pool every step's action embedding into one (N*T, d) sample array."""
    idx = [a for t in trajectories for a in t.actions]
    return np.asarray(item_vectors, dtype=np.float64)[np.array(idx, dtype=np.int64)]


def first_step_rankings(trajectories) -> list[np.ndarray]:
    """Rankings from the step-1 probabilities each rollout acted on (perturbed when attacked)."""
    from .env import ranking_from_probs

    return [ranking_from_probs(np.asarray(t.steps[0].policy_probs)) for t in trajectories]


def trajectory_metrics(trajectories, relevant, k: int = 10) -> MetricsReport:
    return topk_metrics(first_step_rankings(trajectories), [relevant[t.user] for t in trajectories], k)


def split_baseline(benign: np.ndarray, n_steps: int, gamma: float) -> MMDResult:
    """MMD between the benign actions of even- and odd-indexed trajectories."""
    per = benign.reshape(-1, n_steps, benign.shape[-1])
    return mmd_rbf(per[0::2].reshape(-1, per.shape[-1]), per[1::2].reshape(-1, per.shape[-1]), gamma)


def compare(item_vectors, relevant, benign, datasets, reference: str = "fgsm_l1",
            gamma: float | None = None, k: int = 10) -> list[ComparisonRow]:
    """One row per ``(report, trajectories)`` entry of ``datasets``.

    ``mmd_org`` compares against the benign pool; rows with family ``none``
    get the benign even/odd split baseline instead of a trivial zero.
    ``mmd_ref`` compares against the dataset whose name is ``reference``
    (NaN when that dataset is absent).
    """
    benign_x = action_vectors(item_vectors, benign)
    steps = len(benign[0].steps)
    if gamma is None:
        gamma = median_gamma(benign_x)
    pools = {rep.name: action_vectors(item_vectors, trajs) for rep, trajs in datasets}
    ref = pools.get(reference)
    rows = []
    for rep, trajs in datasets:
        m = trajectory_metrics(trajs, relevant, k)
        x = pools[rep.name]
        if rep.family == "none":
            org = split_baseline(x, steps, gamma).value
        else:
            org = mmd_rbf(benign_x, x, gamma).value
        if ref is None:
            mref = float("nan")
        elif rep.name == reference:
            mref = split_baseline(x, steps, gamma).value
        else:
            mref = mmd_rbf(ref, x, gamma).value
        rows.append(ComparisonRow(rep.name, rep.family, rep.epsilon, rep.scheduler, rep.achieved_frequency,
                                  m.ndcg, m.recall, m.hit_ratio, m.precision, org, mref))
    return rows


def attack_comparison(agent, world, specs, seed: int, reference: str = "fgsm_l1", users=None,
                      gamma: float | None = None, k: int = 10, path_length: int = 4,
                      workers: int | None = None):
    """Craft every spec, then tabulate metrics and MMD against benign and the reference attack.

    Returns ``(rows, datasets)`` where ``datasets`` holds each spec's
    ``(AttackReport, trajectories)`` so callers can persist them.
    """
    from .attacks import AttackSpec, craft_dataset

    users = range(world.n_users) if users is None else users
    benign, _ = craft_dataset(agent, world, AttackSpec("none"), users, seed, path_length, workers)
    datasets = [craft_dataset(agent, world, spec, users, seed, path_length, workers) for spec in specs]
    datasets = [(rep, trajs) for trajs, rep in datasets]
    rows = compare(world.table.items, world.relevant, benign, datasets, reference, gamma, k)
    return rows, datasets


SWEEP_COLUMNS = ("attack", "scheduler", "target_frequency", "parameter", "achieved_frequency",
                 "ndcg", "recall", "hr", "precision")


def top_two_gaps(trajectories) -> np.ndarray:
    """Largest-minus-second probability at every recorded step."""
    out = []
    for t in trajectories:
        for s in t.steps:
            p = np.sort(np.asarray(s.policy_probs))
            out.append(p[-1] - p[-2])
    return np.array(out)


def timed_threshold(gaps: np.ndarray, frequency: float) -> float:
    """Threshold under which a ``frequency`` share of the given gaps would be attacked."""
    ordered = np.sort(np.asarray(gaps))[::-1]
    n = int(np.ceil(frequency * len(ordered)))
    if n >= len(ordered):
        return 0.0
    return float(min(ordered[n], 1.0 - 1e-9))


def frequency_sweep(agent, world, spec, kind: str, frequencies, seed: int, benign, users=None,
                    k: int = 10, path_length: int = 4, workers: int | None = None) -> list[dict]:
    """NDCG and friends under ``spec`` gated at each target frequency.

    ``random`` uses the frequency as ``p_freq``. ``timed`` picks the threshold
    whose share of benign top-two gaps above it equals the frequency, so the
    achieved frequency is close but not identical to the target.
    """
    from dataclasses import replace

    from .attacks import Scheduler, craft_dataset

    users = range(world.n_users) if users is None else users
    gaps = top_two_gaps(benign) if kind == "timed" else None
    rows = []
    for f in frequencies:
        if kind == "random":
            sched, param = Scheduler("random", p_freq=float(f)), float(f)
        elif kind == "timed":
            param = timed_threshold(gaps, f)
            sched = Scheduler("timed", threshold=param)
        else:
            raise ValueError(f"unknown sweep kind {kind!r}")
        trajs, rep = craft_dataset(agent, world, replace(spec, scheduler=sched), users, seed, path_length, workers)
        m = trajectory_metrics(trajs, world.relevant, k)
        rows.append({"attack": spec.name, "scheduler": kind, "target_frequency": float(f), "parameter": param,
                     "achieved_frequency": rep.achieved_frequency, "ndcg": m.ndcg, "recall": m.recall,
                     "hr": m.hit_ratio, "precision": m.precision})
    return rows
