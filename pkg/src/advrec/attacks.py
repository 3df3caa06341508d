"""Adversarial perturbations of agent states and the schedulers that gate them.

FGSM descends the critic ``Q(s, a)``; JSMA and Deepfool work on the policy
logits. Every attack returns a :class:`Perturbation` of the state vector.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .env import ConfigError, Trajectory, World, rollout
from .ndiff import Graph
from .seeding import stream

FAMILIES = ("fgsm_l1", "fgsm_l2", "fgsm_linf", "jsma", "deepfool", "none")
SCHEDULERS = ("always", "random", "timed")
FGSM_NORMS = {"fgsm_l1": "l1", "fgsm_l2": "l2", "fgsm_linf": "linf"}
MASK_VALUE = -1e9


@dataclass(frozen=True)
class Scheduler:
    kind: str = "always"
    p_freq: float = 1.0
    threshold: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULERS:
            raise ConfigError(f"unknown scheduler {self.kind!r}; valid: {', '.join(SCHEDULERS)}")
        if not 0.0 < self.p_freq <= 1.0:
            raise ConfigError(f"p_freq must lie in (0, 1], got {self.p_freq}")
        if not 0.0 <= self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in [0, 1), got {self.threshold}")

    def label(self) -> str:
        if self.kind == "random":
            return f"random({self.p_freq:g})"
        if self.kind == "timed":
            return f"timed({self.threshold:g})"
        return "always"


@dataclass(frozen=True)
class AttackSpec:
    family: str
    epsilon: float = 0.0
    scheduler: Scheduler = field(default_factory=Scheduler)
    name: str = ""
    theta: float = 0.1
    max_dims: int = 4
    jsma_iters: int = 20
    jsma_sign_filter: bool = True
    sample_k: int = 10
    overshoot: float = 0.02
    deepfool_iters: int = 20

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown attack family {self.family!r}; valid families: {', '.join(FAMILIES)}")
        if self.family != "none" and not self.epsilon > 0:
            raise ConfigError(f"{self.family}: epsilon must be > 0, got {self.epsilon}")
        if not self.name:
            object.__setattr__(self, "name", self.family)

    @classmethod
    def from_dict(cls, doc: dict) -> "AttackSpec":
        doc = dict(doc)
        sched = doc.pop("scheduler", None) or {}
        if isinstance(sched, str):
            sched = {"kind": sched}
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown attack fields {sorted(unknown)}")
        return cls(scheduler=Scheduler(**sched), **doc)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Perturbation:
    delta: np.ndarray
    norm_l1: float
    norm_l2: float
    norm_linf: float
    applied: bool
    iterations: int = 0

    @classmethod
    def of(cls, delta, applied: bool | None = None, iterations: int = 0) -> "Perturbation":
        d = np.asarray(delta, dtype=np.float64).copy()
        if applied is None:
            applied = bool(np.any(d != 0.0))
        return cls(d, float(np.abs(d).sum()), float(np.linalg.norm(d)),
                   float(np.abs(d).max()) if d.size else 0.0, applied, iterations)

    @classmethod
    def zero(cls, dim: int, iterations: int = 0) -> "Perturbation":
        return cls.of(np.zeros(dim), False, iterations)


@dataclass
class AttackReport:
    family: str
    epsilon: float
    scheduler: str
    achieved_frequency: float
    mean_delta_l1: float
    mean_delta_l2: float
    mean_delta_linf: float
    wall_time_s: float
    name: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


# gradient helpers


def _logits(agent, g: Graph, s, available):
    logits = agent.policy_logits(g, s)
    if available is None:
        return logits
    return g.add(logits, g.constant(np.where(available, 0.0, MASK_VALUE)))


def _argmax(values: np.ndarray, available) -> int:
    if available is None:
        return int(np.argmax(values))
    return int(np.argmax(np.where(available, values, -np.inf)))


def fgsm(agent, state, action_vec, norm: str, epsilon: float) -> Perturbation:
    """One-step descent on ``Q(s, action_vec)`` inside an l1/l2/linf ball.

    ``action_vec`` is the embedding of the clean greedy action. The l1 step
    spends the whole budget on the coordinate with the largest gradient.
    """
    state = np.asarray(state, dtype=np.float64)
    g = Graph(None)
    s = g.leaf(state)
    g.backward(agent.q_value(g, s, g.constant(action_vec)))
    return fgsm_from_grad(s.grad, norm, epsilon)


def fgsm_from_grad(grad, norm: str, epsilon: float) -> Perturbation:
    grad = np.asarray(grad, dtype=np.float64)
    if not np.any(grad != 0.0):
        return Perturbation.zero(grad.size)
    if norm == "linf":
        delta = -epsilon * np.sign(grad)
    elif norm == "l2":
        delta = -epsilon * grad / np.linalg.norm(grad)
    elif norm == "l1":
        j = int(np.argmax(np.abs(grad)))
        delta = np.zeros_like(grad)
        delta[j] = -epsilon * np.sign(grad[j])
    else:
        raise ConfigError(f"unknown FGSM norm {norm!r}")
    return Perturbation.of(delta, True)


def jsma(agent, state, epsilon: float, theta: float, max_dims: int, max_iters: int,
         available=None, target: int | None = None, sign_filter: bool = True) -> Perturbation:
    """Saliency-map attack pushing the runner-up item past the current argmax.

    Saliency of dimension i is ``dp_target/dx_i * -dp_current/dx_i``. With
    ``sign_filter`` dimensions where either factor points the wrong way are
    discarded. The chosen dimension moves by ``theta * sign(dp_target/dx_i)``.
    """
    state = np.asarray(state, dtype=np.float64)
    dim = state.size
    g = Graph(None)
    probs0 = _masked_probs(agent, g, state, available)
    current = _argmax(probs0, available)
    if target is None:
        ranked = np.where(available, probs0, -np.inf) if available is not None else probs0
        order = np.argsort(-ranked, kind="stable")
        if len(order) < 2 or not np.isfinite(ranked[order[1]]):
            return Perturbation.zero(dim)
        target = int(order[1])
    if target == current or max_dims <= 0:
        return Perturbation.zero(dim)

    delta = np.zeros(dim)
    touched: set[int] = set()
    it = 0
    while it < max_iters:
        g = Graph(None)
        s = g.leaf(state + delta)
        p = g.softmax(_logits(agent, g, s, available))
        if _argmax(p.value, available) != current:
            break
        seed = np.zeros(p.shape)
        seed[target] = 1.0
        g.backward(p, seed)
        d_target = s.grad.copy()
        seed[:] = 0.0
        seed[current] = 1.0
        g.backward(p, seed)
        d_current = s.grad.copy()
        saliency = d_target * -d_current
        if sign_filter:
            saliency = np.where((d_target > 0) & (d_current < 0), saliency, 0.0)
        if len(touched) >= max_dims:
            allowed = np.zeros(dim, dtype=bool)
            allowed[list(touched)] = True
            saliency = np.where(allowed, saliency, 0.0)
        i = int(np.argmax(saliency))
        if saliency[i] <= 0.0:
            break
        step = theta * np.sign(d_target[i])
        if abs(delta[i] + step) > epsilon + 1e-12:
            break
        delta[i] += step
        touched.add(i)
        it += 1
    return Perturbation.of(delta, iterations=it)


def _masked_probs(agent, g, state, available):
    return g.softmax(_logits(agent, g, g.constant(state), available)).value


def deepfool(agent, state, epsilon: float, sample_k: int, overshoot: float, max_iters: int,
             rng: np.random.Generator, available=None) -> Perturbation:
    """Deepfool over a random subset of competitor classes each iteration.

    Each step projects onto the nearest linearized boundary among
    ``sample_k`` sampled classes; the total perturbation is capped at l2
    norm ``epsilon``. Reaching a tie with the original class counts as a flip.
    """
    state = np.asarray(state, dtype=np.float64)
    dim = state.size
    g = Graph(None)
    f0 = _logits(agent, g, g.constant(state), available).value
    n = f0.size
    if n < 2:
        raise ValueError("deepfool needs at least two actions")
    orig = _argmax(f0, available)
    candidates = np.array([c for c in range(n) if c != orig and (available is None or available[c])])
    if candidates.size == 0:
        return Perturbation.zero(dim)
    delta = np.zeros(dim)
    moved = False
    it = 0
    while it < max_iters:
        g = Graph(None)
        s = g.leaf(state + delta)
        f = _logits(agent, g, s, available)
        fv = f.value
        if np.max(fv[candidates]) >= fv[orig]:
            break
        it += 1
        k = min(sample_k, candidates.size)
        picked = candidates if k == candidates.size else rng.choice(candidates, size=k, replace=False)
        best, best_w, best_d = np.inf, None, 0.0
        for c in picked:
            seed = np.zeros(n)
            seed[c] += 1.0
            seed[orig] -= 1.0
            g.backward(f, seed)
            w = s.grad
            wn = np.linalg.norm(w)
            if wn == 0.0:
                continue
            d = fv[c] - fv[orig]
            dist = abs(d) / wn
            if dist < best:
                best, best_w, best_d = dist, w.copy(), d
        if best_w is None:
            continue
        delta = delta + (abs(best_d) / (best_w @ best_w)) * best_w * (1.0 + overshoot)
        moved = True
        norm = np.linalg.norm(delta)
        if norm > epsilon:
            delta = delta * (epsilon / norm)
            break
    if not moved:
        return Perturbation.zero(dim, it)
    return Perturbation.of(delta, True, it)


def timed_mask(policy_probs, threshold: float) -> bool:
    """Attack only when the top-two probability gap exceeds ``threshold``."""
    p = np.asarray(policy_probs, dtype=np.float64)
    if p.size < 2:
        raise ValueError("timed_mask needs at least two probabilities")
    top2 = np.partition(p, -2)[-2:]
    return bool(top2[1] - top2[0] > threshold)


def random_mask(p_freq: float, rng: np.random.Generator) -> bool:
    return bool(rng.random() < p_freq)


def make_perturber(agent, world: World, spec: AttackSpec, rng: np.random.Generator):
    """Scheduler-gated perturbation hook for :func:`advrec.env.rollout`."""
    if spec.family == "none":
        return None
    items = world.table.items
    sched = spec.scheduler

    def perturb(t, state, probs, available):
        # one draw per step keeps the stream aligned across schedulers
        draw = rng.random()
        if sched.kind == "random" and not draw < sched.p_freq:
            return None
        if sched.kind == "timed" and not timed_mask(probs, sched.threshold):
            return None
        if spec.family in FGSM_NORMS:
            hint = int(np.argmax(probs))
            return fgsm(agent, state, items[hint], FGSM_NORMS[spec.family], spec.epsilon)
        if spec.family == "jsma":
            return jsma(agent, state, spec.epsilon, spec.theta, spec.max_dims, spec.jsma_iters,
                        available=available, sign_filter=spec.jsma_sign_filter)
        return deepfool(agent, state, spec.epsilon, spec.sample_k, spec.overshoot,
                        spec.deepfool_iters, rng, available=available)

    return perturb


def _craft_users(agent, world, spec, users, seed, path_length):
    out = []
    for user in users:
        rng = stream(seed, "craft", user)
        inner = make_perturber(agent, world, spec, rng)
        log: list[tuple[float, float, float]] = []

        def perturber(t, state, probs, available, inner=inner, log=log):
            pert = inner(t, state, probs, available)
            if pert is not None and pert.applied:
                log.append((pert.norm_l1, pert.norm_l2, pert.norm_linf))
            return pert

        traj = rollout(agent, world, int(user), perturber if inner else None,
                       greedy=True, path_length=path_length)
        traj.label = int(spec.family != "none")
        out.append((traj, log))
    return out


def default_workers() -> int:
    env = os.environ.get("ADVREC_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"ADVREC_WORKERS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"ADVREC_WORKERS must be >= 1, got {env!r}")
        return n
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def craft_dataset(agent, world: World, spec: AttackSpec, users, seed: int, path_length: int = 4,
                  workers: int | None = None) -> tuple[list[Trajectory], AttackReport]:
    """One greedy rollout per user under ``spec``; results are in user order."""
    users = [int(u) for u in users]
    if not users:
        raise ConfigError("craft_dataset needs at least one user")
    workers = workers or default_workers()
    start = time.perf_counter()
    if workers <= 1 or len(users) < 2 * workers:
        results = _craft_users(agent, world, spec, users, seed, path_length)
    else:
        chunks = [users[i::workers] for i in range(workers)]
        args = [(agent, world, spec, c, seed, path_length) for c in chunks]
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_craft_users, *zip(*args)))
        by_user = {traj.user: (traj, log) for part in parts for traj, log in part}
        results = [by_user[u] for u in users]
    elapsed = time.perf_counter() - start
    trajs = [traj for traj, _ in results]
    norms = [n for _, log in results for n in log]
    total = sum(len(t.steps) for t in trajs)
    mean = np.mean(norms, axis=0) if norms else np.zeros(3)
    report = AttackReport(
        family=spec.family, epsilon=spec.epsilon, scheduler=spec.scheduler.label(),
        achieved_frequency=len(norms) / total, mean_delta_l1=float(mean[0]),
        mean_delta_l2=float(mean[1]), mean_delta_linf=float(mean[2]),
        wall_time_s=elapsed, name=spec.name,
    )
    return trajs, report
