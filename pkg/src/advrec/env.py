"""The interactive-recommendation world the agent acts in.

States are ``user_vec || mean(history item vecs)``; rewards are the cosine
between the clean user vector and the recommended item.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol

import numpy as np

from .seeding import stream


class ConfigError(ValueError):
    pass


class EmbeddingParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class EmbeddingTable:
    users: np.ndarray  # (n_users, dim)
    items: np.ndarray  # (n_items, dim)
    user_ids: tuple = ()  # original ids, index = dense id
    item_ids: tuple = ()

    @property
    def dim(self) -> int:
        return self.users.shape[1]

    @property
    def n_users(self) -> int:
        return self.users.shape[0]

    @property
    def n_items(self) -> int:
        return self.items.shape[0]


@dataclass(frozen=True)
class World:
    table: EmbeddingTable
    relevant: tuple[frozenset, ...]
    train_relevant: tuple[frozenset, ...]

    @property
    def n_users(self) -> int:
        return self.table.n_users

    @property
    def n_items(self) -> int:
        return self.table.n_items

    @property
    def state_dim(self) -> int:
        return 2 * self.table.dim


@dataclass
class Step:
    state: list
    action: int
    reward: float
    policy_probs: list
    attacked: bool = False
    delta_norm: float = 0.0


@dataclass
class Trajectory:
    user: int
    steps: list[Step] = field(default_factory=list)
    label: int | None = None

    @property
    def actions(self) -> list[int]:
        return [s.action for s in self.steps]

    def to_json(self) -> str:
        doc = {"user": self.user, "steps": [asdict(s) for s in self.steps]}
        if self.label is not None:
            doc["label"] = self.label
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "Trajectory":
        doc = json.loads(line)
        return cls(user=int(doc["user"]), steps=[Step(**s) for s in doc["steps"]], label=doc.get("label"))


def write_jsonl(path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w", newline="\n") as fh:
        for traj in trajectories:
            fh.write(traj.to_json() + "\n")


def read_jsonl(path) -> list[Trajectory]:
    with open(path) as fh:
        return [Trajectory.from_json(line) for line in fh if line.strip()]


def _normalize(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def split_relevance(table: EmbeddingTable, relevant_per_user: int) -> tuple[tuple, tuple]:
    """Top ``2 * relevant_per_user`` items per user by cosine, alternating by rank.

    Even ranks (best first) go to training, odd ranks are held out.
    """
    if relevant_per_user < 1:
        raise ConfigError("relevant_per_user must be >= 1")
    if table.n_items <= 2 * relevant_per_user:
        raise ConfigError(f"n_items={table.n_items} must exceed 2*relevant_per_user={2 * relevant_per_user}")
    sims = _normalize(table.users) @ _normalize(table.items).T
    held, train = [], []
    for row in sims:
        top = np.argsort(-row, kind="stable")[: 2 * relevant_per_user]
        train.append(frozenset(int(i) for i in top[0::2]))
        held.append(frozenset(int(i) for i in top[1::2]))
    return tuple(held), tuple(train)


def generate_world(n_users: int, n_items: int, dim: int, latent_clusters: int,
                   relevant_per_user: int, seed: int, noise: float = 0.5) -> World:
    """Synthetic world: users and items scattered around shared cluster centers."""
    if dim < 2:
        raise ConfigError(f"dim must be >= 2, got {dim}")
    if latent_clusters < 1:
        raise ConfigError(f"latent_clusters must be >= 1, got {latent_clusters}")
    if n_users < 1 or n_items < 1:
        raise ConfigError("n_users and n_items must be positive")
    rng = stream(seed, "world")
    centers = _normalize(rng.normal(size=(latent_clusters, dim)))
    scale = noise / np.sqrt(dim)
    users = centers[rng.integers(latent_clusters, size=n_users)]
    users = _normalize(users + scale * rng.normal(size=users.shape))
    items = centers[rng.integers(latent_clusters, size=n_items)]
    items = _normalize(items + scale * rng.normal(size=items.shape))
    table = EmbeddingTable(users, items, tuple(range(n_users)), tuple(range(n_items)))
    return world_from_table(table, relevant_per_user)


def world_from_table(table: EmbeddingTable, relevant_per_user: int) -> World:
    relevant, train = split_relevance(table, relevant_per_user)
    return World(table, relevant, train)


def load_embeddings(path) -> EmbeddingTable:
    """Parse the embedding TSV format.

    First non-blank line is ``#dim <d>``; every other line is
    ``u|i <id> <d floats>``, tab separated. Ids are remapped to dense
    integers in order of appearance.
    """
    dim = None
    rows: dict[str, dict[str, list]] = {"u": {}, "i": {}}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            if dim is None:
                head = line.split()
                if len(head) != 2 or head[0] != "#dim":
                    raise EmbeddingParseError("expected header '#dim <d>'", lineno)
                try:
                    dim = int(head[1])
                except ValueError:
                    raise EmbeddingParseError(f"non-integer dim {head[1]!r}", lineno) from None
                if dim < 1:
                    raise EmbeddingParseError(f"dim must be positive, got {dim}", lineno)
                continue
            fields = line.split("\t")
            kind = fields[0]
            if kind not in rows:
                raise EmbeddingParseError(f"unknown row kind {kind!r} (expected 'u' or 'i')", lineno)
            if len(fields) != dim + 2:
                raise EmbeddingParseError(f"expected {dim} values, got {len(fields) - 2}", lineno)
            ident = fields[1]
            if ident in rows[kind]:
                raise EmbeddingParseError(f"duplicate id {ident!r}", lineno)
            try:
                vec = [float(x) for x in fields[2:]]
            except ValueError as exc:
                raise EmbeddingParseError(f"non-numeric field ({exc})", lineno) from None
            if not all(np.isfinite(vec)):
                raise EmbeddingParseError("non-finite value", lineno)
            rows[kind][ident] = vec
    if dim is None:
        raise EmbeddingParseError("empty file: missing '#dim' header")
    if not rows["u"]:
        raise EmbeddingParseError("no users")
    if not rows["i"]:
        raise EmbeddingParseError("no items")
    return EmbeddingTable(
        users=np.array(list(rows["u"].values()), dtype=np.float64),
        items=np.array(list(rows["i"].values()), dtype=np.float64),
        user_ids=tuple(rows["u"]),
        item_ids=tuple(rows["i"]),
    )


def reward(user_vec, item_vec) -> float:
    u = np.asarray(user_vec, dtype=np.float64)
    i = np.asarray(item_vec, dtype=np.float64)
    if u.shape != i.shape:
        raise ValueError(f"reward: shapes {u.shape} and {i.shape} differ")
    nu, ni = np.linalg.norm(u), np.linalg.norm(i)
    if nu == 0.0 or ni == 0.0:
        raise ValueError("cosine undefined for a zero vector")
    return float(np.clip(u @ i / (nu * ni), -1.0, 1.0))


def build_state(user_vec, history: list | np.ndarray) -> np.ndarray:
    user_vec = np.asarray(user_vec, dtype=np.float64)
    if len(history) == 0:
        hist = np.zeros_like(user_vec)
    else:
        hist = np.mean(np.asarray(history, dtype=np.float64), axis=0)
        if hist.shape != user_vec.shape:
            raise ValueError(f"build_state: history vectors of shape {hist.shape}, user vector {user_vec.shape}")
    return np.concatenate([user_vec, hist])


class Policy(Protocol):
    def probs(self, state: np.ndarray, available: np.ndarray | None = None) -> np.ndarray: ...


# perturber(t, clean_state, clean_probs, available) -> object with .delta/.applied, or None
Perturber = Callable[[int, np.ndarray, np.ndarray, np.ndarray], object]


def rollout(agent: Policy, world: World, user: int, perturber: Perturber | None = None,
            rng: np.random.Generator | None = None, greedy: bool = True,
            path_length: int = 4) -> Trajectory:
    """Run one episode of ``path_length`` distinct recommendations for ``user``."""
    if world.n_items < path_length:
        raise ConfigError(f"need at least {path_length} items for a path, world has {world.n_items}")
    if not 0 <= user < world.n_users:
        raise IndexError(f"unknown user {user}")
    if not greedy and rng is None:
        raise ValueError("sampled rollouts need an rng")
    u = world.table.users[user]
    items = world.table.items
    available = np.ones(world.n_items, dtype=bool)
    history: list[np.ndarray] = []
    traj = Trajectory(user=user)
    for t in range(path_length):
        state = build_state(u, history)
        probs = agent.probs(state, available)
        attacked, delta_norm = False, 0.0
        if perturber is not None:
            pert = perturber(t, state, probs, available)
            if pert is not None and pert.applied:
                attacked = True
                delta_norm = float(np.linalg.norm(pert.delta))
                probs = agent.probs(state + pert.delta, available)
        if greedy:
            action = int(np.argmax(probs))
        else:
            action = int(rng.choice(world.n_items, p=probs))
        traj.steps.append(Step(
            state=state.tolist(), action=action, reward=reward(u, items[action]),
            policy_probs=probs.tolist(), attacked=attacked, delta_norm=delta_norm,
        ))
        available[action] = False
        history.append(items[action])
    return traj


def ranking_from_probs(probs: np.ndarray) -> np.ndarray:
    """Descending by probability, ties broken by ascending item id."""
    return np.argsort(-np.asarray(probs), kind="stable")


def rank_items(agent: Policy, world: World, user: int) -> np.ndarray:
    state = build_state(world.table.users[user], [])
    return ranking_from_probs(agent.probs(state))
