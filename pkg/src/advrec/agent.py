"""Actor-critic recommender: policy MLP over items and a state-action critic."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import ndiff
from .env import World, rank_items
from .ndiff import Graph, Node
from .seeding import stream

ALGOS = ("actor_critic", "reinforce")
BASELINES = ("batch_mean", "expected_q", "q")
MASK_VALUE = -1e9


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}")


@dataclass
class AgentConfig:
    n_items: int
    item_dim: int
    hidden: int = 64
    algo: str = "actor_critic"

    @property
    def state_dim(self) -> int:
        return 2 * self.item_dim


@dataclass
class TrainConfig:
    epochs: int = 400
    episodes_per_epoch: int = 200
    gamma: float = 0.9
    lr: float = 5e-3
    seed: int = 0
    hidden: int = 64
    algo: str = "actor_critic"
    path_length: int = 4
    eval_k: int = 10
    normalize_advantage: bool = True
    baseline: str = "batch_mean"
    entropy_coef: float = 0.0


@dataclass
class TrainReport:
    episodes: int
    mean_reward_curve: list[float] = field(default_factory=list)
    entropy_curve: list[float] = field(default_factory=list)
    final_ndcg10: float = 0.0


class Agent:
    """Policy ``state -> hidden -> n_items`` logits and critic ``[state || item] -> hidden -> 1``."""

    def __init__(self, config: AgentConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: AgentConfig, rng: np.random.Generator) -> "Agent":
        if config.algo not in ALGOS:
            raise ValueError(f"unknown algo {config.algo!r}; expected one of {ALGOS}")
        sd, h = config.state_dim, config.hidden
        params = {}
        params.update(ndiff.dense_params(rng, "pi.0", sd, h))
        params.update(ndiff.dense_params(rng, "pi.1", h, config.n_items))
        params.update(ndiff.dense_params(rng, "q.0", sd + config.item_dim, h))
        params.update(ndiff.dense_params(rng, "q.1", h, 1))
        return cls(config, params)

    # graph builders

    def policy_logits(self, g: Graph, state: Node, p: dict[str, Node] | None = None) -> Node:
        p = p if p is not None else self._bind(g, "pi.")
        return ndiff.dense(g, g.relu(ndiff.dense(g, state, p, "pi.0")), p, "pi.1")

    def q_value(self, g: Graph, state: Node, item_vec: Node, p: dict[str, Node] | None = None) -> Node:
        p = p if p is not None else self._bind(g, "q.")
        x = g.concat([state, item_vec])
        out = ndiff.dense(g, g.relu(ndiff.dense(g, x, p, "q.0")), p, "q.1")
        return g.pick(out, 0)

    def _bind(self, g: Graph, prefix: str) -> dict[str, Node]:
        return ndiff.bind(g, {k: v for k, v in self.params.items() if k.startswith(prefix)})

    # numpy conveniences

    def logits(self, state: np.ndarray) -> np.ndarray:
        g = Graph(None)
        return self.policy_logits(g, g.constant(state)).value

    def probs(self, state: np.ndarray, available: np.ndarray | None = None) -> np.ndarray:
        return masked_softmax(self.logits(state), available)

    def q(self, state: np.ndarray, item_vec: np.ndarray) -> float:
        g = Graph(None)
        return float(self.q_value(g, g.constant(state), g.constant(item_vec)).value)

    # persistence

    def header(self) -> dict:
        return {"kind": "agent", **asdict(self.config), "state_dim": self.config.state_dim}

    def save(self, path) -> None:
        ndiff.save_params(path, self.params, self.header())

    @classmethod
    def load(cls, path) -> "Agent":
        params, header = ndiff.load_params(path)
        if header.get("kind") != "agent":
            raise ValueError(f"{path} is not an agent checkpoint")
        config = AgentConfig(n_items=header["n_items"], item_dim=header["item_dim"],
                             hidden=header["hidden"], algo=header["algo"])
        return cls(config, params)


def masked_softmax(logits: np.ndarray, available: np.ndarray | None = None) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if available is not None:
        z = np.where(available, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def policy_forward(agent: Agent, state: np.ndarray) -> np.ndarray:
    return agent.probs(state)


def q_forward(agent: Agent, state: np.ndarray, item_vec: np.ndarray) -> float:
    return agent.q(state, item_vec)


def shaped_rewards(world: World, users: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Training signal: 1.0 for a training-relevant item, raw cosine otherwise."""
    u = world.table.users[users]
    it = world.table.items[actions]
    cos = np.sum(u * it, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(it, axis=1))
    hit = np.array([int(a) in world.train_relevant[int(b)] for b, a in zip(users, actions)])
    return np.where(hit, 1.0, cos)


def sample_episodes(agent: Agent, world: World, users: np.ndarray, rng: np.random.Generator,
                    path_length: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Batched sampled rollouts without repeats. Returns per-step states and (B, T) actions."""
    b = len(users)
    u = world.table.users[users]
    items = world.table.items
    available = np.ones((b, world.n_items), dtype=bool)
    hist = np.zeros_like(u)
    states, actions = [], np.zeros((b, path_length), dtype=np.int64)
    rows = np.arange(b)
    for t in range(path_length):
        s = np.concatenate([u, hist / max(t, 1)], axis=1)
        probs = masked_softmax(agent.logits(s), available)
        cdf = np.cumsum(probs, axis=1)
        draw = rng.random(b)[:, None] * cdf[:, -1:]
        a = np.minimum((cdf < draw).sum(axis=1), world.n_items - 1)
        # guard against rounding landing on a masked item
        a = np.where(available[rows, a], a, np.argmax(probs, axis=1))
        states.append(s)
        actions[:, t] = a
        available[rows, a] = False
        hist = hist + items[a]
    return states, actions


def _entropy(logits: np.ndarray, mask: np.ndarray) -> float:
    p = masked_softmax(logits, mask)
    logp = np.log(np.where(p > 0, p, 1.0))
    return float(-(p * logp).sum(axis=1).mean())


def train_agent(world: World, config: TrainConfig) -> tuple[Agent, TrainReport]:
    """On-policy training over batched sampled episodes; one Adam step per epoch."""
    if not 0.0 <= config.gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {config.gamma}")
    if config.algo not in ALGOS:
        raise ValueError(f"unknown algo {config.algo!r}; expected one of {ALGOS}")
    if config.baseline not in BASELINES:
        raise ValueError(f"unknown baseline {config.baseline!r}; expected one of {BASELINES}")
    acfg = AgentConfig(world.n_items, world.table.dim, config.hidden, config.algo)
    agent = Agent.init(acfg, stream(config.seed, "agent-init"))
    rng = stream(config.seed, "agent-train")
    opt = ndiff.AdamState(lr=config.lr, weight_decay=0.0)
    report = TrainReport(episodes=0)
    items = world.table.items
    T = config.path_length
    for epoch in range(config.epochs):
        users = rng.choice(world.n_users, size=config.episodes_per_epoch,
                           replace=config.episodes_per_epoch > world.n_users)
        states, actions = sample_episodes(agent, world, users, rng, T)
        rewards = np.stack([shaped_rewards(world, users, actions[:, t]) for t in range(T)], axis=1)
        q_now = np.stack([_q_batch(agent, states[t], items[actions[:, t]]) for t in range(T)], axis=1)
        targets = critic_targets(rewards, q_now, config.gamma, config.algo)
        if config.baseline == "q":
            advantages = targets - q_now
        elif config.baseline == "expected_q":
            masks_np = _step_masks(actions, world.n_items)
            advantages = targets - np.stack(
                [expected_q(agent, states[t], items, masks_np[t]) for t in range(T)], axis=1)
        else:
            advantages = targets - targets.mean(axis=0, keepdims=True)
        if config.normalize_advantage:
            advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

        g = Graph(None)
        p = ndiff.bind(g, agent.params)
        masks = _step_masks(actions, world.n_items)
        actor_terms, critic_terms = [], []
        entropy = 0.0
        for t in range(T):
            s = g.constant(states[t])
            logits = agent.policy_logits(g, s, p)
            logp = g.log_softmax(g.add(logits, g.constant(np.where(masks[t], 0.0, MASK_VALUE))))
            chosen = g.pick(logp, actions[:, t])
            objective = g.mean(g.mul(chosen, g.constant(advantages[:, t])))
            if config.entropy_coef:
                ent = g.scale(g.sum(g.mul(g.exp(logp), logp)), -1.0 / len(users))
                objective = g.add(objective, g.scale(ent, config.entropy_coef))
            actor_terms.append(objective)
            q = agent.q_value(g, s, g.constant(items[actions[:, t]]), p)
            critic_terms.append(g.mean(g.square(g.sub(q, g.constant(targets[:, t])))))
            if t == 0:
                entropy = _entropy(logits.value, masks[t])
        actor = actor_terms[0]
        for term in actor_terms[1:]:
            actor = g.add(actor, term)
        critic = critic_terms[0]
        for term in critic_terms[1:]:
            critic = g.add(critic, term)
        loss = g.sub(critic, actor)
        if not np.isfinite(loss.value):
            raise TrainingDiverged(epoch)
        g.backward(loss)
        grads = {node.name: node.grad for node in p.values()}
        try:
            ndiff.adam_step(agent.params, grads, opt)
        except FloatingPointError:
            raise TrainingDiverged(epoch) from None
        report.episodes += len(users)
        report.mean_reward_curve.append(float(rewards.mean()))
        report.entropy_curve.append(entropy)
    report.final_ndcg10 = clean_ndcg(agent, world, config.eval_k)
    return agent, report


def critic_targets(rewards: np.ndarray, q_now: np.ndarray, gamma: float, algo: str) -> np.ndarray:
    """TD(0) targets ``r_t + gamma * Q_{t+1}`` (terminal bootstrap 0), or discounted returns."""
    T = rewards.shape[1]
    out = np.zeros_like(rewards)
    if algo == "actor_critic":
        out[:, :-1] = rewards[:, :-1] + gamma * q_now[:, 1:]
        out[:, -1] = rewards[:, -1]
    else:
        running = np.zeros(rewards.shape[0])
        for t in reversed(range(T)):
            running = rewards[:, t] + gamma * running
            out[:, t] = running
    return out


def q_all_items(agent: Agent, states: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Critic values for every (state, item) pair, shape (B, n_items).

    The first critic layer splits into a state part and an item part, so the
    (B, n_items) grid is formed without materializing concatenated inputs.
    """
    w0, b0 = agent.params["q.0.W"], agent.params["q.0.b"]
    sd = states.shape[1]
    hs = states @ w0[:, :sd].T + b0
    hi = items @ w0[:, sd:].T
    h = np.maximum(hs[:, None, :] + hi[None, :, :], 0.0)
    return h @ agent.params["q.1.W"][0] + agent.params["q.1.b"][0]


def expected_q(agent: Agent, states: np.ndarray, items: np.ndarray, available: np.ndarray) -> np.ndarray:
    """``sum_a pi(a|s) Q(s, a)`` over available items: an action-independent baseline."""
    probs = masked_softmax(agent.logits(states), available)
    return (probs * q_all_items(agent, states, items)).sum(axis=1)


def _q_batch(agent: Agent, states: np.ndarray, item_vecs: np.ndarray) -> np.ndarray:
    g = Graph(None)
    return agent.q_value(g, g.constant(states), g.constant(item_vecs)).value


def _step_masks(actions: np.ndarray, n_items: int) -> list[np.ndarray]:
    b, T = actions.shape
    avail = np.ones((b, n_items), dtype=bool)
    out = []
    for t in range(T):
        out.append(avail.copy())
        avail[np.arange(b), actions[:, t]] = False
    return out


def clean_rankings(agent: Agent, world: World) -> list[np.ndarray]:
    # per-user forward keeps rankings bit-identical to rollout's first step
    return [rank_items(agent, world, u) for u in range(world.n_users)]


def clean_ndcg(agent: Agent, world: World, k: int = 10) -> float:
    from .analysis import topk_metrics

    return topk_metrics(clean_rankings(agent, world), world.relevant, k).ndcg
