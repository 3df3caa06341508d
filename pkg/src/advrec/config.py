"""Experiment configuration: a JSON document mapped onto dataclasses.

See ``configs/example.json`` for a complete example. Unknown keys are
rejected so typos surface as configuration errors instead of silent defaults.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .attacks import AttackSpec
from .env import ConfigError


@dataclass
class WorldConfig:
    n_users: int = 200
    n_items: int = 500
    dim: int = 16
    latent_clusters: int = 8
    relevant_per_user: int = 5
    noise: float = 0.5
    embeddings: str | None = None
    path_length: int = 4


@dataclass
class AgentSection:
    hidden: int = 64
    epochs: int = 400
    episodes_per_epoch: int = 200
    gamma: float = 0.9
    lr: float = 5e-3
    algo: str = "actor_critic"
    entropy_coef: float = 0.0
    baseline: str = "batch_mean"


@dataclass
class SweepConfig:
    attacks: list[str] = field(default_factory=list)
    frequencies: list[float] = field(default_factory=lambda: [round(0.1 * i, 1) for i in range(1, 11)])


@dataclass
class DetectorSection:
    train_attack: str = "fgsm_l1"
    eval_attacks: list[str] = field(default_factory=list)
    train_user_fraction: float = 0.7
    hidden: int = 32
    dropout: float = 0.5
    lr: float = 5e-4
    weight_decay: float = 0.01
    epochs: int = 60
    batch: int = 32
    split: float = 0.8
    gru_variant: str = "standard"
    attn_context: str = "final"
    decision_threshold: float = 0.5


@dataclass
class AnalysisSection:
    k: int = 10
    gamma: float | str = "median"
    reference: str = "fgsm_l1"


@dataclass
class ExperimentConfig:
    seed: int
    out: str = "runs/default"
    dataset: str = "synthetic"
    world: WorldConfig = field(default_factory=WorldConfig)
    agent: AgentSection = field(default_factory=AgentSection)
    attacks: list[AttackSpec] = field(default_factory=list)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    detector: DetectorSection = field(default_factory=DetectorSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["attacks"] = [a.to_dict() for a in self.attacks]
        return doc

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def spec(self, name: str) -> AttackSpec:
        for spec in self.attacks:
            if spec.name == name:
                return spec
        raise ConfigError(f"no attack named {name!r} in the grid; have {[a.name for a in self.attacks]}")


def _section(cls, doc, where: str):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**doc)


def parse_config(doc: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    if "seed" not in doc:
        raise ConfigError("config must set 'seed'")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    try:
        attacks = [AttackSpec.from_dict(a) for a in doc.get("attacks", [])]
    except TypeError as exc:
        raise ConfigError(f"attacks: {exc}") from None
    names = [a.name for a in attacks]
    if len(set(names)) != len(names):
        raise ConfigError(f"attack names must be unique, got {names}")
    try:
        cfg = ExperimentConfig(
            seed=int(doc["seed"]),
            out=doc.get("out", "runs/default"),
            dataset=doc.get("dataset", "synthetic"),
            world=_section(WorldConfig, doc.get("world"), "world"),
            agent=_section(AgentSection, doc.get("agent"), "agent"),
            attacks=attacks,
            sweep=_section(SweepConfig, doc.get("sweep"), "sweep"),
            detector=_section(DetectorSection, doc.get("detector"), "detector"),
            analysis=_section(AnalysisSection, doc.get("analysis"), "analysis"),
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.world.embeddings:
        path = Path(cfg.world.embeddings)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        if not path.exists():
            raise ConfigError(f"embedding file not found: {path}")
        cfg.world.embeddings = str(path)
    names = set(names)
    for ref in [*cfg.sweep.attacks, *cfg.detector.eval_attacks]:
        if ref not in names:
            raise ConfigError(f"attack {ref!r} is not in the grid; have {sorted(names)}")
    for f in cfg.sweep.frequencies:
        if not 0.0 < f <= 1.0:
            raise ConfigError(f"sweep frequencies must lie in (0, 1], got {f}")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(doc, path.parent)
