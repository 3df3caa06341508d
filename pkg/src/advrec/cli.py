"""Command-line entry point: ``advrec {train-agent,attack,detect,report}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .agent import Agent, TrainConfig, TrainingDiverged, train_agent
from .analysis import COMPARISON_COLUMNS, SWEEP_COLUMNS, compare, frequency_sweep
from .attacks import AttackSpec, craft_dataset
from .config import ExperimentConfig, load_config
from .detector import DetectorConfig, evaluate_detector, samples_from_trajectories, train_detector
from .env import ConfigError, EmbeddingParseError, World, generate_world, load_embeddings, read_jsonl, \
    world_from_table, write_jsonl
from .report import build_report, write_csv

log = logging.getLogger("advrec")

PRF_COLUMNS = ("dataset", "attack", "precision", "recall", "f1", "tp", "fp", "tn", "fn")


class UsageError(Exception):
    """Bad invocation or inputs; maps to exit code 2."""


def build_world(cfg: ExperimentConfig) -> World:
    w = cfg.world
    if w.embeddings:
        return world_from_table(load_embeddings(w.embeddings), w.relevant_per_user)
    return generate_world(w.n_users, w.n_items, w.dim, w.latent_clusters, w.relevant_per_user,
                          seed=cfg.seed, noise=w.noise)


def build_id() -> str:
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return res.stdout.strip() if res.returncode == 0 and res.stdout.strip() else "unknown"


def dump_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=True) + "\n", newline="\n")


def update_manifest(out: Path, cfg: ExperimentConfig | None, stage: str, artifacts: list[Path],
                    wall_time: float) -> None:
    path = out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    digest = cfg.digest() if cfg else manifest.get("config_hash")
    if manifest.get("config_hash") not in (None, digest):
        log.warning("config changed since earlier stages; starting a fresh manifest")
        manifest = {}
    rel = sorted(str(p.relative_to(out)) for p in artifacts)
    for p in artifacts:
        if not p.exists() or p.stat().st_size == 0:
            raise RuntimeError(f"artifact {p} is missing or empty")
    manifest.update({"tool": "advrec", "version": __version__, "build_id": build_id(), "config_hash": digest})
    manifest.setdefault("stages", {})[stage] = {"artifacts": rel, "wall_time_s": round(wall_time, 3)}
    dump_json(path, manifest)


# commands


def cmd_train_agent(cfg: ExperimentConfig, out: Path, args) -> None:
    start = time.perf_counter()
    world = build_world(cfg)
    a = cfg.agent
    tc = TrainConfig(epochs=a.epochs, episodes_per_epoch=a.episodes_per_epoch, gamma=a.gamma, lr=a.lr,
                     seed=cfg.seed, hidden=a.hidden, algo=a.algo, path_length=cfg.world.path_length,
                     eval_k=cfg.analysis.k, baseline=a.baseline, entropy_coef=a.entropy_coef)
    try:
        agent, report = train_agent(world, tc)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    d = out / "agent"
    d.mkdir(parents=True, exist_ok=True)
    agent.save(d / "agent.json")
    dump_json(d / "train_report.json", asdict(report))
    rows = [{"epoch": i + 1, "mean_reward": r, "entropy": e}
            for i, (r, e) in enumerate(zip(report.mean_reward_curve, report.entropy_curve))]
    write_csv(d / "training_curve.csv", ("epoch", "mean_reward", "entropy"), rows)
    log.info("trained %d epochs; final NDCG@%d %.4f", a.epochs, cfg.analysis.k, report.final_ndcg10)
    update_manifest(out, cfg, "train-agent",
                    [d / "agent.json", d / "train_report.json", d / "training_curve.csv"],
                    time.perf_counter() - start)


def _load_agent(out: Path, args) -> Agent:
    path = Path(args.agent) if args.agent else out / "agent" / "agent.json"
    if not path.exists():
        raise UsageError(f"agent checkpoint not found: {path} (run train-agent first or pass --agent)")
    return Agent.load(path)


def cmd_attack(cfg: ExperimentConfig, out: Path, args) -> None:
    start = time.perf_counter()
    if not cfg.attacks:
        raise ConfigError("the config's attack grid is empty")
    world = build_world(cfg)
    agent = _load_agent(out, args)
    if agent.config.n_items != world.n_items or agent.config.item_dim != world.table.dim:
        raise UsageError("agent checkpoint does not match the configured world")
    T = cfg.world.path_length
    users = range(world.n_users)
    d = out / "attack"
    d.mkdir(parents=True, exist_ok=True)
    artifacts = []

    benign, _ = craft_dataset(agent, world, AttackSpec("none"), users, cfg.seed, T)
    write_jsonl(d / "benign.jsonl", benign)
    artifacts.append(d / "benign.jsonl")
    datasets = []
    for spec in cfg.attacks:
        trajs, rep = craft_dataset(agent, world, spec, users, cfg.seed, T)
        write_jsonl(d / f"{spec.name}.jsonl", trajs)
        dump_json(d / f"{spec.name}.report.json", rep.as_dict())
        artifacts += [d / f"{spec.name}.jsonl", d / f"{spec.name}.report.json"]
        datasets.append((rep, trajs))
        log.info("%s: frequency %.3f", spec.name, rep.achieved_frequency)

    gamma = None if cfg.analysis.gamma == "median" else float(cfg.analysis.gamma)
    rows = compare(world.table.items, world.relevant, benign, datasets, cfg.analysis.reference, gamma,
                   cfg.analysis.k)
    write_csv(d / "comparison.csv", COMPARISON_COLUMNS, [r.as_dict() for r in rows])
    dump_json(d / "comparison.json", [r.as_dict() for r in rows])
    artifacts += [d / "comparison.csv", d / "comparison.json"]

    if args.sweep:
        names = cfg.sweep.attacks or [s.name for s in cfg.attacks if s.family != "none"]
        for kind in ("random", "timed"):
            sweep_rows = []
            for name in names:
                sweep_rows += frequency_sweep(agent, world, cfg.spec(name), kind, cfg.sweep.frequencies,
                                              cfg.seed, benign, users, cfg.analysis.k, T)
            write_csv(d / f"sweep_{kind}.csv", SWEEP_COLUMNS, sweep_rows)
            artifacts.append(d / f"sweep_{kind}.csv")
    update_manifest(out, cfg, "attack", artifacts, time.perf_counter() - start)


def _split_users(trajs, fraction: float) -> tuple[set, set]:
    users = sorted({t.user for t in trajs})
    n_train = int(round(fraction * len(users)))
    return set(users[:n_train]), set(users[n_train:])


def cmd_detect(cfg: ExperimentConfig, out: Path, args) -> None:
    start = time.perf_counter()
    world = build_world(cfg)
    dc = cfg.detector
    src = out / "attack"
    benign_path = Path(args.benign) if args.benign else src / "benign.jsonl"
    if args.adversarial is not None:
        adv_paths = [Path(p) for p in args.adversarial]
    else:
        names = dc.eval_attacks or [s.name for s in cfg.attacks if s.family != "none"]
        if dc.train_attack not in names and any(s.name == dc.train_attack for s in cfg.attacks):
            names = [dc.train_attack, *names]
        adv_paths = [src / f"{n}.jsonl" for n in names]
    if not adv_paths:
        raise UsageError("no adversarial trajectory files given")
    for p in [benign_path, *adv_paths]:
        if not p.exists():
            raise UsageError(f"trajectory file not found: {p}")
    train_path = next((p for p in adv_paths if p.stem == dc.train_attack), adv_paths[0])

    benign = read_jsonl(benign_path)
    train_users, test_users = _split_users(benign, dc.train_user_fraction)
    if not test_users:
        raise ConfigError("detector.train_user_fraction leaves no held-out users")
    adv = {p: read_jsonl(p) for p in adv_paths}

    def pick(trajs, keep):
        return [t for t in trajs if t.user in keep]

    train_set = samples_from_trajectories(world, pick(benign, train_users)) + \
        samples_from_trajectories(world, pick(adv[train_path], train_users))
    det_cfg = DetectorConfig(hidden=dc.hidden, dropout=dc.dropout, lr=dc.lr, weight_decay=dc.weight_decay,
                             epochs=dc.epochs, batch=dc.batch, split=dc.split, seed=cfg.seed,
                             gru_variant=dc.gru_variant, attn_context=dc.attn_context)
    det, val = train_detector(train_set, det_cfg)

    benign_test = samples_from_trajectories(world, pick(benign, test_users))
    rows = []
    for p in adv_paths:
        test = benign_test + samples_from_trajectories(world, pick(adv[p], test_users))
        r = evaluate_detector(det, test, dc.decision_threshold)
        rows.append({"dataset": cfg.dataset, "attack": p.stem, **{k: v for k, v in r.as_dict().items()
                                                                  if k in PRF_COLUMNS}})
        log.info("%s: P %.3f R %.3f F1 %.3f", p.stem, r.precision, r.recall, r.f1)

    d = out / "detect"
    d.mkdir(parents=True, exist_ok=True)
    det.save(d / "detector.json")
    write_csv(d / "prf.csv", PRF_COLUMNS, rows)
    dump_json(d / "detect_report.json", {
        "train_attack": train_path.stem, "train_users": len(train_users), "test_users": len(test_users),
        "validation": val.as_dict(), "rows": rows, "history": det.history})
    update_manifest(out, cfg, "detect", [d / "detector.json", d / "prf.csv", d / "detect_report.json"],
                    time.perf_counter() - start)


def cmd_report(cfg: ExperimentConfig | None, out: Path, args) -> None:
    if not out.is_dir():
        raise UsageError(f"output directory not found: {out}")
    mpath = out / "manifest.json"
    manifest = json.loads(mpath.read_text()) if mpath.exists() else None
    doc, charts = build_report(out, manifest)
    for name, svg in charts.items():
        (out / name).write_text(svg, newline="\n")
    dump_json(out / "report.json", doc)
    for w in doc["warnings"]:
        log.warning(w)


COMMANDS = {"train-agent": cmd_train_agent, "attack": cmd_attack, "detect": cmd_detect, "report": cmd_report}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advrec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "report", help="experiment JSON config")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
        if name in ("attack", "detect"):
            p.add_argument("--agent", help="agent checkpoint (default: <out>/agent/agent.json)")
        if name == "attack":
            p.add_argument("--sweep", action="store_true", help="also run the attack-frequency sweep")
        if name == "detect":
            p.add_argument("--benign", help="benign trajectories (default: <out>/attack/benign.jsonl)")
            p.add_argument("--adversarial", nargs="*", help="adversarial trajectory files")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config) if args.config else None
        if cfg is not None and args.seed is not None:
            cfg.seed = args.seed
        if args.out:
            out = Path(args.out)
        elif cfg is not None:
            out = Path(cfg.out)
        else:
            raise UsageError("report needs --out or --config")
        if args.command != "report":
            out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out, args)
    except (ConfigError, EmbeddingParseError, UsageError) as exc:
        print(f"advrec {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"advrec {args.command}: training diverged: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"advrec {args.command}: failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
