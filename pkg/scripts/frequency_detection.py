"""Detector precision/recall/F1 on held-out users as the attack frequency shrinks."""

import argparse
import json
from dataclasses import replace
from pathlib import Path

from advrec.agent import Agent
from advrec.attacks import Scheduler, craft_dataset
from advrec.cli import build_world
from advrec.config import load_config
from advrec.detector import DetectorParams, evaluate_detector, samples_from_trajectories
from advrec.env import read_jsonl


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/example.json")
    ap.add_argument("--run", type=Path)
    ap.add_argument("--frequencies", type=float, nargs="+", default=[0.12, 0.32, 0.58, 1.0])
    args = ap.parse_args()
    cfg = load_config(args.config)
    run = args.run or Path(cfg.out)
    world = build_world(cfg)
    agent = Agent.load(run / "agent" / "agent.json")
    det = DetectorParams.load(run / "detect" / "detector.json")
    n_train = json.loads((run / "detect" / "detect_report.json").read_text())["train_users"]
    benign = read_jsonl(run / "attack" / "benign.jsonl")
    users = sorted({t.user for t in benign})[n_train:]
    held = set(users)
    benign_test = samples_from_trajectories(world, [t for t in benign if t.user in held])
    spec = cfg.spec(cfg.detector.train_attack)
    print("p_freq  achieved  precision  recall  f1")
    for p in args.frequencies:
        trajs, rep = craft_dataset(agent, world, replace(spec, scheduler=Scheduler("random", p_freq=p)), users,
                                   cfg.seed, cfg.world.path_length)
        r = evaluate_detector(det, benign_test + samples_from_trajectories(world, trajs, label=1),
                              cfg.detector.decision_threshold)
        print(f"{p:6.2f}  {rep.achieved_frequency:8.3f}  {r.precision:9.3f}  {r.recall:6.3f}  {r.f1:.3f}")


if __name__ == "__main__":
    main()
