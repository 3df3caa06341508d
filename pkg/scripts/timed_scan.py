"""Scan timed-attack thresholds on a trained run and write NDCG drop vs frequency.

Complements the quantile-based ``timed`` sweep of ``advrec attack --sweep``
with a dense grid near 1, where attacked rollouts concentrate their top-two gaps.
"""

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from advrec.agent import Agent
from advrec.analysis import trajectory_metrics
from advrec.attacks import Scheduler, craft_dataset
from advrec.cli import build_world
from advrec.config import load_config
from advrec.env import read_jsonl
from advrec.report import write_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default="configs/example.json")
    ap.add_argument("--run", type=Path, help="run directory (default: config out)")
    ap.add_argument("--attack", default="fgsm_l1")
    ap.add_argument("--points", type=int, default=60)
    args = ap.parse_args()
    cfg = load_config(args.config)
    run = args.run or Path(cfg.out)
    world = build_world(cfg)
    agent = Agent.load(run / "agent" / "agent.json")
    clean = trajectory_metrics(read_jsonl(run / "attack" / "benign.jsonl"), world.relevant, cfg.analysis.k).ndcg
    spec = cfg.spec(args.attack)
    rows = []
    for th in np.linspace(0.97, 0.999, args.points):
        sched = Scheduler("timed", threshold=float(th))
        trajs, rep = craft_dataset(agent, world, replace(spec, scheduler=sched), range(world.n_users), cfg.seed,
                                   cfg.world.path_length)
        ndcg = trajectory_metrics(trajs, world.relevant, cfg.analysis.k).ndcg
        rows.append({"threshold": float(th), "achieved_frequency": rep.achieved_frequency, "ndcg": ndcg,
                     "drop": (clean - ndcg) / clean})
        print(f"threshold {th:.4f}  frequency {rep.achieved_frequency:.3f}  drop {rows[-1]['drop']:.1%}")
    out = run / "attack" / f"timed_scan_{args.attack}.csv"
    write_csv(out, ("threshold", "achieved_frequency", "ndcg", "drop"), rows)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
