"""Print attack/comparison.csv from a run directory as a Markdown table."""

import argparse
from pathlib import Path

from advrec.report import read_csv


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("run", type=Path, help="run directory (the --out of the pipeline)")
    args = ap.parse_args()
    rows = read_csv(args.run / "attack" / "comparison.csv")
    clean = next((r["ndcg"] for r in rows if r["family"] == "none"), None)
    cols = ["name", "epsilon", "achieved_frequency", "ndcg", "recall", "hr", "precision", "mmd_org", "mmd_ref"]
    head = cols + (["ndcg_drop"] if clean else [])
    print("| " + " | ".join(head) + " |")
    print("|" + "---|" * len(head))
    for r in rows:
        cells = [r[c] if isinstance(r[c], str) else f"{r[c]:.4f}" for c in cols]
        if clean:
            cells.append(f"{(clean - r['ndcg']) / clean:.1%}")
        print("| " + " | ".join(cells) + " |")


if __name__ == "__main__":
    main()
