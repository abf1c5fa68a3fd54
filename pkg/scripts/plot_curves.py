#!/usr/bin/env python3
"""Plot evaluation curves from one or more metrics.jsonl files.

Needs the `plots` extra (matplotlib).  Each run becomes one line; the metric
defaults to greedy return but any numeric column works, e.g.
`--metric eval_breach_rate`.
"""

import argparse
import json
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load_rows(path: pathlib.Path) -> list[dict]:
    with path.open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("metrics", nargs="+", type=pathlib.Path,
                        help="metrics.jsonl files (or run dirs containing one)")
    parser.add_argument("--metric", default="eval_return_mean")
    parser.add_argument("--out", default="curves.png")
    args = parser.parse_args()

    fig, ax = plt.subplots(figsize=(7, 4))
    for path in args.metrics:
        if path.is_dir():
            path = path / "metrics.jsonl"
        rows = load_rows(path)
        xs = [row["env_steps"] for row in rows]
        ys = [row[args.metric] for row in rows]
        ax.plot(xs, ys, marker="o", markersize=3, label=path.parent.name)

    ax.set_xlabel("env steps")
    ax.set_ylabel(args.metric)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
