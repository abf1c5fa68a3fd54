#!/usr/bin/env python3
"""Print a one-line-per-run table from every summary.json under a directory."""

import argparse
import json
import pathlib


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("root", nargs="?", default="runs", help="directory to scan")
    args = parser.parse_args()

    paths = sorted(pathlib.Path(args.root).rglob("summary.json"))
    if not paths:
        print(f"no summary.json under {args.root}")
        return

    header = f"{'run':<44} {'steps':>8} {'return':>8} {'breach':>7} {'clear':>6}"
    print(header)
    print("-" * len(header))
    for path in paths:
        summary = json.loads(path.read_text(encoding="utf-8"))
        final = summary["final_eval"]
        name = str(path.parent.relative_to(args.root))
        print(
            f"{name:<44} {summary['env_steps']:>8} "
            f"{final['eval_return_mean']:>8.2f} "
            f"{final['eval_breach_rate']:>7.2f} "
            f"{final['eval_clear_rate']:>6.2f}"
        )


if __name__ == "__main__":
    main()
