"""Both polynomial experiments in one go: coefficient pruning on the bell
curve and the divergence-vs-degree sweep. Thin wrapper over the CLI so the
output format matches `swast interplay` exactly."""

import argparse
import os
import sys

from swast.cli import cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/polynomial")
    args = ap.parse_args()

    for experiment in ("runge", "idd"):
        out = os.path.join(args.out, experiment)
        code = cli_main(["interplay", "--experiment", experiment,
                         "--seed", str(args.seed), "--out", out])
        if code != 0:
            sys.exit(code)


if __name__ == "__main__":
    main()
