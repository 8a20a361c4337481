"""Run every game experiment under configs/ and print the aggregates.

Usage: python3 scripts/run_experiments.py [config-name ...]
Outputs land in each config's out_dir (relative to the current directory).
"""
import sys
from pathlib import Path

from grainoftruth.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
GAME_CONFIGS = ["pennies-fixed", "dogmatic", "thompson", "pd-grim"]


def run(name: str) -> int:
    path = CONFIGS / f"{name}.cfg"
    command = "experiment" if "seeds" in path.read_text() else "run-game"
    print(f"== {name} ({command})", flush=True)
    return main([command, "--config", str(path)])


if __name__ == "__main__":
    names = sys.argv[1:] or GAME_CONFIGS
    codes = [run(n) for n in names]
    sys.exit(max(codes))
