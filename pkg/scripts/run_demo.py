"""Ground every demo query with oracle backends and score against ground truth.

    python3 scripts/run_demo.py [--demo demo] [--strategy full]
"""

import argparse
import tempfile
from pathlib import Path

from openground.cli import main

p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
p.add_argument("--demo", default=str(Path(__file__).resolve().parents[1] / "demo"))
p.add_argument("--strategy", default="full")
p.add_argument("--backend", default="oracle", choices=("oracle", "mock", "wire"))
args = p.parse_args()

scene = str(Path(args.demo) / "scene")
with tempfile.TemporaryDirectory() as tmp:
    results = str(Path(tmp) / "results.jsonl")
    main(["ground", "--scene", scene, "--queries", str(Path(scene) / "queries.jsonl"), "--backend", args.backend,
          "--strategy", args.strategy, "--out", results, "--trace-dir", str(Path(tmp) / "traces")])
    main(["eval", "--results", results, "--queries", str(Path(scene) / "queries.jsonl"), "--by", "chain_length"])
