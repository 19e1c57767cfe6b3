"""Ablations on the synthetic cabinet family with oracle backends.

Sweeps task-chain strategy, annotation mode, view budget V and the coverage
knob over several generated scenes, printing one table per sweep and writing
JSON/CSV next to it.

    python3 scripts/ablation_grid.py --scenes 6 --out runs/ablation
"""

import argparse
import json
from pathlib import Path

from openground.bundle import SceneBundle, make_backends
from openground.evaluation import ablation_grid, batch_runner, csv_text, grid_json, grid_table, text_table
from openground.io import atomic_write_json, atomic_write_text
from openground.oracle import GroundTruth
from openground.pipeline import EngineConfig
from openground.synth import cabinet_family_spec, generate

SWEEPS = {
    "strategy": {"strategy": ["full", "relevant", "difficulty", "random", "jump"]},
    "annotation": {"annotation_mode": ["ours", "all_mentioned", "candidates_only"]},
    "views": {"max_views": [1, 2, 3, 4, 5]},
    "coverage": {"coverage": [True, False]},
    "initial_olt": {"initial_olt": [True, False]},
}


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenes", type=int, default=6)
    p.add_argument("--queries-per-scene", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sweep", action="append", choices=sorted(SWEEPS), help="default: all")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="runs/ablation")
    args = p.parse_args()

    bundles = []
    for k in range(args.scenes):
        s = args.seed + k
        syn = generate(cabinet_family_spec(s, max_queries=args.queries_per_scene), s)
        bundles.append(SceneBundle(Path("."), syn.scene, syn.table, GroundTruth.from_synthetic(syn), syn.query_records()))
    scenes = {b.scene_id: b.scene for b in bundles}
    tables = {b.scene_id: b.table for b in bundles}
    queries = [q for b in bundles for q in b.queries]
    built = {b.scene_id: make_backends("oracle", b) for b in bundles}
    base = EngineConfig(seed=args.seed, timing=False)
    runner = batch_runner(scenes, queries, base, lambda r: built[r["scene_id"]], tables=tables, jobs=args.jobs)

    out = Path(args.out)
    report = {}
    for name in args.sweep or list(SWEEPS):
        cells = ablation_grid(SWEEPS[name], runner)
        header, rows = grid_table(cells)
        print(f"\n== {name} ({len(queries)} queries over {len(bundles)} scenes)")
        print(text_table(header, rows))
        report[name] = grid_json(cells)
        atomic_write_text(out / f"{name}.csv", csv_text(header, rows))
    atomic_write_json(out / "ablation.json", report)
    print(f"\nwrote {out}/ablation.json")


if __name__ == "__main__":
    main()
