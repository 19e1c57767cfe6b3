"""Regenerate the bundled demo: scene, fixtures, expected outputs.

    python3 scripts/make_demo.py [--out demo]
"""

import argparse
import json
from pathlib import Path

from openground.cli import main
from openground.io import atomic_write_json


def human_chains(queries):
    """Toy human-ordering data: most respondents follow the containment order."""
    tasks, preds = [], {"full": {}, "jump": {}, "reversed": {}}
    for q in queries:
        chain = q["chain"]
        tasks.append({
            "task_id": q["query_id"],
            "chains": [
                {"sequence": chain, "weight": 3},
                {"sequence": chain[:1] + chain[-1:], "weight": 1},
            ],
        })
        preds["full"][q["query_id"]] = chain
        preds["jump"][q["query_id"]] = chain[:1] + chain[-1:]
        preds["reversed"][q["query_id"]] = chain[::-1]
    return {"tasks": tasks}, preds


def run(out: Path):
    scene = out / "scene"
    args = ["synth", "--family", "cabinets", "--seed", "0", "--max-queries", "6", "--out", str(scene)]
    assert main(args) == 0
    assert main(["replay", "--scene", str(scene), "--no-timing", "--out", str(out / "expected_results.jsonl"),
                 "--trace-dir", str(out / "expected_traces")]) == 0
    queries = [json.loads(x) for x in (scene / "queries.jsonl").read_text().splitlines()]
    gt = json.loads((scene / "gt.json").read_text())
    humans, preds = human_chains(gt["queries"])
    atomic_write_json(out / "human_chains.json", humans)
    atomic_write_json(out / "chain_predictions.json", preds)
    (out / "config.toml").write_text(
        '# engine knobs; explicit CLI flags override these\n'
        'strategy = "full"\nV = 3\nalpha = 0.9\ntau_cand = 0.9\ntau_iou = 0.5\n'
        'annotation_mode = "ours"\nvisibility = "occlusion"\nseed = 0\n\n'
        '[backend]\nkind = "oracle"\nembedder = "exact"\n'
    )
    print(f"demo written to {out} ({len(queries)} queries)")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "demo"))
    run(Path(p.parse_args().out))
