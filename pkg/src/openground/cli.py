"""Command-line entry point: ``openground <command> ...``.

Failures print one JSON object ``{"error": {"category", "message"}}`` on
stderr and exit with a category code (I/O 3, validation 4, backend 5,
grounding 6; usage errors exit 2 via argparse).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .errors import BackendError, GroundingError, OpenGroundError

EXIT_IO, EXIT_VALIDATION, EXIT_BACKEND, EXIT_GROUNDING = 3, 4, 5, 6
log = logging.getLogger("openground")


def _exit_code(exc: BaseException) -> tuple[int, str]:
    if isinstance(exc, (FileNotFoundError, IsADirectoryError, PermissionError)):
        return EXIT_IO, "io"
    if isinstance(exc, GroundingError):
        return EXIT_GROUNDING, exc.category
    if isinstance(exc, BackendError):
        return EXIT_BACKEND, exc.category
    if isinstance(exc, OpenGroundError):
        return EXIT_VALIDATION, exc.category
    if isinstance(exc, OSError):
        return EXIT_IO, "io"
    return EXIT_VALIDATION, "validation"


# --- argument plumbing -----------------------------------------------------------


def _engine_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("engine")
    g.add_argument("--config", help="TOML config; explicit flags override it")
    g.add_argument("--strategy", choices=("full", "relevant", "difficulty", "random", "jump"))
    g.add_argument("--max-views", type=int, help="view budget V for enhancement and per-candidate selection")
    g.add_argument("--alpha", type=float, help="soft-margin factor for view selection")
    g.add_argument("--tau-cand", type=float, help="label similarity threshold for candidates")
    g.add_argument("--tau-iou", type=float, help="IoU threshold for merging lifted masks")
    g.add_argument("--annotation-mode", choices=("ours", "all_mentioned", "candidates_only"))
    g.add_argument("--visibility", choices=("occlusion", "frustum"), help="visibility model")
    g.add_argument("--no-initial-olt", action="store_true", help="start every query from an empty table")
    g.add_argument("--seed", type=int, help="seed for strategies that shuffle")
    g.add_argument("--no-timing", action="store_true", help="omit wall-clock fields (byte-stable outputs)")


def _backend_flags(p: argparse.ArgumentParser, default: str = "oracle") -> None:
    g = p.add_argument_group("backends")
    g.add_argument("--backend", choices=("wire", "mock", "oracle"), default=None, help=f"default {default}")
    g.add_argument("--fixtures", help="scripted VLM fixture file (mock backend)")
    g.add_argument("--seg-fixtures", help="scripted segmentation fixtures (mock backend; default oracle masks)")
    g.add_argument("--embedder", choices=("exact", "hash", "wire"), default=None, help="label embedder (default exact)")
    p.set_defaults(_backend_default=default)


def _scene_flags(p: argparse.ArgumentParser, single: bool = False) -> None:
    p.add_argument("--scene", action="append", required=True, help="scene directory (repeatable)" if not single else "scene directory")
    p.add_argument("--olt", help="initial OLT file (default <scene>/olt.json; single scene only)")


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--jobs", type=int, default=1, help="concurrent queries (default 1)")
    p.add_argument("--trace-dir", help="write one trace JSON per query here")
    p.add_argument("--out", help="output file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="openground", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log per-step events to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ground", help="ground one query or a query file", allow_abbrev=False)
    _scene_flags(p)
    q = p.add_mutually_exclusive_group(required=True)
    q.add_argument("--query", help="a single referring query")
    q.add_argument("--queries", help="JSONL query file")
    p.add_argument("--json", action="store_true", help="print the single-query result as JSON")
    _run_flags(p)
    _engine_flags(p)
    _backend_flags(p)

    p = sub.add_parser("eval", help="score results, or run and score a batch / ablation grid", allow_abbrev=False)
    p.add_argument("--scene", action="append", help="scene directory (repeatable; run mode)")
    p.add_argument("--olt", help=argparse.SUPPRESS)
    p.add_argument("--queries", help="JSONL queries with gt_box (default: each scene's queries.jsonl)")
    p.add_argument("--results", help="score an existing results file instead of running")
    p.add_argument("--grid", help="JSON or TOML mapping knob -> list of values")
    p.add_argument("--by", action="append", default=[], help="tag key to break down by (repeatable)")
    p.add_argument("--csv", help="write the grid or breakdown table as CSV")
    _run_flags(p)
    _engine_flags(p)
    _backend_flags(p)

    p = sub.add_parser("waed", help="alignment of predicted chains with human chains", allow_abbrev=False)
    p.add_argument("--predictions", required=True, help="JSON: {strategy: {task_id: [labels]}} or {task_id: [labels]}")
    p.add_argument("--humans", required=True, help="JSON: {tasks: [{task_id, chains: [{sequence, weight}]}]}")
    p.add_argument("--out", help="write the report JSON here")

    p = sub.add_parser("synth", help="generate a synthetic scene with ground truth and fixtures", allow_abbrev=False)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--spec", help="scene spec JSON")
    src.add_argument("--family", choices=("cabinets",), help="built-in scene family")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-queries", type=int, help="cap on generated queries (family mode)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-fixtures", action="store_true", help="skip recording oracle fixtures")

    p = sub.add_parser("render", help="draw OLT entries onto a view", allow_abbrev=False)
    _scene_flags(p, single=True)
    p.add_argument("--view", type=int, required=True)
    p.add_argument("--ids", help="comma-separated entry ids (default: all)")
    p.add_argument("--out", required=True, help="PNG path")

    p = sub.add_parser("record", help="run a batch and capture backend traffic as fixtures", allow_abbrev=False)
    _scene_flags(p)
    p.add_argument("--queries", help="JSONL query file (default: each scene's queries.jsonl)")
    p.add_argument("--fixtures-out", required=True, help="where to write VLM fixtures")
    p.add_argument("--seg-fixtures-out", help="where to write segmentation fixtures")
    _run_flags(p)
    _engine_flags(p)
    _backend_flags(p)

    p = sub.add_parser("replay", help="run a batch against scripted fixtures", allow_abbrev=False)
    _scene_flags(p)
    p.add_argument("--queries", help="JSONL query file (default: each scene's queries.jsonl)")
    _run_flags(p)
    _engine_flags(p)
    _backend_flags(p, default="mock")
    return parser


def _config(args) -> tuple:
    from .config import load_config
    from .pipeline import EngineConfig, with_knobs

    knobs, backend = load_config(args.config) if getattr(args, "config", None) else ({}, {})
    explicit = {
        "strategy": args.strategy,
        "max_views": args.max_views,
        "alpha": args.alpha,
        "tau_cand": args.tau_cand,
        "tau_iou": args.tau_iou,
        "annotation_mode": args.annotation_mode,
        "visibility_mode": args.visibility,
        "seed": args.seed,
    }
    if args.no_initial_olt:
        explicit["initial_olt"] = False
    if args.no_timing:
        explicit["timing"] = False
    knobs.update({k: v for k, v in explicit.items() if v is not None})
    return with_knobs(EngineConfig(), **knobs), backend


def _settings(backend_cfg: dict):
    from .clients.wire import WireSettings

    keys = ("endpoint", "model", "seg_endpoint", "embed_endpoint", "temperature", "max_retries", "max_in_flight")
    return WireSettings.from_env(**{k: backend_cfg[k] for k in keys if k in backend_cfg})


def _bundles(args):
    from .bundle import load_bundle

    scenes = args.scene or []
    if args.olt and len(scenes) != 1:
        raise ValueError("--olt needs exactly one --scene")
    bundles = [load_bundle(s, args.olt) for s in scenes]
    ids = [b.scene_id for b in bundles]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate scene ids: {ids}")
    return bundles


def _queries(args, bundles) -> list[dict]:
    from .io import read_jsonl

    if getattr(args, "queries", None):
        if not Path(args.queries).is_file():
            raise FileNotFoundError(f"query file not found: {args.queries}")
        return read_jsonl(args.queries)
    return [q for b in bundles for q in b.queries]


def _backend_factory(args, bundles, config, backend_cfg):
    from .bundle import make_backends, read_fixtures

    kind = args.backend or backend_cfg.get("kind") or args._backend_default
    embedder = args.embedder or backend_cfg.get("embedder", "exact")
    fixtures_path = args.fixtures or backend_cfg.get("fixtures")
    seg_path = args.seg_fixtures or backend_cfg.get("seg_fixtures")
    fixtures = read_fixtures(fixtures_path) if fixtures_path else None
    seg = None
    if seg_path:
        if not Path(seg_path).is_file():
            raise FileNotFoundError(f"segmentation fixture file not found: {seg_path}")
        seg = json.loads(Path(seg_path).read_text())
    if kind == "mock" and fixtures is None:
        for b in bundles:
            if (b.path / "fixtures.json").is_file():
                fixtures = (fixtures or []) + read_fixtures(b.path / "fixtures.json")
        if fixtures is None:
            raise FileNotFoundError("mock backend needs --fixtures (or <scene>/fixtures.json)")
    settings = _settings(backend_cfg) if kind == "wire" or embedder == "wire" else None
    built = {
        b.scene_id: make_backends(kind, b, config=config, fixtures=fixtures, seg_fixtures=seg, embedder=embedder, settings=settings)
        for b in bundles
    }
    return lambda record: built[record["scene_id"]]


def _run_batch(args, bundles, queries, config, backend_cfg, out=None):
    from .pipeline import ground_batch

    factory = _backend_factory(args, bundles, config, backend_cfg)
    if args.trace_dir:
        Path(args.trace_dir).mkdir(parents=True, exist_ok=True)
    return ground_batch(
        {b.scene_id: b.scene for b in bundles},
        queries,
        config,
        factory,
        tables={b.scene_id: b.table for b in bundles},
        trace_dir=args.trace_dir,
        out_path=out,
        jobs=args.jobs,
    )


def _print_summary(results: Sequence[dict]) -> None:
    counts = {}
    for r in results:
        counts[r["status"]] = counts.get(r["status"], 0) + 1
    print(f"{len(results)} queries: " + ", ".join(f"{k} {v}" for k, v in sorted(counts.items())))


# --- commands --------------------------------------------------------------------


def cmd_ground(args) -> int:
    from .io import atomic_write_json
    from .pipeline import QueryFailed, ground

    config, backend_cfg = _config(args)
    bundles = _bundles(args)
    if args.queries:
        results = _run_batch(args, bundles, _queries(args, bundles), config, backend_cfg, args.out)
        _print_summary(results)
        if args.out:
            print(f"results: {args.out}")
        return 0
    if len(bundles) != 1:
        raise ValueError("a single --query needs exactly one --scene")
    b = bundles[0]
    backends = _backend_factory(args, bundles, config, backend_cfg)({"scene_id": b.scene_id})
    trace_path = Path(args.trace_dir) / "trace.json" if args.trace_dir else None
    try:
        box, trace = ground(b.scene, b.table, args.query, config, backends)
    except QueryFailed as exc:
        if trace_path is not None:
            atomic_write_json(trace_path, exc.trace.to_json())
        raise
    result = {"box": box.to_json(), "target_id": trace.target_id, "chain": trace.chain, "degraded": trace.degraded}
    if trace_path is not None:
        atomic_write_json(trace_path, trace.to_json())
        result["trace"] = str(trace_path)
    if args.out:
        atomic_write_json(args.out, result)
    if args.json:
        print(json.dumps(result, sort_keys=True))
        return 0
    for s in trace.steps:
        ace = f" ace views={s.ace_views} new={s.new_olt_ids}" if s.ace_invoked else ""
        print(f"step {s.index} {s.label!r}: {s.status} candidates={s.candidates} chosen={s.chosen_id}{ace}")
    print("box min=" + json.dumps(list(box.min_corner)) + " max=" + json.dumps(list(box.max_corner)))
    if trace_path is not None:
        print(f"trace: {trace_path}")
    return 0


def _load_grid(path: str) -> dict:
    text = Path(path).read_text()
    if path.endswith(".toml"):
        from .config import tomllib

        return tomllib.loads(text)
    return json.loads(text)


def cmd_eval(args) -> int:
    from . import evaluation as ev
    from .io import atomic_write_json, atomic_write_text, read_jsonl

    report: dict = {}
    if args.results:
        if not Path(args.results).is_file():
            raise FileNotFoundError(f"results file not found: {args.results}")
        if not args.queries:
            raise ValueError("--results needs --queries for ground-truth boxes")
        results, queries = read_jsonl(args.results), _queries(args, [])
        cells = [ev.GridCell({}, {}, ev.records_from_results(results, queries))]
        cells[0].metrics = ev.metrics(cells[0].records)
    else:
        if not args.scene:
            raise ValueError("eval needs --results or at least one --scene")
        config, backend_cfg = _config(args)
        bundles = _bundles(args)
        queries = _queries(args, bundles)
        space = _load_grid(args.grid) if args.grid else [{}]

        def runner(knobs):
            from .pipeline import with_knobs

            cell_config = with_knobs(config, **knobs)
            results = _run_batch(args, bundles, queries, cell_config, backend_cfg)
            return ev.records_from_results(results, queries)

        cells = ev.ablation_grid(space, runner)
    header, rows = ev.grid_table(cells)
    print(ev.text_table(header, rows))
    report["grid"] = ev.grid_json(cells)
    csv_rows = (header, rows)
    if args.by:
        report["breakdowns"] = {}
        for key in args.by:
            for cell in cells:
                br = ev.breakdown(cell.records, key)
                h, r = ev.breakdown_table(key, br)
                print()
                if cell.knobs:
                    print(json.dumps(cell.knobs, sort_keys=True))
                print(ev.text_table(h, r))
                report["breakdowns"].setdefault(key, []).append({"knobs": cell.knobs, "rows": ev.breakdown_json(br)})
                if len(cells) == 1:
                    csv_rows = (h, r)
    if args.csv:
        atomic_write_text(args.csv, ev.csv_text(*csv_rows))
    if args.out:
        atomic_write_json(args.out, report)
    return 0


def cmd_waed(args) -> int:
    from .io import atomic_write_json
    from .task_chain import load_human_chains, waed_human, waed_model

    for path in (args.predictions, args.humans):
        if not Path(path).is_file():
            raise FileNotFoundError(f"file not found: {path}")
    preds = json.loads(Path(args.predictions).read_text())
    humans = load_human_chains(args.humans)
    if preds and all(isinstance(v, list) for v in preds.values()):
        preds = {"model": preds}
    report = {"human": waed_human(humans), "strategies": {}}
    for name in sorted(preds):
        report["strategies"][name] = waed_model(preds[name], humans)
    for name, value in report["strategies"].items():
        print(f"{name}: {value:.4f}")
    print(f"human baseline: {report['human']:.4f}")
    if args.out:
        atomic_write_json(args.out, report)
    return 0


def cmd_synth(args) -> int:
    from .bundle import load_bundle, record_run
    from .io import atomic_write_json
    from .pipeline import EngineConfig
    from .synth import cabinet_family_spec, generate, load_spec

    if args.spec:
        if not Path(args.spec).is_file():
            raise FileNotFoundError(f"spec file not found: {args.spec}")
        spec = load_spec(args.spec)
    else:
        spec = cabinet_family_spec(args.seed, max_queries=args.max_queries)
    synth = generate(spec, args.seed)
    out = Path(args.out)
    synth.write(out)
    print(f"scene {spec.scene_id}: {len(synth.scene.cloud)} points, {len(synth.scene.views)} views, "
          f"{len(synth.instances)} instances, {len(synth.table)} OLT entries, {len(synth.queries)} queries")
    if not args.no_fixtures and synth.queries:
        bundle = load_bundle(out)
        rec = record_run([bundle], bundle.queries, EngineConfig(timing=False))
        atomic_write_json(out / "fixtures.json", rec.vlm_fixtures)
        atomic_write_json(out / "seg_fixtures.json", rec.seg_fixtures)
        print(f"fixtures: {len(rec.vlm_fixtures)} VLM replies, {len(rec.seg_fixtures['responses'])} mask sets")
    return 0


def cmd_render(args) -> int:
    from PIL import Image

    from .grounding import render_annotations
    from .io import atomic_write_bytes
    from .clients.vlm import png_bytes

    (b,) = _bundles(args)
    ids = [int(x) for x in args.ids.split(",")] if args.ids else b.table.ids
    items = [(i, b.table[i].label, "candidate", b.table[i].box, b.table.points_of(i, b.scene)) for i in ids]
    img = render_annotations(b.scene, args.view, items)
    atomic_write_bytes(args.out, png_bytes(img.pixels))
    print(f"{args.out}: {len(img.annotations)} of {len(ids)} entries visible in view {args.view}")
    return 0


def cmd_record(args) -> int:
    from .bundle import record_run
    from .io import atomic_write_json

    config, backend_cfg = _config(args)
    bundles = _bundles(args)
    queries = _queries(args, bundles)
    inner = args.backend or backend_cfg.get("kind") or "oracle"
    if inner == "mock":
        raise ValueError("record wraps a live or oracle backend, not mock")
    if args.trace_dir:
        Path(args.trace_dir).mkdir(parents=True, exist_ok=True)
    settings = _settings(backend_cfg) if inner == "wire" else None
    rec = record_run(
        bundles, queries, config, inner,
        embedder=args.embedder or backend_cfg.get("embedder", "exact"),
        settings=settings, trace_dir=args.trace_dir, out_path=args.out,
    )
    atomic_write_json(args.fixtures_out, rec.vlm_fixtures)
    if args.seg_fixtures_out:
        atomic_write_json(args.seg_fixtures_out, rec.seg_fixtures)
    _print_summary(rec.results)
    print(f"fixtures: {len(rec.vlm_fixtures)} VLM replies -> {args.fixtures_out}")
    return 0


def cmd_replay(args) -> int:
    config, backend_cfg = _config(args)
    bundles = _bundles(args)
    results = _run_batch(args, bundles, _queries(args, bundles), config, backend_cfg, args.out)
    _print_summary(results)
    return 0


COMMANDS = {
    "ground": cmd_ground,
    "eval": cmd_eval,
    "waed": cmd_waed,
    "synth": cmd_synth,
    "render": cmd_render,
    "record": cmd_record,
    "replay": cmd_replay,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except (OpenGroundError, OSError, ValueError, KeyError) as exc:
        code, category = _exit_code(exc)
        message = str(exc) if not isinstance(exc, KeyError) or isinstance(exc, OpenGroundError) else f"missing key {exc}"
        print(json.dumps({"error": {"category": category, "message": message}}), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
