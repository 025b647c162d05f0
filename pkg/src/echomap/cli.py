"""Command-line interface: echomap <subcommand>.

Subcommands mirror the pipeline stages (synth, analyze, map, cluster,
overlay, train, predict, report) plus the two orchestrations (run-lab,
run-field). Failures exit nonzero with a stage-tagged message on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import clustering, evalreport, mapping, neural, pipeline, seqdata, spectral, synthlab
from .pipeline import PipelineConfig, StageError


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_json(args.config) if args.config else pipeline.default_lab_config()
    if getattr(args, "preset", None) == "stress":
        cfg = pipeline.stress_lab_config(cfg.seed)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    cfg.n_slabs = args.slabs
    out = Path(args.out)
    slab_ids = pipeline.stage_synth(cfg, out)
    print(f"wrote {len(slab_ids)} slab(s) under {out / 'slabs'}")
    return 0


def cmd_analyze(args) -> int:
    waves = synthlab.read_waveforms_csv(args.waveforms)
    readings = [spectral.analyze_waveform(w, min_khz=args.min_khz, window=args.window) for w in waves]
    if args.qa_radius_in > 0:
        readings = spectral.qa_consistency(readings, radius_in=args.qa_radius_in)
    spectral.write_readings_csv(readings, args.out)
    flagged = sum(1 for r in readings if not r.is_ok)
    print(f"analyzed {len(readings)} waveforms ({flagged} flagged) -> {args.out}")
    return 0


def cmd_map(args) -> int:
    readings = spectral.read_readings_csv(args.readings)
    grid = mapping.infer_grid(readings, width_in=args.width_in, height_in=args.height_in)
    fld = mapping.interpolate(grid, resolution_in=args.resolution_in, method=args.method)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mapping.write_field_json(fld, out / "field.json")
    mapping.render_heatmap(fld, out / f"heatmap.{args.format}", palette=args.palette)
    print(f"interpolated {grid.rows}x{grid.cols} grid -> {out}")
    return 0


def cmd_cluster(args) -> int:
    readings = spectral.read_readings_csv(args.readings)
    seed = args.seed if args.seed is not None else 0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, centroids = [], {}
    if args.scope == "zone":
        grid = mapping.infer_grid(readings, width_in=args.width_in, height_in=args.height_in)
        results = [(z.cls, clustering.cluster_zone(z, seed=seed + i))
                   for i, z in enumerate(mapping.split_zones(grid))]
    else:
        results = [("global", clustering.cluster_global(readings, seed=seed))]
    for name, zc in results:
        for p in zc.defective:
            rows.append((p.point_id, p.x_in, p.y_in, p.f_peak_khz, name))
        centroids[name] = {"centroids_khz": [float(c) for c in zc.result.centroids],
                           "cost_khz2": zc.result.cost, "n_points": zc.n_points,
                           "n_excluded": zc.n_excluded, "degenerate": zc.result.degenerate}
    pipeline._write_points_csv(rows, out / "defective.csv")
    pipeline._dump_json(centroids, out / "centroids.json")
    print(f"clustered {len(readings)} readings -> {len(rows)} defective points")
    return 0


def cmd_overlay(args) -> int:
    from .defects import DefectRect
    from . import groundtruth

    rects = [DefectRect.from_dict(r) for r in json.loads(Path(args.rects).read_text())]
    defective = [p for p, _ in pipeline._read_points_csv(Path(args.defective))]
    mask = groundtruth.build_mask(rects, args.width_in, args.height_in)
    grid_points = spectral.read_readings_csv(args.readings) if args.readings else None
    valid, metrics = groundtruth.overlay(defective, mask, grid_points=grid_points)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from dataclasses import asdict
    pipeline._dump_json(asdict(metrics), out / "metrics.json")
    groundtruth.render_overlay_svg(mask, defective, valid, out / "overlay.svg")
    print(f"validated {metrics.valid_points}/{len(defective)} points "
          f"(overlap {100 * metrics.overlap_pct:.1f}%, IoU {metrics.iou:.3f})")
    return 0


def cmd_train(args) -> int:
    ds = seqdata.read_jsonl(args.dataset)
    seed = args.seed if args.seed is not None else 0
    if ds.split is None:
        ds = seqdata.train_test_split(ds, ratio=args.ratio, seed=seed)
    ds = seqdata.normalize(ds)
    model_cfg = neural.ModelConfig(seed=seed, epochs=args.epochs, batch_size=args.batch_size,
                                   seq_len=len(ds.sequences[0].values))
    model = neural.new_model(model_cfg)
    model, history = neural.train(model, ds, model_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    neural.save_model(model, out / "model.json")
    pipeline._dump_json(neural.history_to_json(history), out / "history.json")
    final = history.entries[-1]
    print(f"trained {model_cfg.epochs} epochs; final train acc {final['train_acc']:.3f}, "
          f"test acc {final.get('test_acc', float('nan')):.3f} -> {out / 'model.json'}")
    return 0


def cmd_predict(args) -> int:
    model = neural.load_model(args.model)
    ds = seqdata.read_jsonl(args.dataset)
    if model.norm is None:
        raise ValueError("model has no stored normalization parameters")
    import numpy as np

    raw = np.array([s.values for s in ds.sequences])
    labels, conf = neural.predict_raw_values(model, raw)
    with open(args.out, "w") as fh:
        fh.write("index,label,predicted_class,confidence\n")
        from .defects import CLASS_NAMES
        for i, (lab, cf) in enumerate(zip(labels, conf)):
            fh.write(f"{i},{int(lab)},{CLASS_NAMES[int(lab)]},{cf:.6f}\n")
    print(f"predicted {len(labels)} sequences -> {args.out}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    data = json.loads((run_dir / "report_data.json").read_text())
    out = Path(args.out) if args.out else run_dir
    path = evalreport.emit_report(data, out)
    print(f"report -> {path}")
    return 0


def cmd_run_lab(args) -> int:
    cfg = _load_config(args)
    summary = pipeline.run_lab(cfg, args.out)
    acc = summary["test_accuracy"]
    print(f"lab run complete -> {summary['out_dir']}")
    print(f"  sequences: {summary['n_sequences']}, mean IoU {summary['mean_iou']:.3f}, "
          f"mean precision {summary['mean_precision']:.3f}, "
          f"test accuracy {'n/a' if acc is None else f'{acc:.3f}'}")
    return 0


def cmd_run_field(args) -> int:
    cfg = _load_config(args)
    summary = pipeline.run_field(cfg, args.waveforms, args.model, args.out)
    print(f"field run complete -> {summary['out_dir']}")
    if summary["modal_class"]:
        pct = summary["percentages"][summary["modal_class"]]
        print(f"  {summary['n_predictions']} predictions; modal class "
              f"{summary['modal_class']} ({pct:.1f}%)")
    else:
        print("  no defective cluster points; prediction section empty")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="echomap",
                                     description="Impact-echo defect assessment pipeline")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed override")
    common.add_argument("--config", default=None, help="pipeline config JSON")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic slab corpora")
    p.add_argument("--out", required=True)
    p.add_argument("--slabs", type=int, default=1)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("analyze", parents=[common], help="waveform CSV -> peak-reading CSV")
    p.add_argument("--waveforms", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-khz", type=float, default=spectral.DEFAULT_MIN_KHZ)
    p.add_argument("--qa-radius-in", type=float, default=9.5)
    p.add_argument("--window", choices=["hann"], default=None)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("map", parents=[common], help="readings CSV -> field JSON + heatmap")
    p.add_argument("--readings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["bilinear", "bicubic"], default="bilinear")
    p.add_argument("--resolution-in", type=float, default=1.0)
    p.add_argument("--palette", choices=sorted(mapping.PALETTES), default="spectral")
    p.add_argument("--format", choices=["svg", "ppm"], default="svg")
    p.add_argument("--width-in", type=float, default=None)
    p.add_argument("--height-in", type=float, default=None)
    p.set_defaults(fn=cmd_map)

    p = sub.add_parser("cluster", parents=[common], help="readings CSV -> defective points")
    p.add_argument("--readings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scope", choices=["zone", "global"], default="zone")
    p.add_argument("--width-in", type=float, default=None)
    p.add_argument("--height-in", type=float, default=None)
    p.set_defaults(fn=cmd_cluster)

    p = sub.add_parser("overlay", parents=[common], help="defective points + rects -> validation metrics")
    p.add_argument("--defective", required=True)
    p.add_argument("--rects", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--readings", default=None, help="full reading CSV (recall denominator)")
    p.add_argument("--width-in", type=float, default=120.0)
    p.add_argument("--height-in", type=float, default=40.0)
    p.set_defaults(fn=cmd_overlay)

    p = sub.add_parser("train", parents=[common], help="sequence JSONL -> trained model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--ratio", type=float, default=0.8)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="model + sequence JSONL -> predictions CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("report", parents=[common], help="re-emit report from a run directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("run-lab", parents=[common], help="full lab pipeline")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=["default", "stress"], default="default")
    p.set_defaults(fn=cmd_run_lab)

    p = sub.add_parser("run-field", parents=[common], help="field deck pipeline")
    p.add_argument("--waveforms", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_run_field)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        print(f"error: [stage:{args.command}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
