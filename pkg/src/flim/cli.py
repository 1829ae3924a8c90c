"""Command-line interface.

Subcommands: gen, inspect, run, sweep, lines, dynamic, bench. A JSON config
file (--config) can supply any long flag (dashes as underscores); flags given
on the command line win over the config file.
"""

from __future__ import annotations

import argparse
import json
import sys

from .crossbar import CrossbarConfig, capacity_report
from .dataio import read_idx, read_model
from .engine import ModelGraph
from .faultgen import (
    gen_line_fault_mask,
    read_fault_file,
    write_fault_file,
)
from .harness import (
    ExperimentConfig,
    baseline_row,
    benchmark,
    build_masks,
    load_environment,
    run_dynamic_sweep,
    run_line_fault_sweep,
    run_sweep,
    single_run,
)


def _int_list(text: str) -> list[int]:
    return [int(t) for t in str(text).split(",") if t != ""]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in str(text).split(",") if t != ""]


def _add_crossbar_flags(p):
    p.add_argument("--gate-rows", type=int, default=None, help="logical gate rows (default 40)")
    p.add_argument("--gate-cols", type=int, default=None, help="logical gate columns (default 10)")
    p.add_argument("--xbars", type=int, default=None, help="crossbars per layer (default 1)")


def _add_data_flags(p):
    p.add_argument("--model", default=None, help="model container path")
    p.add_argument("--data-images", default=None, help="IDX image file")
    p.add_argument("--data-labels", default=None, help="IDX label file")
    p.add_argument("--subset", type=int, default=None, help="image count (0 = all, default 1000)")


def _add_target_flags(p):
    p.add_argument("--layer", action="append", default=None, help="target layer (repeatable)")
    p.add_argument("--combined", action="store_true", default=None, help="target every injectable layer")


def _add_sweep_flags(p):
    p.add_argument("--reps", type=int, default=None, help="repetitions per sweep value (default 100)")
    p.add_argument("--seed", type=int, default=None, help="base seed (default 0)")
    p.add_argument("--p-one", type=float, default=None, help="P(stuck value = +1); default 1.0, all gates stuck at +1")
    p.add_argument("--mode", choices=("exact", "fast", "featuremap"), default=None)
    p.add_argument("--out", default=None, help="results CSV path")
    p.add_argument("--jobs", type=int, default=None, help="parallel worker processes (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate fault masks into a fault-vector file")
    p.add_argument("--config", default=None)
    _add_crossbar_flags(p)
    p.add_argument("--layer", action="append", default=None, required=False)
    p.add_argument("--type", dest="fault_type", choices=("bitflip", "stuckat", "dynamic", "lines"), default=None)
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--period", type=int, default=None)
    p.add_argument("--p-one", type=float, default=None)
    p.add_argument("--rows", default=None, help="faulty row indices, comma separated (lines)")
    p.add_argument("--cols", default=None, help="faulty column indices, comma separated (lines)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, required=False)

    p = sub.add_parser("inspect", help="dump a fault-vector file or model manifest")
    p.add_argument("--config", default=None)
    p.add_argument("--faults", default=None, help="fault-vector file to inspect")
    p.add_argument("--model", default=None, help="model container to inspect")
    _add_crossbar_flags(p)

    p = sub.add_parser("run", help="single inference pass, optionally with a fault file")
    p.add_argument("--config", default=None)
    _add_data_flags(p)
    p.add_argument("--faults", default=None, help="fault-vector file")
    p.add_argument("--mode", choices=("exact", "fast", "featuremap"), default=None)

    p = sub.add_parser("sweep", help="injection-rate sweep (bitflip or stuckat)")
    p.add_argument("--config", default=None)
    _add_data_flags(p)
    _add_crossbar_flags(p)
    _add_target_flags(p)
    p.add_argument("--type", dest="fault_type", choices=("bitflip", "stuckat"), default=None)
    p.add_argument("--rates", default=None, help="comma-separated injection rates")
    _add_sweep_flags(p)

    p = sub.add_parser("lines", help="faulty row/column count sweep")
    p.add_argument("--config", default=None)
    _add_data_flags(p)
    _add_crossbar_flags(p)
    _add_target_flags(p)
    p.add_argument("--rows", default=None, help="comma-separated faulty-row counts to sweep")
    p.add_argument("--cols", default=None, help="comma-separated faulty-column counts to sweep")
    _add_sweep_flags(p)

    p = sub.add_parser("dynamic", help="dynamic-fault period sweep at a fixed rate")
    p.add_argument("--config", default=None)
    _add_data_flags(p)
    _add_crossbar_flags(p)
    _add_target_flags(p)
    p.add_argument("--periods", default=None, help="comma-separated periods")
    p.add_argument("--rate", type=float, default=None, help="injection rate (default 0.3)")
    _add_sweep_flags(p)

    p = sub.add_parser("bench", help="timing comparison of the injection modes")
    p.add_argument("--config", default=None)
    _add_data_flags(p)
    _add_crossbar_flags(p)
    p.add_argument("--rate", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--skip-exact", action="store_true", default=None)

    return parser


_DEFAULTS = {
    "gate_rows": 40,
    "gate_cols": 10,
    "xbars": 1,
    "subset": 1000,
    "reps": 100,
    "seed": 0,
    "p_one": 1.0,
    "mode": "fast",
    "jobs": 1,
    "rate": None,
    "period": 0,
    "fault_type": None,
}


def _finalize(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from --config, then from the hard defaults."""
    cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            cfg = json.load(f)
    for key, val in vars(args).items():
        if val is None:
            if key in cfg:
                setattr(args, key, cfg[key])
            elif key in _DEFAULTS:
                setattr(args, key, _DEFAULTS[key])
    return args


def _crossbar(args) -> CrossbarConfig:
    return CrossbarConfig(args.gate_rows, args.gate_cols, args.xbars)


def _target(args):
    if getattr(args, "layer", None):
        return args.layer if len(args.layer) > 1 else args.layer[0]
    return "combined"


def _experiment(args, fault_type, values, rate=0.3) -> ExperimentConfig:
    if not args.model or not args.data_images or not args.data_labels:
        raise SystemExit("need --model, --data-images and --data-labels")
    return ExperimentConfig(
        model_path=args.model,
        images_path=args.data_images,
        labels_path=args.data_labels,
        subset=args.subset,
        crossbar=_crossbar(args),
        target=_target(args),
        fault_type=fault_type,
        sweep_values=tuple(values),
        repetitions=args.reps,
        base_seed=args.seed,
        mode=args.mode,
        p_one=args.p_one,
        rate=rate,
        out_path=args.out,
        jobs=args.jobs,
    )


def _cmd_gen(args) -> int:
    if not args.layer:
        raise SystemExit("gen needs at least one --layer")
    if not args.out:
        raise SystemExit("gen needs --out")
    xbar = _crossbar(args)
    if args.fault_type == "lines":
        rows = _int_list(args.rows) if args.rows else []
        cols = _int_list(args.cols) if args.cols else []
        masks = {
            name: gen_line_fault_mask(xbar.gate_rows, xbar.gate_cols, rows=rows, cols=cols, layer_name=name, seed=args.seed)
            for name in args.layer
        }
    else:
        if args.fault_type is None or args.rate is None:
            raise SystemExit("gen needs --type and --rate (or --type lines with --rows/--cols)")
        masks = build_masks(
            args.layer,
            args.fault_type,
            xbar,
            args.seed,
            rate=args.rate,
            period=args.period,
            p_one=args.p_one,
        )
    write_fault_file(args.out, [masks[n] for n in args.layer], xbar)
    print(json.dumps({"written": args.out, "masks": [
        {"layer": n, "type": masks[n].fault_type, "faulty_gates": masks[n].faulty_count}
        for n in args.layer
    ]}, indent=2))
    return 0


def _model_summary(model: ModelGraph, xbar: CrossbarConfig) -> dict:
    entries = []
    shapes = model.shape_chain()
    for layer, out_shape in zip(model.layers, shapes[1:]):
        if layer.kind == "BinaryConv2D":
            oh, ow, oc = out_shape
            entries.append((layer.name, oh * ow * oc * layer.reduction_len))
        elif layer.kind == "BinaryDense":
            entries.append((layer.name, layer.out_features * layer.reduction_len))
    return {
        "name": model.name,
        "input_shape": list(model.input_shape),
        "class_count": model.class_count,
        "layers": [
            {"name": l.name, "kind": l.kind, "output_shape": list(s)}
            for l, s in zip(model.layers, shapes[1:])
        ],
        "capacity": capacity_report(entries, xbar),
    }


def _cmd_inspect(args) -> int:
    out = {}
    if args.faults:
        masks, xbar = read_fault_file(args.faults)
        out["fault_file"] = {
            "gate_rows": xbar.gate_rows,
            "gate_cols": xbar.gate_cols,
            "crossbars_per_layer": xbar.crossbars_per_layer,
            "masks": [
                {
                    "layer": m.layer_name,
                    "type": m.fault_type,
                    "period": m.period,
                    "rate": m.rate,
                    "seed": m.seed,
                    "faulty_gates": m.faulty_count,
                }
                for m in masks
            ],
        }
    if args.model:
        model = read_model(args.model)
        out["model"] = _model_summary(model, _crossbar(args))
    if not out:
        raise SystemExit("inspect needs --faults and/or --model")
    print(json.dumps(out, indent=2))
    return 0


def _cmd_run(args) -> int:
    if not args.model or not args.data_images or not args.data_labels:
        raise SystemExit("run needs --model, --data-images and --data-labels")
    model = read_model(args.model)
    data = read_idx(args.data_images, args.data_labels)
    if args.subset:
        data = data.subset(args.subset)
    if args.faults:
        masks, xbar = read_fault_file(args.faults)
        report = single_run(model, data, {m.layer_name: m for m in masks}, xbar, args.mode)
    else:
        report = baseline_row(model, data)
    print(json.dumps(report, indent=2))
    return 0


def _cmd_sweep(args) -> int:
    if args.fault_type is None or args.rates is None:
        raise SystemExit("sweep needs --type and --rates")
    cfg = _experiment(args, args.fault_type, _float_list(args.rates))
    rows = run_sweep(cfg)
    _print_rows(rows, args.out)
    return 0


def _cmd_lines(args) -> int:
    if (args.rows is None) == (args.cols is None):
        raise SystemExit("lines needs exactly one of --rows or --cols (counts to sweep)")
    axis = "rows" if args.rows is not None else "cols"
    counts = _int_list(args.rows if axis == "rows" else args.cols)
    cfg = _experiment(args, axis, counts)
    rows = run_line_fault_sweep(cfg, axis)
    _print_rows(rows, args.out)
    return 0


def _cmd_dynamic(args) -> int:
    if args.periods is None:
        raise SystemExit("dynamic needs --periods")
    rate = args.rate if args.rate is not None else 0.3
    cfg = _experiment(args, "dynamic", _int_list(args.periods), rate=rate)
    rows = run_dynamic_sweep(cfg)
    _print_rows(rows, args.out)
    return 0


def _cmd_bench(args) -> int:
    if not args.model or not args.data_images or not args.data_labels:
        raise SystemExit("bench needs --model, --data-images and --data-labels")
    cfg = ExperimentConfig(
        model_path=args.model,
        images_path=args.data_images,
        labels_path=args.data_labels,
        subset=args.subset,
        crossbar=_crossbar(args),
    )
    model, data = load_environment(cfg)
    modes = ("fault-free", "fast", "featuremap") if args.skip_exact else ("fault-free", "fast", "featuremap", "exact")
    rate = args.rate if args.rate is not None else 0.1
    report = benchmark(model, data, cfg.crossbar, rate=rate, seed=args.seed, modes=modes)
    print(json.dumps(report, indent=2))
    return 0


def _print_rows(rows, out_path):
    summary = {}
    for r in rows:
        summary.setdefault((r.fault_type, r.param, r.rate), []).append(r.accuracy)
    lines = [
        {
            "fault_type": ft,
            "param": param,
            "rate": rate,
            "mean_accuracy": sum(accs) / len(accs),
            "reps": len(accs),
        }
        for (ft, param, rate), accs in sorted(summary.items())
    ]
    print(json.dumps({"cells": lines, "csv": out_path}, indent=2))


_COMMANDS = {
    "gen": _cmd_gen,
    "inspect": _cmd_inspect,
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "lines": _cmd_lines,
    "dynamic": _cmd_dynamic,
    "bench": _cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args = _finalize(args)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
