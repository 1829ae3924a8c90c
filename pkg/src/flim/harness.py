"""Experiment runner: seeded fault sweeps over layers, line-fault and
dynamic-period sweeps, and the mode benchmark.

Every sweep cell (sweep value, repetition) derives its own seed as
base_seed + repetition and is therefore independently recomputable; cells are
safe to farm out to worker processes because each builds its own masks and
session. "combined" targets every injectable layer with an independent mask
per layer, seeded as cell_seed XOR fnv1a64(layer_name).
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .crossbar import CrossbarConfig
from .dataio import LabeledDataset, ResultRow, read_idx, read_model, write_results_csv
from .engine import ModelGraph, infer_batch
from .faultgen import (
    BITFLIP,
    DYNAMIC,
    STUCKAT,
    FaultMask,
    gen_bitflip_mask,
    gen_dynamic_mask,
    gen_line_fault_mask,
    gen_stuckat_mask,
)
from .injector import InjectionSession, run_with_faults
from .rng import SplitMix64, fnv1a64, sample_without_replacement

COMBINED = "combined"


class HarnessError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model_path: str
    images_path: str
    labels_path: str
    subset: int = 1000
    crossbar: CrossbarConfig = field(default_factory=CrossbarConfig)
    target: str | list[str] = COMBINED
    fault_type: str = BITFLIP
    sweep_values: tuple = (0.0,)
    repetitions: int = 100
    base_seed: int = 0
    mode: str = "fast"
    # stuck values default to the single polarity that models end-of-life
    # stuck-at behavior; 0.5 gives the fair-coin mix
    p_one: float = 1.0
    rate: float = 0.3  # fixed injection rate for dynamic-period sweeps
    out_path: str | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.repetitions < 1:
            raise HarnessError("repetitions must be >= 1")
        if self.jobs < 1:
            raise HarnessError("jobs must be >= 1")


def load_environment(cfg: ExperimentConfig) -> tuple[ModelGraph, LabeledDataset]:
    model = read_model(cfg.model_path)
    data = read_idx(cfg.images_path, cfg.labels_path)
    if cfg.subset:
        data = data.subset(cfg.subset)
    return model, data


def resolve_targets(model: ModelGraph, target, mode: str) -> list[str]:
    """Expand the target argument to concrete layer names.

    In featuremap mode a combined target drops layers without a downstream
    threshold (the final logits layer cannot take a feature-map mask).
    """
    injectable = [l.name for l in model.injectable_layers()]
    if target == COMBINED:
        names = injectable
        if mode == "featuremap":
            names = [n for n in names if _has_downstream_threshold(model, n)]
        return names
    names = [target] if isinstance(target, str) else list(target)
    for n in names:
        if n not in injectable:
            raise HarnessError(f"target layer {n!r} is not an injectable layer of the model")
    return names


def _has_downstream_threshold(model: ModelGraph, name: str) -> bool:
    seen = False
    for layer in model.layers:
        if layer.name == name:
            seen = True
            continue
        if not seen:
            continue
        if layer.kind == "Threshold":
            return True
        if layer.kind in ("BinaryConv2D", "BinaryDense"):
            return False
    return False


def _layer_seed(cell_seed: int, layer_name: str, multi: bool) -> int:
    return (cell_seed ^ fnv1a64(layer_name)) if multi else cell_seed


def build_masks(
    targets: list[str],
    fault_type: str,
    cfg: CrossbarConfig,
    seed: int,
    rate: float = 0.0,
    period: int = 0,
    p_one: float = 1.0,
    line_axis: str = "",
    line_count: int = 0,
) -> dict[str, FaultMask]:
    """Masks for one sweep cell; pure function of its arguments."""
    multi = len(targets) > 1
    masks = {}
    for name in targets:
        s = _layer_seed(seed, name, multi)
        if fault_type == BITFLIP:
            masks[name] = gen_bitflip_mask(cfg.gate_rows, cfg.gate_cols, rate, s, layer_name=name)
        elif fault_type == STUCKAT:
            masks[name] = gen_stuckat_mask(cfg.gate_rows, cfg.gate_cols, rate, s, p_one=p_one, layer_name=name)
        elif fault_type == DYNAMIC:
            masks[name] = gen_dynamic_mask(cfg.gate_rows, cfg.gate_cols, rate, period, s, layer_name=name)
        elif fault_type in ("rows", "cols"):
            limit = cfg.gate_rows if fault_type == "rows" else cfg.gate_cols
            if line_count > limit:
                raise HarnessError(f"{line_count} faulty {fault_type} exceed grid size {limit}")
            lines = sample_without_replacement(limit, line_count, SplitMix64(s))
            kw = {"rows": lines} if fault_type == "rows" else {"cols": lines}
            masks[name] = gen_line_fault_mask(cfg.gate_rows, cfg.gate_cols, layer_name=name, seed=s, **kw)
        else:
            raise HarnessError(f"unknown fault type {fault_type!r}")
    return masks


def measure_accuracy(model: ModelGraph, data: LabeledDataset, session: InjectionSession | None) -> float:
    if session is None:
        preds, _ = infer_batch(model, data.images)
    else:
        preds, _ = run_with_faults(model, data.images, session)
    return float((preds == data.labels).mean())


# ---------------------------------------------------------------------------
# sweep execution
# ---------------------------------------------------------------------------

# worker processes keep the loaded model/dataset keyed by their paths
_WORKER_ENV: dict = {}


def _cell(cfg_dict: dict, value, rep: int) -> ResultRow:
    key = (cfg_dict["model_path"], cfg_dict["images_path"], cfg_dict["labels_path"], cfg_dict["subset"])
    env = _WORKER_ENV.get(key)
    if env is None:
        model = read_model(cfg_dict["model_path"])
        data = read_idx(cfg_dict["images_path"], cfg_dict["labels_path"])
        if cfg_dict["subset"]:
            data = data.subset(cfg_dict["subset"])
        env = (model, data)
        _WORKER_ENV[key] = env
    model, data = env

    xbar = CrossbarConfig(*cfg_dict["crossbar"])
    fault_type = cfg_dict["fault_type"]
    seed = cfg_dict["base_seed"] + rep
    targets = cfg_dict["targets"]
    start = time.perf_counter()
    if fault_type in ("rows", "cols"):
        masks = build_masks(targets, fault_type, xbar, seed, line_axis=fault_type, line_count=int(value))
        param, rate = int(value), 0.0
    elif fault_type == DYNAMIC:
        masks = build_masks(targets, fault_type, xbar, seed, rate=cfg_dict["rate"], period=int(value))
        param, rate = int(value), cfg_dict["rate"]
    else:
        masks = build_masks(targets, fault_type, xbar, seed, rate=float(value), p_one=cfg_dict["p_one"])
        param, rate = 0, float(value)
    session = InjectionSession(cfg_dict["mode"], masks, xbar)
    accuracy = measure_accuracy(model, data, session)
    runtime_ms = (time.perf_counter() - start) * 1000.0
    return ResultRow(
        seed=seed,
        layer=cfg_dict["label"],
        fault_type=fault_type,
        param=param,
        rate=rate,
        accuracy=accuracy,
        images=len(data),
        runtime_ms=runtime_ms,
    )


def _cfg_dict(cfg: ExperimentConfig, targets: list[str], fault_type: str) -> dict:
    label = COMBINED if cfg.target == COMBINED else "+".join(targets)
    return {
        "model_path": cfg.model_path,
        "images_path": cfg.images_path,
        "labels_path": cfg.labels_path,
        "subset": cfg.subset,
        "crossbar": (cfg.crossbar.gate_rows, cfg.crossbar.gate_cols, cfg.crossbar.crossbars_per_layer),
        "targets": targets,
        "label": label,
        "fault_type": fault_type,
        "base_seed": cfg.base_seed,
        "mode": cfg.mode,
        "p_one": cfg.p_one,
        "rate": cfg.rate,
    }


def _execute(cfg: ExperimentConfig, cfg_dict: dict, values) -> list[ResultRow]:
    cells = [(value, rep) for value in values for rep in range(cfg.repetitions)]
    if cfg.jobs == 1:
        rows = [_cell(cfg_dict, value, rep) for value, rep in cells]
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(_cell, *zip(*[(cfg_dict, v, r) for v, r in cells])))
    rows.sort(key=lambda r: (r.layer, r.fault_type, r.param, r.rate, r.seed))
    if cfg.out_path:
        write_results_csv(rows, cfg.out_path)
    return rows


def run_sweep(cfg: ExperimentConfig) -> list[ResultRow]:
    """Injection-rate sweep for bit-flip or stuck-at faults."""
    if cfg.fault_type not in (BITFLIP, STUCKAT):
        raise HarnessError(f"run_sweep handles bitflip/stuckat, not {cfg.fault_type!r}")
    for v in cfg.sweep_values:
        if not 0.0 <= float(v) <= 1.0:
            raise HarnessError(f"rate {v} outside [0,1]")
    model, _ = load_environment(cfg)
    targets = resolve_targets(model, cfg.target, cfg.mode)
    return _execute(cfg, _cfg_dict(cfg, targets, cfg.fault_type), [float(v) for v in cfg.sweep_values])


def run_line_fault_sweep(cfg: ExperimentConfig, axis: str) -> list[ResultRow]:
    """Sweep the number of whole faulty rows or columns (axis: rows|cols)."""
    if axis not in ("rows", "cols"):
        raise HarnessError("axis must be 'rows' or 'cols'")
    limit = cfg.crossbar.gate_rows if axis == "rows" else cfg.crossbar.gate_cols
    for v in cfg.sweep_values:
        if not 0 <= int(v) <= limit:
            raise HarnessError(f"{v} faulty {axis} outside grid of {limit}")
    model, _ = load_environment(cfg)
    targets = resolve_targets(model, cfg.target, cfg.mode)
    return _execute(cfg, _cfg_dict(cfg, targets, axis), [int(v) for v in cfg.sweep_values])


def run_dynamic_sweep(cfg: ExperimentConfig) -> list[ResultRow]:
    """Sweep the dynamic-fault period at the fixed cfg.rate."""
    for v in cfg.sweep_values:
        if int(v) < 0:
            raise HarnessError("periods must be non-negative")
    if not 0.0 <= cfg.rate <= 1.0:
        raise HarnessError(f"rate {cfg.rate} outside [0,1]")
    model, _ = load_environment(cfg)
    targets = resolve_targets(model, cfg.target, cfg.mode)
    return _execute(cfg, _cfg_dict(cfg, targets, DYNAMIC), [int(v) for v in cfg.sweep_values])


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

def benchmark(
    model: ModelGraph,
    data: LabeledDataset,
    crossbar: CrossbarConfig,
    rate: float = 0.1,
    seed: int = 0,
    modes: tuple = ("fault-free", "fast", "featuremap", "exact"),
) -> dict:
    """Wall-clock comparison of the injection modes on one bit-flip mask set.

    Emits machine-relative numbers only; ratios are against the fault-free
    phase. Phase totals sum to the report total.
    """
    report = {"images": len(data), "rate": rate, "seed": seed, "phases": []}
    clean_s = None
    for mode in modes:
        if mode == "fault-free":
            session = None
        else:
            targets = resolve_targets(model, COMBINED, mode)
            masks = build_masks(targets, BITFLIP, crossbar, seed, rate=rate)
            session = InjectionSession(mode, masks, crossbar)
        start = time.perf_counter()
        accuracy = measure_accuracy(model, data, session)
        elapsed = time.perf_counter() - start
        if mode == "fault-free":
            clean_s = elapsed
        report["phases"].append(
            {
                "mode": mode,
                "total_s": elapsed,
                "per_image_ms": elapsed * 1000.0 / max(len(data), 1),
                "accuracy": accuracy,
                "vs_fault_free": (elapsed / clean_s) if clean_s else None,
            }
        )
    report["total_s"] = sum(p["total_s"] for p in report["phases"])
    return report


def single_run(
    model: ModelGraph,
    data: LabeledDataset,
    masks: dict[str, FaultMask],
    crossbar: CrossbarConfig,
    mode: str = "fast",
) -> dict:
    """One injected inference pass; used by the `run` CLI subcommand."""
    session = InjectionSession(mode, masks, crossbar)
    start = time.perf_counter()
    preds, _ = run_with_faults(model, data.images, session)
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    correct = int((preds == data.labels).sum())
    return {
        "images": len(data),
        "correct": correct,
        "accuracy": correct / len(data) if len(data) else 0.0,
        "mode": mode,
        "runtime_ms": elapsed_ms,
    }


def baseline_row(model: ModelGraph, data: LabeledDataset) -> dict:
    start = time.perf_counter()
    preds, _ = infer_batch(model, data.images)
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    correct = int((preds == data.labels).sum())
    return {
        "images": len(data),
        "correct": correct,
        "accuracy": correct / len(data) if len(data) else 0.0,
        "mode": "fault-free",
        "runtime_ms": elapsed_ms,
    }
