"""Command-line pipeline: gen-data, train, forecast, evaluate, ablate, inspect.

Every command writes a ``manifest.json`` recording the resolved configuration,
the master seed, and content digests of all inputs and outputs. Exit codes:
0 success, 2 validation error, 3 runtime divergence, 4 I/O error.
"""

import argparse
import csv
import io
import json
import struct
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import MAGIC as CKPT_MAGIC
from .checkpoint import load_checkpoint, save_checkpoint
from .datagen import (
    FlowTaskConfig,
    GlyphTaskConfig,
    generate_flow_dataset,
    generate_glyph_dataset,
    split_dataset,
)
from .denoiser import ConvArchitecture, GaussianOracleDenoiser
from .errors import (
    DegenerateStepError,
    DivergenceError,
    ParameterError,
    ShapeError,
    StateError,
)
from .gridfile import MAGIC as GRID_MAGIC
from .gridfile import atomic_write_bytes, read_grid, write_grid
from .manifest import write_manifest
from .metrics import (
    crps_ensemble,
    csi,
    csi_neighborhood,
    economic_value,
    fss,
    pooled_crps,
    psd_radial,
    rmse_mae,
)
from .sampler import SamplerConfig, sample_batch
from .schedule import cosine_schedule, linear_schedule
from .training import TrainConfig, train_denoiser

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

VALIDATION_ERRORS = (ParameterError, ShapeError, DegenerateStepError, StateError)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: invalid JSON ({exc})") from exc


def _require(cfg: dict, key: str, kind, path: str = ""):
    loc = f"{path}.{key}" if path else key
    if key not in cfg:
        raise ParameterError(f"{loc}: required field missing")
    value = cfg[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ParameterError(f"{loc}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _build_dataclass(cls, fields: dict, path: str):
    try:
        return cls(**fields)
    except TypeError as exc:
        raise ParameterError(f"{path}: {exc}") from exc


def _schedule_from_config(cfg: dict):
    kind = cfg.get("kind", "cosine")
    steps = int(cfg.get("steps", 200))
    if kind == "cosine":
        return cosine_schedule(steps, float(cfg.get("s_offset", 0.008)))
    if kind == "linear":
        return linear_schedule(steps, float(_require(cfg, "beta_start", float, "schedule")),
                               float(_require(cfg, "beta_end", float, "schedule")))
    raise ParameterError(f"schedule.kind: unknown kind {kind!r}")


def _float_cell(value) -> str:
    return repr(float(value))


def _write_csv(path, rows, header) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = _load_json(args.config)
    task = _require(cfg, "task", str)
    count = _require(cfg, "count", int)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    fractions = cfg.get("fractions", [0.8, 0.1, 0.1])
    if not isinstance(fractions, list) or len(fractions) != 3:
        raise ParameterError("fractions: expected a list of three numbers")
    if abs(sum(float(f) for f in fractions) - 1.0) > 1e-9:
        raise ParameterError(f"fractions: must sum to 1, got {sum(fractions)!r}")

    if task == "glyph":
        task_cfg = _build_dataclass(GlyphTaskConfig, {**cfg.get("glyph", {}), "seed": seed}, "glyph")
        sequences = generate_glyph_dataset(task_cfg, count)
    elif task == "flow":
        task_cfg = _build_dataclass(FlowTaskConfig, {**cfg.get("flow", {}), "seed": seed}, "flow")
        sequences = generate_flow_dataset(task_cfg, count)
    else:
        raise ParameterError(f"task: unknown task {task!r}")

    splits = split_dataset(sequences, fractions, seed=seed)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    resolved = {
        "task": task,
        "count": count,
        "fractions": [float(f) for f in fractions],
        "seed": seed,
        task: asdict(task_cfg),
    }
    outputs = []
    for name, split in zip(("train", "val", "test"), splits):
        if not split:
            continue
        data = np.stack([s.data for s in split])
        meta = {
            "task": task,
            "split": name,
            "sample_ids": [s.sample_id for s in split],
            "context_frames": task_cfg.context_frames,
            "frame_interval": task_cfg.frame_interval,
            "config": resolved,
        }
        path = out_dir / f"{name}.grd"
        write_grid(path, data, meta)
        outputs.append(path)
        _log(f"wrote {path} shape {data.shape}")
    write_manifest(out_dir, "gen-data", resolved, seed, inputs=[args.config], outputs=outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    grid = read_grid(args.data)
    cfg = _load_json(args.config)
    sched = _schedule_from_config(cfg.get("schedule", {}))
    n0 = int(grid.header.get("context_frames", 0))
    if n0 < 1:
        raise ParameterError(f"{args.data}: header lacks a positive context_frames")
    S, F, C, H, W = grid.data.shape
    if F <= n0:
        raise ParameterError(f"{args.data}: {F} frames cannot cover {n0} context frames plus targets")

    arch = _build_dataclass(ConvArchitecture, {
        "target_frames": F - n0,
        "context_frames": n0,
        "channels": C,
        "height": H,
        "width": W,
        "hidden": int(cfg.get("hidden", 8)),
        "kernel": int(cfg.get("kernel", 3)),
        "emb_channels": int(cfg.get("emb_channels", 8)),
        "activation": cfg.get("activation", "tanh"),
        "total_steps": sched.T,
    }, "architecture")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    train_cfg = _build_dataclass(TrainConfig, {
        "learning_rate": float(cfg.get("learning_rate", 1e-3)),
        "adam_beta1": float(cfg.get("adam_beta1", 0.9)),
        "adam_beta2": float(cfg.get("adam_beta2", 0.999)),
        "steps": args.steps if args.steps is not None else int(cfg.get("steps", 1000)),
        "batch_size": int(cfg.get("batch_size", 4)),
        "cond_dropout_prob": float(cfg.get("cond_dropout_prob", 0.1)),
        "loss_norm": cfg.get("loss_norm", "L1"),
        "seed": seed,
    }, "train")
    train_cfg.validate()
    interval = int(cfg.get("checkpoint_interval", 0))

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sequences = [np.asarray(grid.data[i], dtype=np.float64) for i in range(S)]

    resolved = {
        "architecture": arch.to_dict(),
        "train": train_cfg.to_dict(),
        "schedule": sched.to_dict(),
        "checkpoint_interval": interval,
    }
    periodic = []

    def on_step(step, model):
        if interval > 0 and (step + 1) % interval == 0:
            path = out_dir / f"checkpoint_step{step + 1:06d}.ckpt"
            save_checkpoint(path, model, sched, train_cfg.to_dict(), seed, step + 1)
            periodic.append(path)

    started = time.monotonic()
    model, history = train_denoiser(sequences, sched, arch, train_cfg, callback=on_step)
    _log(f"trained {train_cfg.steps} steps in {time.monotonic() - started:.1f}s")

    ckpt_path = out_dir / "checkpoint.ckpt"
    save_checkpoint(ckpt_path, model, sched, train_cfg.to_dict(), seed, train_cfg.steps)
    loss_path = out_dir / "loss_history.csv"
    _write_csv(loss_path, [(i, _float_cell(v)) for i, v in enumerate(history.losses)],
               ("step", "loss"))
    write_manifest(out_dir, "train", resolved, seed, inputs=[args.data, args.config],
                   outputs=[*periodic, ckpt_path, loss_path],
                   extra={"final_loss": float(history.losses[-1]) if train_cfg.steps else None,
                          "condition_dropout_fraction": history.dropout_fraction})
    return EXIT_OK


# ---------------------------------------------------------------------------
# forecast
# ---------------------------------------------------------------------------

def _parse_oracle_spec(spec: str) -> dict:
    out = {"mu0": 0.0, "tau2": 1.0}
    if spec.strip():
        for part in spec.split(","):
            if "=" not in part:
                raise ParameterError(f"--oracle: expected key=value, got {part!r}")
            key, value = part.split("=", 1)
            key = key.strip()
            if key not in out:
                raise ParameterError(f"--oracle: unknown key {key!r} (use mu0, tau2)")
            out[key] = float(value)
    if out["tau2"] <= 0.0:
        raise ParameterError(f"--oracle: tau2 must be positive, got {out['tau2']}")
    return out


def _canonical_sampler_meta(mode: str, cfg: SamplerConfig, scale: float) -> dict:
    base = {"steps": cfg.steps, "stochastic_step": cfg.stochastic_step,
            "freeze_uncond_noise": cfg.freeze_uncond_noise}
    reduces = (mode == "constant" and scale == 1.0) or (
        mode == "precision" and (cfg.lam == 0.0 or cfg.queue_capacity == 1)
    )
    if reduces:
        return {"mode": "constant", "scale": 1.0, **base}
    if mode == "constant":
        return {"mode": "constant", "scale": float(scale), **base}
    return {
        "mode": "precision",
        "lambda": cfg.lam,
        "queue_capacity": cfg.queue_capacity,
        "window_k": cfg.window,
        "clip": [cfg.clip_lo, cfg.clip_hi],
        **base,
    }


def _case_seed(member_seed: int, case_index: int) -> int:
    return int(np.random.SeedSequence([member_seed, case_index]).generate_state(1)[0])


def _run_member(model, sched, contexts, shape, mode, scale, cfg, member_seed,
                keep_first_diag=False):
    """Sample every case for one ensemble member; returns (stack, diagnostics)."""
    seeds = [_case_seed(member_seed, i) for i in range(contexts.shape[0])]
    stack, final_u, history = sample_batch(
        contexts, model, sched, replace(cfg, seed=member_seed), shape, seeds,
        mode=mode, guidance_scale=scale,
        history_case=0 if (keep_first_diag and mode == "precision") else None,
        dtype=np.float32,
    )
    return stack, {
        "final_inverse_precision": final_u,
        "weight_history": np.stack(history) if history else None,
    }


def cmd_forecast(args) -> int:
    if (args.checkpoint is None) == (args.oracle is None):
        raise ParameterError("exactly one of --checkpoint or --oracle is required")
    grid = read_grid(args.context)
    n0 = int(grid.header.get("context_frames", 0))
    if n0 < 1:
        raise ParameterError(f"{args.context}: header lacks a positive context_frames")
    S, F, C, H, W = grid.data.shape

    if args.checkpoint is not None:
        model, sched, ck_header = load_checkpoint(args.checkpoint)
        arch = model.arch
        if (C, H, W) != (arch.channels, arch.height, arch.width) or n0 != arch.context_frames:
            raise ShapeError(
                f"context file ({n0} frames, {C}x{H}x{W}) incompatible with checkpoint "
                f"({arch.context_frames} frames, {arch.channels}x{arch.height}x{arch.width})"
            )
        if args.steps is not None and args.steps != sched.T:
            raise ParameterError(
                f"--steps {args.steps} conflicts with checkpoint schedule of {sched.T}"
            )
        shape = arch.target_shape
        model_meta = {"kind": "checkpoint", "schedule_digest": ck_header["schedule_digest"]}
    else:
        oracle = _parse_oracle_spec(args.oracle)
        sched = cosine_schedule(args.steps if args.steps is not None else 200)
        if F <= n0:
            raise ParameterError(f"{args.context}: no target frames beyond the {n0} context frames")
        model = GaussianOracleDenoiser(sched, prior_var=oracle["tau2"], uncond_mean=oracle["mu0"])
        shape = (F - n0, C, H, W)
        model_meta = {"kind": "oracle", **oracle}

    if args.members < 1:
        raise ParameterError(f"--members must be >= 1, got {args.members}")
    n_cases = S if args.cases is None else min(args.cases, S)
    if n_cases < 1:
        raise ParameterError("no cases to forecast")
    contexts = np.asarray(grid.data[:n_cases, :n0], dtype=np.float64)
    sample_ids = list(grid.header.get("sample_ids", range(S)))[:n_cases]

    master = args.seed if args.seed is not None else 0
    cfg = SamplerConfig(
        steps=sched.T,
        lam=args.lam,
        queue_capacity=args.queue,
        window_k=args.window_k,
        stochastic_step=args.stochastic,
        seed=master,
    )
    cfg.validate()
    sampler_meta = _canonical_sampler_meta(args.mode, cfg, args.scale)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_meta = {
        "task": grid.header.get("task"),
        "sample_ids": sample_ids,
        "context_frames": n0,
        "frame_interval": grid.header.get("frame_interval", 1.0),
        "sampler": sampler_meta,
        "model": model_meta,
    }

    outputs = []
    member_stacks = []
    diag0 = None
    started = time.monotonic()
    for m in range(args.members):
        member_seed = master + m
        stack, diag = _run_member(model, sched, contexts, shape, args.mode, args.scale,
                                  cfg, member_seed, keep_first_diag=(m == 0 and args.keep_weights))
        member_stacks.append(stack)
        if m == 0:
            diag0 = diag
        path = out_dir / f"forecast_m{m}.grd"
        write_grid(path, stack, meta={**base_meta, "member": m, "member_seed": member_seed,
                                      "master_seed": master})
        outputs.append(path)
    _log(f"sampled {args.members} member(s) x {n_cases} case(s) in {time.monotonic() - started:.1f}s")

    if args.mode == "precision":
        path = out_dir / "inverse_precision.grd"
        write_grid(path, diag0["final_inverse_precision"],
                   meta={**base_meta, "field": "final_inverse_precision", "member": 0,
                         "member_seed": master})
        outputs.append(path)
        if args.keep_weights and diag0["weight_history"] is not None:
            path = out_dir / "weight_history.grd"
            write_grid(path, diag0["weight_history"],
                       meta={**base_meta, "field": "weight_history", "member": 0,
                             "member_seed": master, "case_index": 0,
                             "sample_ids": sample_ids[:1]},
                       axes=("step", "frame", "channel", "y", "x"))
            outputs.append(path)

    if args.mc_precision:
        if args.members < 2:
            raise ParameterError("--mc-precision needs --members >= 2")
        mc = np.stack(member_stacks).var(axis=0)
        path = out_dir / "mc_precision.grd"
        write_grid(path, mc, meta={**base_meta, "field": "mc_precision",
                                   "members": args.members, "master_seed": master})
        outputs.append(path)

    resolved = {
        "mode": args.mode,
        "scale": args.scale,
        "sampler": sampler_meta,
        "sampler_requested": cfg.to_dict(),
        "model": model_meta,
        "members": args.members,
        "cases": n_cases,
        "schedule": sched.to_dict(),
        "keep_weights": args.keep_weights,
        "mc_precision": args.mc_precision,
    }
    inputs = [args.context] + ([args.checkpoint] if args.checkpoint else [])
    write_manifest(out_dir, "forecast", resolved, master, inputs=inputs, outputs=outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

DEFAULT_METRICS = ("crps", "pooled_crps", "csi", "csi_neighborhood", "fss",
                   "rmse_mae", "economic_value", "psd")


def _aligned_truth(truth_grid, forecast_headers, forecast_shape):
    n0 = int(truth_grid.header.get("context_frames", 0))
    truth_targets = np.asarray(truth_grid.data[:, n0:], dtype=np.float64)
    truth_ids = list(truth_grid.header.get("sample_ids", range(truth_grid.data.shape[0])))
    wanted = forecast_headers[0].get("sample_ids", [])
    for header in forecast_headers[1:]:
        if header.get("sample_ids", []) != wanted:
            raise ParameterError("forecast member files disagree on sample ids")
    index = {sid: i for i, sid in enumerate(truth_ids)}
    missing = [sid for sid in wanted if sid not in index]
    if missing:
        raise ParameterError(f"case ids missing from truth file: {missing}")
    rows = [index[sid] for sid in wanted]
    truth = truth_targets[rows]
    if truth.shape != forecast_shape:
        raise ShapeError(f"truth targets {truth.shape} != forecast shape {forecast_shape}")
    return truth, wanted


def _metric_rows(members, truth, metrics, windows, pool_windows, thresholds, ratios,
                 event_rule="mean"):
    """Rows (metric, window, agg, threshold, lead, value); lead 'all' = aggregate.

    ``event_rule`` picks the field fed to the thresholded scores: "mean" uses
    the ensemble mean, "member-majority" marks a cell (value 1.0) where at
    least half the members reach the threshold — with that rule the listed
    event thresholds only select the metric rows they label.
    """
    rows = []
    n_lead = truth.shape[1]
    leads = ["all"] + list(range(1, n_lead + 1))

    def lead_slice(arr, lead, member_axis=False):
        if lead == "all":
            return arr
        if member_axis:
            return arr[:, :, lead - 1:lead]
        return arr[:, lead - 1:lead]

    if "crps" in metrics:
        for lead in leads:
            _, mean = crps_ensemble(lead_slice(members, lead, True), lead_slice(truth, lead))
            rows.append(("crps", "", "", "", lead, mean))
    if "pooled_crps" in metrics:
        for window in pool_windows:
            for agg in ("avg", "max"):
                for lead in leads:
                    value = pooled_crps(lead_slice(members, lead, True),
                                        lead_slice(truth, lead), window, agg)
                    rows.append(("pooled_crps", window, agg, "", lead, value))
    mean_forecast = members.mean(axis=0)

    def event_fields(thr):
        if event_rule == "mean":
            return list(mean_forecast)
        # cells where at least half the members reach the threshold; encoded
        # so re-binarizing at the same threshold recovers exactly those cells
        majority = (members >= thr).mean(axis=0) >= 0.5
        return list(np.where(majority, thr, thr - 1.0))

    truth_cases = list(truth)
    if "csi" in metrics:
        for thr in thresholds:
            cases = event_fields(thr)
            for lead in leads:
                f = [lead_slice(c[None], lead)[0] for c in cases]
                t = [lead_slice(c[None], lead)[0] for c in truth_cases]
                value, _ = csi(f, t, thr)
                rows.append(("csi", "", "", thr, lead, value))
    if "csi_neighborhood" in metrics:
        for thr in thresholds:
            cases = event_fields(thr)
            for window in windows:
                for lead in leads:
                    f = [lead_slice(c[None], lead)[0] for c in cases]
                    t = [lead_slice(c[None], lead)[0] for c in truth_cases]
                    value = csi_neighborhood(f, t, thr, window)
                    rows.append(("csi_neighborhood", window, "", thr, lead, value))
    if "fss" in metrics:
        for thr in thresholds:
            cases = event_fields(thr)
            for window in windows:
                for lead in leads:
                    f = [lead_slice(c[None], lead)[0] for c in cases]
                    t = [lead_slice(c[None], lead)[0] for c in truth_cases]
                    value = fss(f, t, thr, window)
                    rows.append(("fss", window, "", thr, lead, value))
    if "rmse_mae" in metrics:
        scores = rmse_mae(mean_forecast, truth)
        lead_axes = tuple(i for i in range(mean_forecast.ndim) if i != 1)
        diff = mean_forecast - truth
        rmse_by = np.sqrt(np.mean(diff ** 2, axis=lead_axes))
        mae_by = np.mean(np.abs(diff), axis=lead_axes)
        rows.append(("rmse", "", "", "", "all", scores.rmse))
        rows.append(("mae", "", "", "", "all", scores.mae))
        for lead in range(1, n_lead + 1):
            rows.append(("rmse", "", "", "", lead, float(rmse_by[lead - 1])))
            rows.append(("mae", "", "", "", lead, float(mae_by[lead - 1])))
    if "economic_value" in metrics:
        for thr in thresholds:
            result = economic_value(list(members.transpose(1, 0, 2, 3, 4, 5)),
                                    truth_cases, thr, ratios)
            for r, v in zip(result.ratios, result.values):
                rows.append(("economic_value", "", f"r={r:g}", thr, "all", v))
    return rows


def cmd_evaluate(args) -> int:
    truth_grid = read_grid(args.truth)
    member_grids = [read_grid(f) for f in args.forecast]
    members = np.stack([np.asarray(g.data, dtype=np.float64) for g in member_grids])
    truth, case_ids = _aligned_truth(truth_grid, [g.header for g in member_grids],
                                     members.shape[1:])

    metrics = tuple(args.metrics.split(",")) if args.metrics else DEFAULT_METRICS
    unknown = [m for m in metrics if m not in DEFAULT_METRICS]
    if unknown:
        raise ParameterError(f"--metrics: unknown metric(s) {unknown}")
    rows = _metric_rows(members, truth, metrics, args.windows, args.pool_windows,
                        args.thresholds, args.ratios, event_rule=args.event_rule)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    scores_path = out_dir / "scores.csv"
    _write_csv(scores_path,
               [(m, w, a, t, l, _float_cell(v)) for (m, w, a, t, l, v) in rows],
               ("metric", "window", "agg", "threshold", "lead", "value"))
    outputs.append(scores_path)

    if "psd" in metrics:
        lead = args.psd_lead if args.psd_lead is not None else truth.shape[1]
        if not 1 <= lead <= truth.shape[1]:
            raise ParameterError(f"--psd-lead must lie in [1, {truth.shape[1]}], got {lead}")
        psd_rows = []
        for source, stack in (("forecast", members[0]), ("truth", truth)):
            spectra = []
            for case in stack:
                k, power = psd_radial(case[lead - 1, 0])
                spectra.append(power)
            mean_power = np.mean(np.stack(spectra), axis=0)
            psd_rows.extend((source, int(kk), _float_cell(pp)) for kk, pp in zip(k, mean_power))
        psd_path = out_dir / "psd.csv"
        _write_csv(psd_path, psd_rows, ("source", "wavenumber", "power"))
        outputs.append(psd_path)

    summary = {
        "cases": case_ids,
        "members": int(members.shape[0]),
        "metrics": list(metrics),
        "crps_estimator": "empirical (pair term / 2M^2)",
        "event_rule": f"{args.event_rule} >= threshold; economic value uses any-member-exceeds",
        "scores": [
            {"metric": m, "window": w, "agg": a, "threshold": t, "lead": l, "value": v}
            for (m, w, a, t, l, v) in rows
        ],
    }
    summary_path = out_dir / "summary.json"
    atomic_write_bytes(summary_path,
                       json.dumps(summary, sort_keys=True, indent=2).encode("utf-8") + b"\n")
    outputs.append(summary_path)

    resolved = {
        "metrics": list(metrics),
        "windows": list(args.windows),
        "pool_windows": list(args.pool_windows),
        "thresholds": list(args.thresholds),
        "ratios": list(args.ratios),
        "psd_lead": args.psd_lead,
        "event_rule": args.event_rule,
    }
    write_manifest(out_dir, "evaluate", resolved, None,
                   inputs=[args.truth, *args.forecast], outputs=outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------

def _sampler_from_json(cfg: dict, steps: int, master: int, path: str):
    mode = cfg.get("mode", "precision")
    if mode not in ("precision", "constant"):
        raise ParameterError(f"{path}: mode must be 'precision' or 'constant'")
    scale = float(cfg.get("scale", 1.0))
    sampler_cfg = SamplerConfig(
        steps=steps,
        lam=float(cfg.get("lambda", 2.0)),
        queue_capacity=int(cfg.get("queue", 4)),
        window_k=cfg.get("window_k"),
        stochastic_step=bool(cfg.get("stochastic", False)),
        seed=master,
    )
    sampler_cfg.validate()
    name = cfg.get("name", mode)
    return name, mode, scale, sampler_cfg


def cmd_ablate(args) -> int:
    if len(args.config) < 2:
        raise ParameterError("ablate needs at least two sampler configs")
    grid = read_grid(args.data)
    model, sched, _ = load_checkpoint(args.checkpoint)
    arch = model.arch
    n0 = arch.context_frames
    S = grid.data.shape[0]
    if grid.data.shape[1:] != (n0 + arch.target_frames, arch.channels, arch.height, arch.width):
        raise ShapeError(
            f"dataset shape {grid.data.shape[1:]} incompatible with checkpoint architecture"
        )
    n_cases = S if args.cases is None else min(args.cases, S)
    contexts = np.asarray(grid.data[:n_cases, :n0], dtype=np.float64)
    truth = np.asarray(grid.data[:n_cases, n0:], dtype=np.float64)
    master = args.seed if args.seed is not None else 0

    configs = []
    names = set()
    for path in args.config:
        name, mode, scale, sampler_cfg = _sampler_from_json(_load_json(path), sched.T, master, path)
        if name in names:
            raise ParameterError(f"duplicate sampler config name {name!r}")
        names.add(name)
        configs.append((name, mode, scale, sampler_cfg))

    rows = []
    resolved_cfgs = {}
    for name, mode, scale, sampler_cfg in configs:
        started = time.monotonic()
        stacks = []
        for m in range(args.members):
            stack, _ = _run_member(model, sched, contexts, arch.target_shape, mode, scale,
                                   sampler_cfg, master + m)
            stacks.append(stack)
        members = np.stack(stacks)
        _log(f"[{name}] sampled {args.members} x {n_cases} in {time.monotonic() - started:.1f}s")
        metric_rows = _metric_rows(members, truth,
                                   ("crps", "pooled_crps", "csi", "fss", "rmse_mae"),
                                   args.windows, args.pool_windows, args.thresholds,
                                   args.ratios)
        rows.extend((name, *row) for row in metric_rows if row[4] == "all")
        resolved_cfgs[name] = _canonical_sampler_meta(mode, sampler_cfg, scale)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "ablation.csv"
    _write_csv(table_path,
               [(n, m, w, a, t, l, _float_cell(v)) for (n, m, w, a, t, l, v) in rows],
               ("config", "metric", "window", "agg", "threshold", "lead", "value"))
    write_manifest(out_dir, "ablate",
                   {"configs": resolved_cfgs, "members": args.members, "cases": n_cases,
                    "windows": list(args.windows), "pool_windows": list(args.pool_windows),
                    "thresholds": list(args.thresholds)},
                   master, inputs=[args.data, args.checkpoint, *args.config],
                   outputs=[table_path])
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspect
# ---------------------------------------------------------------------------

def cmd_inspect(args) -> int:
    blob = Path(args.file).read_bytes()
    magic = blob[:4]
    if magic not in (GRID_MAGIC, CKPT_MAGIC):
        raise ParameterError(f"{args.file}: unrecognized magic {magic!r}")
    (head_len,) = struct.unpack("<Q", blob[4:12])
    header = json.loads(blob[12:12 + head_len].decode("utf-8"))
    kind = "grid" if magic == GRID_MAGIC else "checkpoint"
    print(json.dumps({"kind": kind, "header": header}, sort_keys=True, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _int_list(text: str):
    return [int(v) for v in text.split(",") if v != ""]


def _float_list(text: str):
    return [float(v) for v in text.split(",") if v != ""]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="diffcast",
                                     description="Precision-weighted diffusion forecasting pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="task config JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the conv denoiser")
    p.add_argument("--data", required=True, help="training split grid file")
    p.add_argument("--config", required=True, help="training config JSON")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--steps", type=int, default=None, help="override config steps")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="sample forecasts for a context file")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--oracle", default=None,
                   help="analytic model spec, e.g. 'mu0=0,tau2=1' (no checkpoint needed)")
    p.add_argument("--context", required=True, help="grid file supplying context frames")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--members", type=int, default=1)
    p.add_argument("--cases", type=int, default=None, help="limit the number of cases")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=("precision", "constant"), default="precision")
    p.add_argument("--lambda", dest="lam", type=float, default=2.0, help="guidance strength")
    p.add_argument("--scale", type=float, default=1.0, help="constant-mode guidance scale")
    p.add_argument("--queue", type=int, default=4, help="estimate queue capacity")
    p.add_argument("--window-k", type=int, default=None, help="variance window within the queue")
    p.add_argument("--steps", type=int, default=None, help="schedule steps (oracle mode)")
    p.add_argument("--stochastic", action="store_true", help="inject reverse-step noise")
    p.add_argument("--keep-weights", action="store_true",
                   help="save the per-step weight history for the first case")
    p.add_argument("--mc-precision", action="store_true",
                   help="save the cross-member variance field (needs members >= 2)")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="score forecasts against a truth file")
    p.add_argument("--forecast", required=True, nargs="+", help="member grid file(s)")
    p.add_argument("--truth", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--metrics", default=None,
                   help=f"comma list from {','.join(DEFAULT_METRICS)} (default: all)")
    p.add_argument("--windows", type=_int_list, default=[1, 5],
                   help="neighborhood windows (odd), comma separated")
    p.add_argument("--pool-windows", type=_int_list, default=[1, 8],
                   help="pooling block sizes for pooled CRPS")
    p.add_argument("--thresholds", type=_float_list, default=[0.5])
    p.add_argument("--ratios", type=_float_list, default=[0.1, 0.3, 0.5, 0.7, 0.9],
                   help="cost-loss ratios for economic value")
    p.add_argument("--psd-lead", type=int, default=None, help="lead frame for PSD (default last)")
    p.add_argument("--event-rule", choices=("mean", "member-majority"), default="mean",
                   help="field binarized by CSI/FSS: ensemble mean or member majority vote")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="compare sampler configs on one dataset")
    p.add_argument("--data", required=True, help="test split grid file (context + targets)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True, nargs="+", help="two or more sampler config JSONs")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--members", type=int, default=4)
    p.add_argument("--cases", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--windows", type=_int_list, default=[5])
    p.add_argument("--pool-windows", type=_int_list, default=[4, 8])
    p.add_argument("--thresholds", type=_float_list, default=[0.5])
    p.add_argument("--ratios", type=_float_list, default=[0.1, 0.5, 0.9])
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("inspect", help="print a grid or checkpoint header")
    p.add_argument("file")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        _log(f"error: {exc}")
        return EXIT_VALIDATION
    except DivergenceError as exc:
        _log(f"diverged: {exc}")
        return EXIT_DIVERGENCE
    except OSError as exc:
        _log(f"i/o error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
