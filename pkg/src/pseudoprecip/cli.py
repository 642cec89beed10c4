"""Batch pipeline driver.

Every subcommand reads one JSON config (overridable with repeated
``--set key=value``), validates inputs by magic bytes, logs to stderr
and prints a single machine-parseable summary line to stdout.  Exit
codes: 0 ok, 2 missing input / insufficient data, 3 numeric failure,
4 validation failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import blend, downscale, evaluation, netcore, spectral, synth
from .errors import (
    ConfigError,
    InsufficientData,
    IoFailure,
    NonFiniteLoss,
    PseudoPrecipError,
    SingularSystem,
)
from .grid import FieldKind, field_stats, read_grid_series, slice_steps, write_grid_series

EXIT_MISSING = 2
EXIT_NUMERIC = 3
EXIT_INVALID = 4

QQ_PROBS = np.arange(1, 1000) / 1000.0  # 0.001 .. 0.999 step 0.001


@dataclass(frozen=True)
class EvalConfig:
    probe_cells: tuple = ((48, 48), (24, 72), (72, 24))
    threshold_mm: float = evaluation.EXTREME_THRESHOLD_MM  # default flag value
    extreme_quantile: float = 0.995  # scaled threshold for the synth distribution
    segment_length: int = 256


@dataclass(frozen=True)
class DownscalerConfig:
    radius: int = 2
    lam: float = 1e-3
    train_fraction: float = 0.75


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    out_dir: str = "out"
    factor: int = 4
    synth: synth.SynthConfig = field(default_factory=lambda: synth.SynthConfig(nsteps=2048))
    train: blend.TrainConfig = field(default_factory=blend.TrainConfig)
    lowpass: spectral.LowpassSpec = field(default_factory=spectral.LowpassSpec)
    downscaler: DownscalerConfig = field(default_factory=DownscalerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def default_config():
    return PipelineConfig()


def _as_plain(cfg):
    d = asdict(cfg)
    d["train"].pop("quantiles", None)
    return d


def config_to_json(cfg):
    return json.dumps(_as_plain(cfg), indent=2, sort_keys=True) + "\n"


def _build(cls, data, what):
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {what} config: {exc}") from exc


def config_from_dict(data):
    data = dict(data)
    sections = {
        "synth": (synth.SynthConfig, {"nsteps": 2048}),
        "train": (blend.TrainConfig, {}),
        "lowpass": (spectral.LowpassSpec, {}),
        "downscaler": (DownscalerConfig, {}),
        "eval": (EvalConfig, {}),
    }
    kwargs = {}
    seed = int(data.pop("seed", 0))
    for name, (cls, defaults) in sections.items():
        section = {**defaults, **data.pop(name, {})}
        if name in ("synth", "train") and "seed" not in section:
            section["seed"] = seed
        if name == "eval" and "probe_cells" in section:
            section["probe_cells"] = tuple(tuple(c) for c in section["probe_cells"])
        if name == "train":
            for k in ("encoder_widths", "decoder_widths"):
                if k in section:
                    section[k] = tuple(section[k])
        kwargs[name] = _build(cls, section, name)
    kwargs["seed"] = seed
    kwargs["out_dir"] = str(data.pop("out_dir", "out"))
    kwargs["factor"] = int(data.pop("factor", 4))
    if data:
        raise ConfigError(f"unknown config keys: {sorted(data)}")
    return PipelineConfig(**kwargs)


def _apply_set(data, assignment):
    if "=" not in assignment:
        raise ConfigError(f"--set needs key=value, got {assignment!r}")
    key, _, raw = assignment.partition("=")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = data
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {p} is not a section")
    node[parts[-1]] = value


def load_config(args):
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise IoFailure(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from exc
    else:
        data = _as_plain(default_config())
    for assignment in args.set or []:
        _apply_set(data, assignment)
    if args.seed is not None:
        data["seed"] = args.seed
        data.setdefault("synth", {}).pop("seed", None)
        data.setdefault("train", {}).pop("seed", None)
    if args.out is not None:
        data["out_dir"] = args.out
    return config_from_dict(data)


def log(msg):
    print(msg, file=sys.stderr)


def _out_dir(cfg):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = out / "resolved_config.json"
    resolved.write_text(config_to_json(cfg))
    return out


def _need(path):
    if not path.exists():
        raise IoFailure(f"missing input {path}")
    return path


def _read_series(path, kind=None):
    series = read_grid_series(_need(path))
    if kind is not None and series.kind != kind:
        raise ConfigError(f"{path}: kind mismatch, expected {kind.name}, got {series.kind.name}")
    return series


# --- subcommands ---

def cmd_gen(cfg):
    out = _out_dir(cfg)
    if cfg.synth.nsteps % evaluation.STEPS_PER_DAY:
        log(f"warning: nsteps={cfg.synth.nsteps} is not a multiple of "
            f"{evaluation.STEPS_PER_DAY}; extremes evaluation will truncate")
    tp, vimd = synth.synth_tp_vimd(cfg.synth)
    write_grid_series(tp, out / "tp.ppg")
    write_grid_series(vimd, out / "vimd.ppg")
    st = field_stats(tp)
    sv = field_stats(vimd)
    log(f"generated {tp.nsteps} steps on {tp.nlat}x{tp.nlon}")
    print(f"gen ok tp_mean={st.mean:.6g} tp_max={st.max:.6g} wet_fraction={st.wet_fraction:.6g} "
          f"vimd_mean={sv.mean:.6g} vimd_std={sv.std:.6g}")
    return 0


def cmd_train_pp(cfg):
    out = _out_dir(cfg)
    tp = _read_series(out / "tp.ppg", FieldKind.TP)
    vimd = _read_series(out / "vimd.ppg", FieldKind.VIMD)
    try:
        model, history = blend.train_pp(tp, vimd, cfg.train)
    except NonFiniteLoss as exc:
        if exc.model is not None:
            netcore.save_model(exc.model, out / "model.ppm")
            exc.history.to_csv(out / "history.csv")
            log(f"divergence: best checkpoint from epoch {exc.history.best_epoch} written")
        raise
    netcore.save_model(model, out / "model.ppm")
    history.to_csv(out / "history.csv")
    best = history.records[history.best_epoch]
    log(f"trained {len(history.records)} epochs; best epoch {history.best_epoch}")
    print(f"ks={best.holdout_ks:.6g} mae={best.holdout_mae:.6g}")
    return 0


def cmd_encode(cfg):
    out = _out_dir(cfg)
    tp = _read_series(out / "tp.ppg", FieldKind.TP)
    vimd = _read_series(out / "vimd.ppg", FieldKind.VIMD)
    model = netcore.load_model(_need(out / "model.ppm"))
    pp = blend.encode(model, tp, vimd)
    write_grid_series(pp, out / "pp.ppg")
    ks = blend.ks_statistic(pp.values[:, pp.mask])
    print(f"encode ok steps={pp.nsteps} ks={ks:.6g}")
    return 0


def cmd_decode(cfg, input_name="pp.ppg", output_name="tp_decoded.ppg"):
    out = _out_dir(cfg)
    pp = _read_series(out / input_name)
    model = netcore.load_model(_need(out / "model.ppm"))
    tp = blend.decode(model, pp)  # raises MalformedInput on kind mismatch
    write_grid_series(tp, out / output_name)
    print(f"decode ok steps={tp.nsteps} min={float(tp.values.min()):.6g}")
    return 0


def cmd_make_pairs(cfg, input_name="pp.ppg"):
    out = _out_dir(cfg)
    hr = _read_series(out / input_name)
    pairs = spectral.make_pairs(hr, cfg.factor, cfg.lowpass)
    stem = Path(input_name).stem
    write_grid_series(pairs.hr, out / f"{stem}_hr.ppg")
    write_grid_series(pairs.lr, out / f"{stem}_lr.ppg")
    print(f"make-pairs ok factor={cfg.factor} lr={pairs.lr.nlat}x{pairs.lr.nlon}")
    return 0


def cmd_train_ds(cfg, input_stem="pp"):
    out = _out_dir(cfg)
    hr = _read_series(out / f"{input_stem}_hr.ppg")
    lr = _read_series(out / f"{input_stem}_lr.ppg")
    pairs = spectral.PairSet(hr=hr, lr=lr, factor=cfg.factor)
    model = downscale.train_downscaler(pairs, cfg.downscaler.radius, cfg.downscaler.lam)
    downscale.save_ds_model(model, out / "dsmodel.ppd")
    print(f"train-ds ok offsets={cfg.factor ** 2} radius={cfg.downscaler.radius}")
    return 0


def cmd_downscale(cfg, input_name="pp_lr.ppg", output_name="pp_sr.ppg"):
    out = _out_dir(cfg)
    lr = _read_series(out / input_name)
    model = downscale.load_ds_model(_need(out / "dsmodel.ppd"))
    sr = downscale.apply_downscaler(model, lr)
    write_grid_series(sr, out / output_name)
    print(f"downscale ok hr={sr.nlat}x{sr.nlon} steps={sr.nsteps}")
    return 0


def cmd_evaluate(cfg):
    out = _out_dir(cfg)
    tp = _read_series(out / "tp.ppg", FieldKind.TP)
    vimd = _read_series(out / "vimd.ppg", FieldKind.VIMD)
    model = netcore.load_model(_need(out / "model.ppm"))

    result = downscale.route_compare(
        tp, vimd, model, spec=cfg.lowpass, factor=cfg.factor,
        radius=cfg.downscaler.radius, lam=cfg.downscaler.lam,
        train_fraction=cfg.downscaler.train_fraction)
    ref = result.reference
    log(f"routes reconstructed on {ref.nsteps} held-out steps")

    whole_days = ref.nsteps // evaluation.STEPS_PER_DAY * evaluation.STEPS_PER_DAY
    if whole_days != ref.nsteps:
        log(f"warning: truncating extremes evaluation to {whole_days} steps")
    day_ref = slice_steps(ref, 0, whole_days)
    day_routes = {
        "direct": slice_steps(result.direct, 0, whole_days),
        "via_pp": slice_steps(result.via_pp, 0, whole_days),
    }
    daily_ref = day_ref.values.astype(np.float64).reshape(
        -1, evaluation.STEPS_PER_DAY, ref.nlat, ref.nlon).sum(axis=1)[:, ref.mask]
    threshold = float(np.quantile(daily_ref.ravel(), cfg.eval.extreme_quantile))
    extremes = {"reference": evaluation.extreme_day_count(day_ref, threshold)}
    for label, series in day_routes.items():
        extremes[label] = evaluation.extreme_day_count(series, threshold)

    ref_sample = ref.values[:, ref.mask].ravel()
    qq = {
        "direct": evaluation.qq_data(result.direct.values[:, ref.mask].ravel(),
                                     ref_sample, QQ_PROBS),
        "via_pp": evaluation.qq_data(result.via_pp.values[:, ref.mask].ravel(),
                                     ref_sample, QQ_PROBS),
    }

    psd = {}
    if ref.nsteps >= cfg.eval.segment_length:
        for (ilat, ilon) in cfg.eval.probe_cells:
            for label, series in (("reference", ref), ("direct", result.direct),
                                  ("via_pp", result.via_pp)):
                psd[f"{label}_r{ilat}c{ilon}"] = evaluation.temporal_psd(
                    series, (ilat, ilon), cfg.eval.segment_length)
    else:
        log(f"warning: {ref.nsteps} held-out steps < segment length "
            f"{cfg.eval.segment_length}; skipping PSD")

    brick = replace(cfg.lowpass, cutoff=1.0 / cfg.factor, taper=spectral.BRICKWALL)
    tp_band = spectral.lowpass_series(ref, brick)
    pp_band = spectral.lowpass_series(result.pp_reference, brick)
    pp_band_dec = blend.decode(model, pp_band)
    gibbs = {
        "direct": spectral.gibbs_metrics_series(ref, result.direct.values),
        "via_pp": spectral.gibbs_metrics_series(ref, result.via_pp.values),
        "tp_bandlimited": spectral.gibbs_metrics_series(ref, tp_band.values),
        "pp_bandlimited_decoded": spectral.gibbs_metrics_series(ref, pp_band_dec.values),
    }

    summary = _summaries(cfg, model, result, qq, extremes, threshold)
    report_dir = out / "report"
    evaluation.emit_report(report_dir, psd=psd, qq=qq, extremes=extremes,
                           gibbs=gibbs, summary=summary, charts=False)
    print(f"evaluate ok qq_dev_via_pp={summary['qq_max_dev_via_pp']:.6g} "
          f"qq_dev_direct={summary['qq_max_dev_direct']:.6g} "
          f"extreme_abs_err_via_pp={summary['extreme_abs_err_via_pp']:.6g} "
          f"extreme_abs_err_direct={summary['extreme_abs_err_direct']:.6g}")
    return 0


def _summaries(cfg, model, result, qq, extremes, threshold):
    ref = result.reference
    sel = QQ_PROBS <= 0.99
    q99 = float(qq["via_pp"].q_reference[QQ_PROBS.searchsorted(0.99)])
    summary = {
        "extreme_threshold_mm": threshold,
        "extreme_threshold_flag_mm": cfg.eval.threshold_mm,
        "qq_ref_q99": q99,
        "mae_reference_target": blend.MAE_REFERENCE_TARGET,
        "train_steps": result.train_steps,
        "held_out_steps": ref.nsteps,
    }
    for label in ("direct", "via_pp"):
        dev = np.abs(qq[label].q_candidate[sel] - qq[label].q_reference[sel])
        summary[f"qq_max_dev_{label}"] = float(dev.max())
        err = abs(int(extremes[label].counts.sum()) - int(extremes["reference"].counts.sum()))
        summary[f"extreme_total_{label}"] = int(extremes[label].counts.sum())
        summary[f"extreme_abs_err_{label}"] = err
    summary["extreme_total_reference"] = int(extremes["reference"].counts.sum())

    # round-trip reconstruction quality on the held-out block
    pp = result.pp_reference
    decoded = blend.decode(model, pp)
    err_raw = np.abs(decoded.values[:, ref.mask].astype(np.float64)
                     - ref.values[:, ref.mask].astype(np.float64))
    tp_n = blend.normalize_tp(ref.values[:, ref.mask].astype(np.float64), model.norm.tp_scale)
    dec_n = blend.normalize_tp(decoded.values[:, ref.mask].astype(np.float64),
                               model.norm.tp_scale)
    summary["roundtrip_mae_mm"] = float(err_raw.mean())
    summary["roundtrip_mae_normalized"] = float(np.abs(dec_n - tp_n).mean())
    summary["ks_pp_held_out"] = blend.ks_statistic(pp.values[:, pp.mask])
    summary["tp_q99_mm"] = float(np.quantile(ref.values[:, ref.mask].astype(np.float64), 0.99))
    return summary


def cmd_report(cfg):
    out = _out_dir(cfg)
    report_dir = out / "report"
    if not report_dir.exists():
        raise IoFailure(f"missing input {report_dir} (run evaluate first)")
    tables = evaluation.read_report_tables(report_dir)
    written = evaluation.emit_report(report_dir, tables=False, **tables)
    print(f"report ok files={len(list(report_dir.iterdir()))}")
    return 0


def cmd_run_all(cfg):
    for step in (cmd_gen, cmd_train_pp, cmd_encode, cmd_make_pairs,
                 cmd_train_ds, cmd_downscale,
                 lambda c: cmd_decode(c, "pp_sr.ppg", "tp_from_pp_sr.ppg"),
                 cmd_evaluate, cmd_report):
        rc = step(cfg)
        if rc:
            return rc
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="pseudoprecip",
        description="Gaussian proxy blending / band-limiting / downscaling pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen": (cmd_gen, "generate synthetic TP/VIMD series"),
        "train-pp": (cmd_train_pp, "train the encoder/decoder blend"),
        "encode": (cmd_encode, "blend TP+VIMD into the proxy field"),
        "decode": (cmd_decode, "reconstruct TP from a proxy series"),
        "make-pairs": (cmd_make_pairs, "band-limit and subsample HR/LR pairs"),
        "train-ds": (cmd_train_ds, "fit the patch-ridge downscaler"),
        "downscale": (cmd_downscale, "apply the downscaler to an LR series"),
        "evaluate": (cmd_evaluate, "run the route comparison and metrics"),
        "report": (cmd_report, "render SVG charts and the file index"),
        "run-all": (cmd_run_all, "run every stage in order"),
    }
    for name, (_, help_) in commands.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config entry (repeatable)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--seed", type=int, help="global seed (overrides config)")
        if name == "decode":
            p.add_argument("--input", default="pp.ppg")
            p.add_argument("--output", default="tp_decoded.ppg")
        if name == "make-pairs":
            p.add_argument("--input", default="pp.ppg")
        if name == "train-ds":
            p.add_argument("--input-stem", default="pp")
        if name == "downscale":
            p.add_argument("--input", default="pp_lr.ppg")
            p.add_argument("--output", default="pp_sr.ppg")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args)
        fn = commands[args.command][0]
        if args.command == "decode":
            return fn(cfg, args.input, args.output)
        if args.command == "make-pairs":
            return fn(cfg, args.input)
        if args.command == "train-ds":
            return fn(cfg, args.input_stem)
        if args.command == "downscale":
            return fn(cfg, args.input, args.output)
        return fn(cfg)
    except (IoFailure, InsufficientData) as exc:
        log(f"error: {exc}")
        return EXIT_MISSING
    except (NonFiniteLoss, SingularSystem) as exc:
        log(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except PseudoPrecipError as exc:
        log(f"invalid input: {exc}")
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
