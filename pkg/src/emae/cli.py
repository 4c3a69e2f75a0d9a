"""Command-line interface.

Subcommands: pretrain, finetune, eval, sweep, synth, mask-demo. Every value
can come from flags, from a `--config` file of key=value lines, or from the
defaults, with that precedence. Exit codes: 0 ok, 2 usage error, 3 file
format error, 4 degenerate loss.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .curves import emit_curves
from .data import SignalDataset, SynthConfig, load_dataset, save_dataset, synth_generate
from .errors import (
    CheckpointFormatError,
    ContractError,
    DatasetFormatError,
    DegenerateLossError,
    FormatError,
    ModeError,
    ShapeError,
    WeightImportError,
)
from .losses import rmse_mm
from .masking import MaskSpec, generate_mask
from .model import (
    DECODER_NAMES,
    EncoderConfig,
    decoder_config,
    init_pretrain_model,
    init_scratch_model,
    load_checkpoint,
    save_checkpoint,
)
from .training import (
    DEFAULT_SPLIT_SEED,
    RunLog,
    TrainConfig,
    evaluate,
    finetune,
    pretrain,
    serial_mode,
    split_dataset,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_DEGENERATE = 4


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class Opt:
    """One CLI option: shared schema for flags and config-file keys."""

    name: str
    convert: Callable[[str], object]
    default: object = None
    help: str = ""
    required: bool = False
    is_flag: bool = False

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in text.split(",") if tok.strip())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


_CONFIG_OPT = Opt("config", str, help="key=value config file; flags override it")

_ENCODER_OPTS = [
    Opt("embed-dim", int, 32, "token embedding width"),
    Opt("layers", int, 2, "encoder transformer blocks"),
    Opt("heads", int, 4, "attention heads"),
    Opt("mlp-ratio", float, 2.0, "transformer MLP width / embed width"),
    Opt("temporal-filters", int, 8, "feature maps of the temporal convolution"),
    Opt("temporal-kernel", int, 8, "temporal convolution kernel width"),
    Opt("temporal-stride", int, 8, "temporal convolution stride"),
]

_TRAIN_COMMON = [
    Opt("batch-size", int, 64, "samples per optimizer step"),
    Opt("base-lr", float, 1e-4, "base learning rate"),
    Opt("lr-factor", float, 0.1, "learning-rate decay factor"),
    Opt("seed", int, 0, "run seed (init, masks, shuffling)"),
    Opt("split-seed", int, DEFAULT_SPLIT_SEED, "70/15/15 split seed"),
]

_PRETRAIN_OPTS = [
    Opt("data", str, required=True, help="input .eegd dataset"),
    Opt("out", str, required=True, help="output .emae checkpoint"),
    Opt("mask-ratio", float, 0.4, "fraction of matrix elements to mask, in (0, 1]"),
    Opt("decoder", str, "tb2", f"decoder kind, one of {'/'.join(DECODER_NAMES)}"),
    Opt("loss", str, "cosine", "reconstruction objective: cosine or mse"),
    Opt("epochs", int, 30, "pre-training epochs"),
    Opt("lr-step", int, 10, "epochs between learning-rate decays"),
    Opt("csv", str, help="loss CSV path (default: pretrain_loss.csv next to --out)"),
    *_TRAIN_COMMON,
    *_ENCODER_OPTS,
    _CONFIG_OPT,
]

_FINETUNE_OPTS = [
    Opt("data", str, required=True, help="input .eegd dataset"),
    Opt("out", str, required=True, help="output .emae fine-tuned model"),
    Opt("ckpt", str, help="pre-trained checkpoint to start from"),
    Opt("scratch", _bool, False, "train the no-pretraining baseline", is_flag=True),
    Opt("epochs", int, 15, "fine-tuning epochs"),
    Opt("lr-step", int, 6, "epochs between learning-rate decays"),
    Opt("csv", str, help="loss CSV path (default: finetune_loss.csv next to --out)"),
    Opt("curves", str, help="optional SVG path for this run's loss curve"),
    *_TRAIN_COMMON,
    *_ENCODER_OPTS,
    _CONFIG_OPT,
]

_EVAL_OPTS = [
    Opt("data", str, required=True, help="input .eegd dataset"),
    Opt("model", str, help="fine-tuned .emae model to evaluate"),
    Opt("baseline", str, help="evaluate a baseline instead of a model: 'mean'"),
    Opt("split", str, "test", "which split to score: train/val/test/all"),
    Opt("split-seed", int, DEFAULT_SPLIT_SEED, "70/15/15 split seed"),
    Opt("batch-size", int, 64, "evaluation batch size"),
    _CONFIG_OPT,
]

_SWEEP_OPTS = [
    Opt("data", str, required=True, help="input .eegd dataset"),
    Opt("out-dir", str, "sweep_out", "directory for sweep.csv / summary / curves"),
    Opt("ratios", _float_list, tuple(round(0.1 * k, 1) for k in range(1, 10)),
        "comma-separated masking ratios"),
    Opt("decoders", _str_list, ("mlp", "tb1", "tb2"), "comma-separated decoder kinds"),
    Opt("runs", int, 5, "fine-tuning runs per grid cell"),
    Opt("jobs", int, 1, "parallel sweep cells (EMAE_SERIAL=1 forces 1)"),
    Opt("loss", str, "cosine", "reconstruction objective: cosine or mse"),
    Opt("pretrain-epochs", int, 30, "pre-training epochs per cell"),
    Opt("finetune-epochs", int, 15, "fine-tuning epochs per cell"),
    Opt("pretrain-lr-step", int, 10, "pre-training lr decay step"),
    Opt("finetune-lr-step", int, 6, "fine-tuning lr decay step"),
    *_TRAIN_COMMON,
    *_ENCODER_OPTS,
    _CONFIG_OPT,
]

_SYNTH_OPTS = [
    Opt("out", str, required=True, help="output .eegd dataset"),
    Opt("n", int, 2000, "number of samples"),
    Opt("channels", int, 128, "signal channels C"),
    Opt("time", int, 500, "samples per channel T"),
    Opt("noise-scale", float, 1.0, "pink-noise level relative to the planted tones"),
    Opt("signal-channels", _int_list, (), "channels carrying label structure (default: auto)"),
    Opt("x-max", float, 400.0, "label bound for x, mm"),
    Opt("y-max", float, 300.0, "label bound for y, mm"),
    Opt("seed", int, 0, "generator seed"),
    _CONFIG_OPT,
]

_MASK_DEMO_OPTS = [
    Opt("rows", int, 8, "matrix rows m"),
    Opt("cols", int, 8, "matrix cols n"),
    Opt("ratio", float, 0.4, "masking ratio, in (0, 1]"),
    Opt("seed", int, 0, "mask stream seed"),
    Opt("counter", int, 0, "mask stream draw counter"),
    _CONFIG_OPT,
]


def _add_options(parser: argparse.ArgumentParser, opts: Sequence[Opt]) -> None:
    for o in opts:
        suffix = ""
        if o.required:
            suffix = " (required)"
        elif o.default is not None and not o.is_flag:
            suffix = f" (default: {o.default})"
        if o.is_flag:
            parser.add_argument(f"--{o.name}", dest=o.dest, action="store_const",
                                const="true", default=None, help=o.help + " (default: off)")
        else:
            parser.add_argument(f"--{o.name}", dest=o.dest, default=None,
                                metavar="V", help=o.help + suffix)


def _read_config_file(path: str, known: dict[str, Opt]) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{ln}: expected key=value, got {stripped!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key not in known:
            raise UsageError(f"{path}:{ln}: unknown key {key!r}")
        values[key] = value.strip()
    return values


def _resolve(opts: Sequence[Opt], ns: argparse.Namespace) -> dict[str, object]:
    """Merge flag values, config-file values, and defaults (that precedence)."""
    by_name = {o.name: o for o in opts}
    file_values: dict[str, str] = {}
    raw_config = getattr(ns, "config", None)
    if raw_config is not None:
        file_values = _read_config_file(raw_config, by_name)
    resolved: dict[str, object] = {}
    for o in opts:
        raw = getattr(ns, o.dest)
        if raw is None and o.name in file_values:
            raw = file_values[o.name]
        if raw is None:
            if o.required:
                raise UsageError(f"missing required option --{o.name}")
            resolved[o.dest] = o.default
            continue
        try:
            resolved[o.dest] = o.convert(raw)
        except (TypeError, ValueError) as err:
            raise UsageError(f"bad value for --{o.name}: {err}")
    return resolved


def _encoder_config(v: dict, dataset: SignalDataset) -> EncoderConfig:
    return EncoderConfig(
        channels=dataset.channels,
        time_len=dataset.time_len,
        temporal_kernel=v["temporal_kernel"],
        temporal_stride=v["temporal_stride"],
        temporal_filters=v["temporal_filters"],
        embed_dim=v["embed_dim"],
        num_layers=v["layers"],
        num_heads=v["heads"],
        mlp_ratio=v["mlp_ratio"],
    )


def _progress(kind: str):
    def report(rec):
        print(
            f"[{kind}] epoch {rec.epoch} lr={rec.lr:g} train={rec.train_loss:.6g} "
            f"val={rec.val_loss:.6g} ({rec.wall_ms} ms)",
            file=sys.stderr,
        )

    return report


def _check_ratio(ratio: float) -> None:
    if not (0.0 < ratio <= 1.0):
        raise UsageError(f"--mask-ratio must be in (0, 1], got {ratio}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_pretrain(v: dict) -> int:
    _check_ratio(v["mask_ratio"])
    if v["decoder"] not in DECODER_NAMES:
        raise UsageError(f"--decoder must be one of {DECODER_NAMES}, got {v['decoder']!r}")
    dataset = load_dataset(v["data"])
    enc = _encoder_config(v, dataset)
    dec = decoder_config(v["decoder"], enc.embed_dim)
    bundle = init_pretrain_model(enc, dec, seed=v["seed"], mask_ratio=v["mask_ratio"])
    config = TrainConfig.pretrain_defaults(
        base_lr=v["base_lr"],
        batch_size=v["batch_size"],
        lr_step_size=v["lr_step"],
        lr_decay_factor=v["lr_factor"],
        epochs=v["epochs"],
        seed=v["seed"],
        mask_ratio=v["mask_ratio"],
        decoder=v["decoder"],
        split_seed=v["split_seed"],
        loss=v["loss"],
    )
    _, log = pretrain(dataset, bundle, config, checkpoint_path=v["out"],
                      progress=_progress("pretrain"))
    csv_path = v["csv"] or str(Path(v["out"]).parent / "pretrain_loss.csv")
    log.write_csv(csv_path)
    return EXIT_OK


def cmd_finetune(v: dict) -> int:
    if bool(v["ckpt"]) == bool(v["scratch"]):
        raise UsageError("exactly one of --ckpt or --scratch is required")
    dataset = load_dataset(v["data"])
    config = TrainConfig.finetune_defaults(
        base_lr=v["base_lr"],
        batch_size=v["batch_size"],
        lr_step_size=v["lr_step"],
        lr_decay_factor=v["lr_factor"],
        epochs=v["epochs"],
        seed=v["seed"],
        split_seed=v["split_seed"],
    )
    if v["ckpt"]:
        bundle = load_checkpoint(v["ckpt"])
    else:
        bundle = init_scratch_model(_encoder_config(v, dataset), seed=v["seed"])
    model, log = finetune(bundle, dataset, config, progress=_progress("finetune"))
    save_checkpoint(model, v["out"])
    csv_path = v["csv"] or str(Path(v["out"]).parent / "finetune_loss.csv")
    log.write_csv(csv_path)
    if v["curves"]:
        emit_curves([log], v["curves"])
    print(f"rmse_mm={log.final_metric!r}")
    return EXIT_OK


def cmd_eval(v: dict) -> int:
    if bool(v["model"]) == bool(v["baseline"]):
        raise UsageError("exactly one of --model or --baseline is required")
    if v["baseline"] not in (None, "mean"):
        raise UsageError(f"unknown baseline {v['baseline']!r}; only 'mean' is supported")
    if v["split"] not in ("train", "val", "test", "all"):
        raise UsageError(f"--split must be train/val/test/all, got {v['split']!r}")
    dataset = load_dataset(v["data"])
    if v["split"] == "all":
        subset = dataset
        train = dataset
    else:
        train, val, test = split_dataset(dataset, v["split_seed"])
        subset = {"train": train, "val": val, "test": test}[v["split"]]
    if v["baseline"]:
        centroid = train.labels.mean(axis=0)
        pred = np.broadcast_to(centroid, subset.labels.shape)
        value = rmse_mm(pred, subset.labels).value
    else:
        bundle = load_checkpoint(v["model"])
        value = evaluate(bundle, subset, v["batch_size"])
    print(f"rmse_mm={value!r}")
    return EXIT_OK


def _sweep_cell(args: tuple) -> tuple:
    """One (ratio, decoder, run) cell: pretrain then fine-tune, fully seeded.

    Top-level so it can cross a process boundary under --jobs > 1.
    """
    (data_path, enc_kwargs, ratio, decoder_name, run, seed, v) = args
    dataset = load_dataset(data_path)
    enc = EncoderConfig(**enc_kwargs)
    dec = decoder_config(decoder_name, enc.embed_dim)
    bundle = init_pretrain_model(enc, dec, seed=seed, mask_ratio=ratio)
    pre_cfg = TrainConfig.pretrain_defaults(
        base_lr=v["base_lr"],
        batch_size=v["batch_size"],
        lr_step_size=v["pretrain_lr_step"],
        lr_decay_factor=v["lr_factor"],
        epochs=v["pretrain_epochs"],
        seed=seed,
        mask_ratio=ratio,
        decoder=decoder_name,
        split_seed=v["split_seed"],
        loss=v["loss"],
    )
    bundle, _ = pretrain(dataset, bundle, pre_cfg)
    fit_cfg = TrainConfig.finetune_defaults(
        base_lr=v["base_lr"],
        batch_size=v["batch_size"],
        lr_step_size=v["finetune_lr_step"],
        lr_decay_factor=v["lr_factor"],
        epochs=v["finetune_epochs"],
        seed=seed,
        decoder=decoder_name,
        split_seed=v["split_seed"],
    )
    _, log = finetune(bundle, dataset, fit_cfg)
    return ratio, decoder_name, run, seed, log


def cmd_sweep(v: dict) -> int:
    for ratio in v["ratios"]:
        _check_ratio(ratio)
    for name in v["decoders"]:
        if name not in DECODER_NAMES:
            raise UsageError(f"unknown decoder {name!r} in --decoders")
    if v["runs"] < 1:
        raise UsageError("--runs must be >= 1")
    dataset = load_dataset(v["data"])  # validates the file before any training
    enc = _encoder_config(v, dataset)
    enc_kwargs = dict(
        channels=enc.channels,
        time_len=enc.time_len,
        temporal_kernel=enc.temporal_kernel,
        temporal_stride=enc.temporal_stride,
        temporal_filters=enc.temporal_filters,
        embed_dim=enc.embed_dim,
        num_layers=enc.num_layers,
        num_heads=enc.num_heads,
        mlp_ratio=enc.mlp_ratio,
    )
    jobs = 1 if os.environ.get("EMAE_SERIAL") == "1" else max(1, v["jobs"])
    cells = [
        (v["data"], enc_kwargs, ratio, name, run, v["seed"] + run, v)
        for ratio in v["ratios"]
        for name in v["decoders"]
        for run in range(v["runs"])
    ]

    results: dict[tuple, tuple] = {}
    failures: list[str] = []
    if jobs == 1:
        outcomes = []
        for cell in cells:
            try:
                outcomes.append((cell, _sweep_cell(cell)))
            except Exception as err:  # record and continue with the rest of the grid
                outcomes.append((cell, err))
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_cell, cell) for cell in cells]
            outcomes = []
            for cell, fut in zip(cells, futures):
                try:
                    outcomes.append((cell, fut.result()))
                except Exception as err:
                    outcomes.append((cell, err))
    for cell, outcome in outcomes:
        _, _, ratio, name, run, seed, _ = cell
        if isinstance(outcome, Exception):
            failures.append(f"ratio={ratio} decoder={name} run={run}: {outcome}")
            print(f"[sweep] cell failed: {failures[-1]}", file=sys.stderr)
        else:
            results[(ratio, name, run)] = outcome

    out_dir = Path(v["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = ["ratio,decoder,run,seed,rmse_mm"]
    summary = ["ratio,decoder,runs,mean_rmse_mm,std_rmse_mm"]
    curve_logs: list[RunLog] = []
    for ratio in v["ratios"]:
        for name in v["decoders"]:
            cell_rmses = []
            for run in range(v["runs"]):
                hit = results.get((ratio, name, run))
                if hit is None:
                    continue
                _, _, _, seed, log = hit
                rows.append(f"{ratio!r},{name},{run},{seed},{log.final_metric!r}")
                cell_rmses.append(log.final_metric)
                if run == 0:
                    curve_logs.append(log)
            if cell_rmses:
                mean = float(np.mean(cell_rmses))
                std = float(np.std(cell_rmses, ddof=1)) if len(cell_rmses) > 1 else 0.0
                summary.append(f"{ratio!r},{name},{len(cell_rmses)},{mean!r},{std!r}")
    (out_dir / "sweep.csv").write_bytes(("\n".join(rows) + "\n").encode("ascii"))
    (out_dir / "sweep_summary.csv").write_bytes(("\n".join(summary) + "\n").encode("ascii"))
    if curve_logs:
        emit_curves(curve_logs, out_dir / "sweep_curves.svg")
    if failures:
        (out_dir / "sweep_failures.txt").write_text("\n".join(failures) + "\n")
        return 1
    return EXIT_OK


def cmd_synth(v: dict) -> int:
    config = SynthConfig(
        n=v["n"],
        channels=v["channels"],
        time_len=v["time"],
        noise_scale=v["noise_scale"],
        signal_channels=tuple(v["signal_channels"]),
        label_bounds=(v["x_max"], v["y_max"]),
        seed=v["seed"],
    )
    save_dataset(synth_generate(config), v["out"])
    return EXIT_OK


def cmd_mask_demo(v: dict) -> int:
    if not (0.0 < v["ratio"] <= 1.0):
        raise UsageError(f"--ratio must be in (0, 1], got {v['ratio']}")
    spec = MaskSpec(v["rows"], v["cols"], v["ratio"], rng_seed=v["seed"],
                    draw_counter=v["counter"])
    mask = generate_mask(spec)
    grid = mask.as_matrix().astype(int)
    for row in grid:
        print(" ".join(str(cell) for cell in row))
    print(f"masked={len(mask)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point

_COMMANDS = {
    "pretrain": ("MAE pre-training on masked signal matrices", _PRETRAIN_OPTS, cmd_pretrain),
    "finetune": ("supervised fine-tuning for gaze position", _FINETUNE_OPTS, cmd_finetune),
    "eval": ("report test RMSE of a fine-tuned model", _EVAL_OPTS, cmd_eval),
    "sweep": ("masking-ratio x decoder grid of pretrain+finetune runs", _SWEEP_OPTS, cmd_sweep),
    "synth": ("generate a synthetic benchmark dataset", _SYNTH_OPTS, cmd_synth),
    "mask-demo": ("print one mask as a 0/1 grid", _MASK_DEMO_OPTS, cmd_mask_demo),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emae",
        description="Masked-autoencoder pre-training and fine-tuning for signal matrices.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (help_text, opts, fn) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        _add_options(p, opts)
        p.set_defaults(_opts=opts, _fn=fn)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exit_:  # argparse handles --help and bad flags
        code = exit_.code or 0
        return int(code) if isinstance(code, int) else EXIT_USAGE
    try:
        values = _resolve(ns._opts, ns)
        return ns._fn(values)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ContractError, ShapeError, ModeError, WeightImportError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as err:
        print(f"error: file not found: {err.filename}", file=sys.stderr)
        return EXIT_FORMAT
    except FormatError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FORMAT
    except DegenerateLossError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DEGENERATE


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
