"""Command-line entry point: ``sefpnet {train,enhance,evaluate,ablate,params,spectrogram,simulate}``.

Exit codes: 0 success, 2 user or configuration error, 3 numerical failure.
"""

import argparse
import importlib
import json
import logging
import os
import sys

import numpy as np
import torch

from ._validation import CheckpointError, ConfigError, NonFiniteLossError, ShapeError
from .checkpoint import file_sha256, load_model
from .complexity import REFERENCE_TOLERANCE, REFERENCE_PARAMS, count_parameters, within_reference_budget
from .config import build, load_layers
from .data import (
    CONDITIONS,
    ManifestError,
    MixtureDataset,
    SimConfig,
    expand_alternate_targets,
    export_dataset,
    load_manifest,
    make_synthetic_dataset,
)
from .dsp import StftConfig, read_wav, stft, write_wav
from .objectives import evaluate
from .trainer import Trainer, run_ablation

logger = logging.getLogger("sefpnet")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


def _config_args(p):
    p.add_argument("--config", help="YAML or JSON configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a dotted config key (repeatable)")
    p.add_argument("--seed", type=int, help="shortcut for --set train.seed=N")
    p.add_argument("--device", help="torch device, e.g. cpu or cuda")


def _effective(args):
    overrides = list(args.set)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"train.seed={args.seed}")
    if getattr(args, "device", None):
        overrides.append(f"device={args.device}")
    if getattr(args, "run_dir", None):
        overrides.append(f"run_dir={args.run_dir}")
    tree = load_layers(args.config, overrides)
    device = tree["device"]
    if device.startswith("cuda") and not torch.cuda.is_available():
        raise ConfigError(f"device: {device} requested but CUDA is not available")
    return tree


def _datasets(data, sample_rate):
    if data.train_manifest:
        if not os.path.exists(data.train_manifest):
            raise ConfigError(f"data.train_manifest: file not found: {data.train_manifest}")
        train = load_manifest(data.train_manifest, resample=data.resample)
    elif data.synthetic_train > 0:
        train = make_synthetic_dataset(data.synthetic_train, data.condition, data.seed, data.sim)
    else:
        raise ConfigError("data.train_manifest: no training data (set data.train_manifest or data.synthetic_train)")
    if data.dev_manifest:
        if not os.path.exists(data.dev_manifest):
            raise ConfigError(f"data.dev_manifest: file not found: {data.dev_manifest}")
        dev = load_manifest(data.dev_manifest, resample=data.resample)
    elif data.synthetic_dev > 0:
        dev = make_synthetic_dataset(data.synthetic_dev, data.condition, data.seed + 1, data.sim)
    else:
        dev = MixtureDataset()
    if data.alternate_targets:
        train = expand_alternate_targets(train)
    return train, dev


def cmd_train(args):
    tree = _effective(args)
    model_cfg, train_cfg, data_cfg = build(tree)
    train_set, dev_set = _datasets(data_cfg, model_cfg.stft.sample_rate)
    run_dir = tree["run_dir"]
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w") as fh:
        json.dump(tree, fh, indent=2, sort_keys=True)
    resume = os.path.join(run_dir, "checkpoint.pt")
    if args.resume and os.path.exists(resume):
        trainer = Trainer.from_checkpoint(resume, train_set, dev_set, run_dir, train_cfg, device=tree["device"])
        trainer.effective_config = tree
    else:
        log_path = os.path.join(run_dir, "train_log.jsonl")
        if os.path.exists(log_path):
            os.remove(log_path)
        trainer = Trainer(model_cfg, train_cfg, train_set, dev_set, run_dir, effective_config=tree, device=tree["device"])
    trainer.train()
    print(json.dumps({"run_dir": run_dir, "epochs": trainer.epoch, "steps": trainer.step_count,
                      "checkpoint_sha256": file_sha256(trainer.checkpoint_path)}))
    return EXIT_OK


def _load(checkpoint):
    model, payload = load_model(checkpoint)
    return model, {"checkpoint": os.path.abspath(checkpoint), "checkpoint_sha256": payload["sha256"],
                   "config": payload.get("extra", {}).get("effective_config") or {"model": payload["model_config"]}}


def cmd_enhance(args):
    model, provenance = _load(args.checkpoint)
    sr = model.config.stft.sample_rate
    noisy = read_wav(args.noisy, resample=args.resample, sample_rate=sr)
    enroll = read_wav(args.enroll, resample=args.resample, sample_rate=sr)
    with torch.no_grad():
        out = model(torch.as_tensor(noisy.samples, dtype=torch.float32), torch.as_tensor(enroll.samples, dtype=torch.float32))
    write_wav(args.out, out.double().numpy(), sr)
    with open(args.out + ".json", "w") as fh:
        json.dump({**provenance, "noisy": args.noisy, "enrollment": args.enroll, "samples": len(noisy)}, fh, indent=2)
    return EXIT_OK


def _load_hooks(specs):
    hooks = {}
    for spec in specs:
        name, _, target = spec.partition("=")
        module, _, attr = target.partition(":")
        if not (name and module and attr):
            raise ConfigError(f"--hook expects name=module:function, got {spec!r}")
        try:
            hooks[name] = getattr(importlib.import_module(module), attr)
        except (ImportError, AttributeError) as exc:
            raise ConfigError(f"--hook {name}: cannot import {target}: {exc}") from exc
    return hooks


def cmd_evaluate(args):
    model, provenance = _load(args.checkpoint)
    hooks = _load_hooks(args.hook)
    try:
        dataset = load_manifest(args.manifest, strict=False, resample=args.resample)
    except (OSError, ManifestError) as exc:
        raise ConfigError(f"manifest: {exc}") from exc
    report = evaluate(model, dataset, hooks)
    extra = dict(provenance)
    extra["failures"] = [{"id": i, "error": e} for i, e in dataset.errors]
    with open(args.out, "w") as fh:
        fh.write(report.to_json(extra, indent=2))
    return EXIT_OK


def cmd_ablate(args):
    tree = _effective(args)
    model_cfg, train_cfg, data_cfg = build(tree)
    train_set, dev_set = _datasets(data_cfg, model_cfg.stft.sample_rate)
    if not len(dev_set):
        raise ConfigError("data.dev_manifest: the ablation needs a dev set (or data.synthetic_dev > 0)")
    table = run_ablation(model_cfg, train_cfg, train_set, dev_set, variants=tuple(args.variants))
    table["_meta"]["config"] = tree
    out = args.out or os.path.join(tree["run_dir"], "ablation.json")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w") as fh:
        json.dump(table, fh, indent=2)
    for variant in args.variants:
        row = table[variant]
        print(f"{variant:14s} si_sdr={row['si_sdr']:.2f} dB params={row['params']} macs={row['macs']}")
    return EXIT_OK


def cmd_params(args):
    tree = _effective(args)
    model_cfg, train_cfg, _ = build(tree)
    model_cfg = model_cfg.with_variant(train_cfg.variant)
    seconds = args.seconds
    params, macs = count_parameters(model_cfg, int(seconds * model_cfg.stft.sample_rate))
    result = {
        "variant": train_cfg.variant,
        "params": params,
        "macs": macs,
        "macs_input_seconds": seconds,
        "reference_params": REFERENCE_PARAMS,
        "relative_difference": params / REFERENCE_PARAMS - 1,
        "within_tolerance": within_reference_budget(params),
        "tolerance": REFERENCE_TOLERANCE,
    }
    flag = "OK" if result["within_tolerance"] else "OUTSIDE"
    print(f"params {params} ({params / 1e6:.2f}M) vs 6.08M: {result['relative_difference']:+.1%} [{flag} +/-15%]")
    print(f"MACs {macs / 1e9:.2f}G for {seconds:g} s of input")
    if args.json:
        print(json.dumps(result))
    return EXIT_OK


def cmd_spectrogram(args):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not 1 <= len(args.wavs) <= 4:
        raise ConfigError("spectrogram takes between 1 and 4 WAV files")
    labels = args.labels or [os.path.basename(w) for w in args.wavs]
    if len(labels) != len(args.wavs):
        raise ConfigError("--labels must give one label per WAV file")
    cfg = StftConfig()
    fig, axes = plt.subplots(1, len(args.wavs), figsize=(4 * len(args.wavs), 3.5), squeeze=False)
    for ax, path, label in zip(axes[0], args.wavs, labels):
        wave = read_wav(path, resample=args.resample)
        mag = stft(wave, cfg).abs().numpy().T
        db = 20 * np.log10(np.maximum(mag, 1e-12))
        db = np.maximum(db, db.max() - args.dynamic_range)
        ax.imshow(db, origin="lower", aspect="auto", cmap="magma",
                  extent=(0, len(wave) / wave.sample_rate, 0, wave.sample_rate / 2))
        ax.set_title(label)
        ax.set_xlabel("time (s)")
    axes[0][0].set_ylabel("frequency (Hz)")
    fig.tight_layout()
    fig.savefig(args.out)
    plt.close(fig)
    return EXIT_OK


def cmd_simulate(args):
    sim = SimConfig()
    dataset = make_synthetic_dataset(args.n, args.condition, args.seed, sim)
    if args.alternate_targets:
        dataset = expand_alternate_targets(dataset)
    path = export_dataset(dataset, args.out_dir)
    print(json.dumps({"manifest": path, "n": len(dataset), "sha256": dataset.content_hash()}))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="sefpnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _config_args(p)
    p.add_argument("--run-dir")
    p.add_argument("--resume", action="store_true", help="continue from run_dir/checkpoint.pt if present")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance one noisy WAV given an enrollment WAV")
    p.add_argument("checkpoint")
    p.add_argument("noisy")
    p.add_argument("enroll")
    p.add_argument("out")
    p.add_argument("--resample", action="store_true", help="resample inputs that are not 8 kHz")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="score a checkpoint on a manifest")
    p.add_argument("checkpoint")
    p.add_argument("manifest")
    p.add_argument("out")
    p.add_argument("--hook", action="append", default=[], metavar="NAME=MODULE:FUNC",
                   help="external per-utterance scorer fn(est, ref, sample_rate) -> float")
    p.add_argument("--resample", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and compare model variants")
    _config_args(p)
    p.add_argument("--run-dir")
    p.add_argument("--variants", nargs="+", default=["CI_only", "CI_IFI", "SEF_PNet"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("params", help="print parameter count and MACs")
    _config_args(p)
    p.add_argument("--seconds", type=float, default=4.0, help="input length for the MAC estimate")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("spectrogram", help="render log-magnitude spectrograms side by side")
    p.add_argument("wavs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--labels", nargs="+")
    p.add_argument("--dynamic-range", type=float, default=80.0)
    p.add_argument("--resample", action="store_true")
    p.set_defaults(func=cmd_spectrogram)

    p = sub.add_parser("simulate", help="export a synthetic dataset as WAV files and a manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--condition", choices=CONDITIONS, default="two_spk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alternate-targets", action="store_true")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NonFiniteLossError as exc:
        print(f"error: {exc}; batch ids: {exc.batch_ids}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, ShapeError, ManifestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
