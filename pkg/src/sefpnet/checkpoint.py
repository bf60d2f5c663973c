"""Self-describing checkpoint files."""

import hashlib
import io
import os
import random

import numpy as np
import torch

from ._validation import CheckpointError

FORMAT = "sefpnet-checkpoint"
FORMAT_VERSION = 1


def rng_state():
    return {
        "python": random.getstate(),
        "numpy": np.random.get_state(),
        "torch": torch.get_rng_state(),
    }


def restore_rng_state(state):
    random.setstate(state["python"])
    np.random.set_state(state["numpy"])
    torch.set_rng_state(state["torch"])


def save_checkpoint(path, model, model_config, optimizer=None, epoch=0, step=0, train_config=None, extra=None):
    """Atomically write a checkpoint holding everything needed to rebuild and resume."""
    payload = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "model_config": model_config.to_dict(),
        "train_config": None if train_config is None else train_config.to_dict(),
        "state_dict": model.state_dict(),
        "optimizer": None if optimizer is None else optimizer.state_dict(),
        "epoch": epoch,
        "step": step,
        "rng": rng_state(),
        "extra": extra or {},
    }
    tmp = f"{path}.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    """Read and validate a checkpoint dict; raises :class:`CheckpointError` on any problem."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
        payload = torch.load(io.BytesIO(raw), map_location="cpu", weights_only=False)
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    except Exception as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint (expected {FORMAT} v{FORMAT_VERSION}): {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unknown checkpoint format (expected {FORMAT} v{FORMAT_VERSION})")
    if payload.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {payload.get('version')} (expected {FORMAT_VERSION})"
        )
    payload["sha256"] = hashlib.sha256(raw).hexdigest()
    return payload


def load_model(path):
    """Rebuild the model stored in a checkpoint, in evaluation mode."""
    from .backbone import ModelConfig, SEFPNet

    payload = load_checkpoint(path)
    model = SEFPNet(ModelConfig.from_dict(payload["model_config"]))
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameters do not match the stored config: {exc}") from exc
    return model.eval(), payload


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
