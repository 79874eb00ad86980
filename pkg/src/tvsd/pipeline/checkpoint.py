"""Single-file checkpoints carrying parameters, optimizer state and provenance."""

from __future__ import annotations

import io
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import torch

from ..errors import CheckpointError
from .config import Config, config_from_dict

FORMAT_VERSION = "tvsd-checkpoint/1"


@dataclass
class Checkpoint:
    params: dict[str, torch.Tensor]
    config: Config
    optimizer_state: dict | None = None
    epoch: int = 0
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    version: str = FORMAT_VERSION

    @property
    def config_hash(self) -> str:
        return self.config.hash


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    payload = {
        "version": ckpt.version,
        "config_hash": ckpt.config_hash,
        "config_json": json.dumps(ckpt.config.to_dict(), sort_keys=True),
        "params": ckpt.params,
        "optimizer_state": ckpt.optimizer_state,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "rng_state_json": json.dumps(ckpt.rng_state),
    }
    buf = io.BytesIO()
    torch.save(payload, buf)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path, expected_config_hash: str | None = None) -> Checkpoint:
    """Read a checkpoint; a config-hash mismatch only warns."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
        version = payload["version"]
    except FileNotFoundError:
        raise
    except Exception as exc:  # torch raises a zoo of types for truncated/corrupt archives
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint {path} has version {version!r}, expected {FORMAT_VERSION!r}")
    try:
        config = config_from_dict(json.loads(payload["config_json"]))
        ckpt = Checkpoint(
            params=payload["params"],
            config=config,
            optimizer_state=payload["optimizer_state"],
            epoch=payload["epoch"],
            step=payload["step"],
            rng_state=json.loads(payload["rng_state_json"]),
            version=version,
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} is malformed: {exc}") from exc
    if ckpt.config_hash != payload["config_hash"]:
        raise CheckpointError(f"checkpoint {path}: stored config does not match its hash")
    if expected_config_hash is not None and expected_config_hash != ckpt.config_hash:
        warnings.warn(
            f"checkpoint config hash {ckpt.config_hash} differs from current config {expected_config_hash}",
            stacklevel=2,
        )
    return ckpt


def model_from_checkpoint(ckpt: Checkpoint):
    from .model import TVSDNet

    dtype = getattr(torch, ckpt.config.train.dtype)
    model = TVSDNet.from_config(ckpt.config).to(dtype)
    model.load_state_dict(ckpt.params)
    model.eval()
    return model
