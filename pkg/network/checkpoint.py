"""
Checkpoint files.

Layout: magic ``TRJPCKPT``, little-endian uint32 header length, UTF-8 JSON
header, then the raw 32-bit little-endian values of every tensor in header
order. The optimizer state used for resuming lives next to it in
``<name>.optim.pt``.
"""
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import torch
import torch.nn as nn

import config
from errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"TRJPCKPT"
FORMAT_VERSION = 1

PathLike = Union[str, Path]


def config_hash(decoder_config: Dict[str, Any]) -> str:
    """Stable hash of a decoder configuration dictionary."""
    payload = json.dumps(decoder_config, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()[:16]


@dataclass
class Checkpoint:
    step: int
    epoch: int
    decoder_config: Dict[str, Any]
    config_hash: str
    tensors: Dict[str, torch.Tensor]


def optimizer_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.stem + config.OPTIMIZER_SUFFIX)


def save_checkpoint(
    path: PathLike,
    model: nn.Module,
    decoder_config: Dict[str, Any],
    step: int,
    epoch: int,
    optimizer_state: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Writes model parameters (and optionally optimizer state) to disk.

    Returns:
        Path of the written checkpoint
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    table = []
    blobs = []
    offset = 0
    for name, tensor in model.state_dict().items():
        if not tensor.is_floating_point():
            continue
        values = tensor.detach().cpu().to(torch.float32).numpy().astype('<f4', copy=False)
        table.append({'name': name, 'shape': list(tensor.shape), 'offset': offset})
        blobs.append(values.tobytes(order='C'))
        offset += values.size

    header = {
        'format': FORMAT_VERSION,
        'config_hash': config_hash(decoder_config),
        'step': int(step),
        'epoch': int(epoch),
        'decoder_config': decoder_config,
        'tensors': table,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')

    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(np.array([len(header_bytes)], dtype='<u4').tobytes())
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)

    if optimizer_state is not None:
        torch.save(optimizer_state, optimizer_path(path))

    logger.info("checkpoint_saved | step=%d | epoch=%d | path=%s", step, epoch, path)
    return path


def load_checkpoint(path: PathLike, expected_hash: Optional[str] = None) -> Checkpoint:
    """
    Reads a checkpoint file.

    Args:
        path: Checkpoint path
        expected_hash: Reject the file unless its config hash matches

    Raises:
        CheckpointError: If the file is missing, malformed or from another configuration
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"{path}: cannot read checkpoint ({e})")

    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    start = len(MAGIC) + 4
    if len(data) < start:
        raise CheckpointError(f"{path}: truncated header")
    header_len = int(np.frombuffer(data[len(MAGIC):start], dtype='<u4')[0])
    try:
        header = json.loads(data[start:start + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})")

    if expected_hash is not None and header['config_hash'] != expected_hash:
        raise CheckpointError(
            f"{path}: config hash mismatch (checkpoint {header['config_hash']}, expected {expected_hash})"
        )

    values = np.frombuffer(data[start + header_len:], dtype='<f4')
    tensors = {}
    for entry in header['tensors']:
        count = int(np.prod(entry['shape'], dtype=np.int64))
        chunk = values[entry['offset']:entry['offset'] + count]
        if chunk.size != count:
            raise CheckpointError(f"{path}: truncated values for {entry['name']}")
        tensors[entry['name']] = torch.from_numpy(chunk.copy()).reshape(entry['shape'])

    return Checkpoint(
        step=header['step'],
        epoch=header['epoch'],
        decoder_config=header['decoder_config'],
        config_hash=header['config_hash'],
        tensors=tensors,
    )


def apply_checkpoint(model: nn.Module, checkpoint: Checkpoint):
    """Loads checkpoint tensors into a model, casting to the model's dtype."""
    state = model.state_dict()
    missing = [name for name, t in state.items() if t.is_floating_point() and name not in checkpoint.tensors]
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {', '.join(missing[:5])}")
    for name, tensor in checkpoint.tensors.items():
        if name not in state:
            raise CheckpointError(f"checkpoint has unknown tensor {name}")
        if tuple(state[name].shape) != tuple(tensor.shape):
            raise CheckpointError(f"shape mismatch for {name}: {tuple(tensor.shape)} vs {tuple(state[name].shape)}")
        state[name] = tensor.to(state[name].dtype)
    model.load_state_dict(state)


def load_optimizer_state(path: PathLike) -> Optional[Dict[str, Any]]:
    opt_path = optimizer_path(path)
    if not opt_path.exists():
        return None
    return torch.load(opt_path, map_location='cpu', weights_only=False)
