"""
Versioned, checksummed model checkpoints.

A checkpoint file is laid out as

    b"TRAPSNET" | format version (uint32 LE) | sha256(payload) | payload

where the payload is a safetensors blob of float64 tensors whose metadata
holds one canonical JSON document. Nothing in it depends on the number of
objects of any instance.
"""
import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List

import torch
from safetensors.torch import load as load_tensors
from safetensors.torch import save as save_tensors

from . import DTYPE
from .errors import CorruptChecksum, UsageError, VersionMismatch

MAGIC = b"TRAPSNET"
FORMAT_VERSION = 1
METADATA_KEY = "trapsnet"

_VERSION = struct.Struct("<I")
_HEADER_SIZE = len(MAGIC) + _VERSION.size + hashlib.sha256().digest_size


@dataclass
class CheckpointMeta:
    domain: str
    model_config: Dict[str, object]
    elapsed_seconds: float = 0.0
    steps: int = 0
    seeds: List[int] = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    def to_json(self, names):
        document = asdict(self)
        document["tensors"] = list(names)
        return json.dumps(document, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        document = json.loads(text)
        names = document.pop("tensors")
        return cls(**document), names


@dataclass
class Checkpoint:
    params: Dict[str, torch.Tensor]
    meta: CheckpointMeta


def save_checkpoint(params, meta):
    """Serialize parameters and metadata to checkpoint bytes."""
    tensors = OrderedDict()
    for name, tensor in params.items():
        tensor = tensor.detach()
        if not torch.isfinite(tensor).all():
            raise UsageError(f"parameter '{name}' holds non-finite values")
        tensors[name] = tensor.to(DTYPE).contiguous().clone()
    payload = save_tensors(
        tensors, metadata={METADATA_KEY: meta.to_json(tensors)}
    )
    digest = hashlib.sha256(payload).digest()
    return MAGIC + _VERSION.pack(meta.format_version) + digest + payload


def _read_metadata(payload):
    # safetensors: 8-byte LE header length, then a JSON header.
    (length,) = struct.unpack("<Q", payload[:8])
    header = json.loads(payload[8:8 + length])
    return header["__metadata__"][METADATA_KEY]


def load_checkpoint(data):
    """Parse checkpoint bytes into (params, meta)."""
    data = bytes(data)
    if len(data) < _HEADER_SIZE or not data.startswith(MAGIC):
        raise CorruptChecksum("not a checkpoint or truncated header")
    (version,) = _VERSION.unpack_from(data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionMismatch(
            f"checkpoint format {version} is not supported "
            f"(expected {FORMAT_VERSION})"
        )
    digest = data[len(MAGIC) + _VERSION.size:_HEADER_SIZE]
    payload = data[_HEADER_SIZE:]
    if hashlib.sha256(payload).digest() != digest:
        raise CorruptChecksum("checkpoint checksum does not match its content")

    try:
        tensors = load_tensors(payload)
        meta, names = CheckpointMeta.from_json(_read_metadata(payload))
    except Exception as error:
        # A matching checksum over a bad payload means it was written badly.
        raise CorruptChecksum(f"unreadable checkpoint payload: {error}") \
            from None
    params = OrderedDict((name, tensors[name]) for name in names)
    return params, meta


def write_checkpoint(path, checkpoint):
    data = save_checkpoint(checkpoint.params, checkpoint.meta)
    Path(path).write_bytes(data)
    return data


def read_checkpoint(path):
    params, meta = load_checkpoint(Path(path).read_bytes())
    return Checkpoint(params, meta)
