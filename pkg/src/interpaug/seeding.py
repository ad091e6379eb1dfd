"""Named random sub-streams derived from one root seed.

Every random decision in a run (split shuffling, weight init, batch order,
standard augmentation, masking) draws from its own stream so that changing
one component never perturbs the others.
"""
from __future__ import annotations

import hashlib
import json
import random
from typing import Any

import numpy as np
import torch


def _key_bytes(root_seed: int, keys: tuple[Any, ...]) -> bytes:
    return json.dumps([int(root_seed), *[str(k) for k in keys]]).encode()


def stream_seed(root_seed: int, *keys: Any) -> int:
    """64-bit seed for the sub-stream named by ``keys``."""
    digest = hashlib.blake2b(_key_bytes(root_seed, keys), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(root_seed: int, *keys: Any) -> np.random.Generator:
    return np.random.default_rng(stream_seed(root_seed, *keys))


def uniform01(root_seed: int, *keys: Any) -> float:
    """A single U[0, 1) variate that is a pure function of its keys."""
    return stream_seed(root_seed, *keys) / 2.0**64


def torch_generator(root_seed: int, *keys: Any) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(stream_seed(root_seed, *keys) & 0x7FFF_FFFF_FFFF_FFFF)
    return g


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)


def sha256_json(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def state_dict_hash(state: dict[str, torch.Tensor]) -> str:
    """Content hash of a state dict, independent of serialization details."""
    h = hashlib.sha256()
    for name in sorted(state):
        t = state[name].detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()
