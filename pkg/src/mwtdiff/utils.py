"""Seeding and small shared helpers."""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def stable_seed(master_seed: int, phase: str) -> int:
    """Derive a per-phase seed that does not depend on call order.

    Hashing the (master seed, phase name) pair keeps phases decoupled:
    adding a draw to one phase never shifts the randomness of another.
    """
    digest = hashlib.sha256(f"{master_seed}:{phase}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def torch_generator(master_seed: int, phase: str) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    gen.manual_seed(stable_seed(master_seed, phase))
    return gen


def numpy_rng(master_seed: int, phase: str) -> np.random.Generator:
    return np.random.default_rng(stable_seed(master_seed, phase))


def count_parameters(module: torch.nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def freeze_module(module: torch.nn.Module) -> None:
    """Disable gradients and switch to eval mode."""
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
