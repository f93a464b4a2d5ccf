"""Shared test utilities: finite-difference gradient checking."""

import numpy as np
import torch


def finite_difference_check(
    module: torch.nn.Module,
    loss_fn,
    num_probes: int = 25,
    eps: float = 1e-5,
    seed: int = 0,
) -> float:
    """Compare autograd parameter gradients against central differences.

    ``loss_fn(module)`` must rebuild the scalar loss from scratch each
    call (inputs captured in the closure). The module is converted to
    float64 in place. Probes random parameter coordinates and returns the
    worst relative error observed.
    """
    module.double()
    rng = np.random.default_rng(seed)

    loss = loss_fn(module)
    params = [p for p in module.parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, params, allow_unused=True)

    flat = []
    for p, g in zip(params, grads):
        g = torch.zeros_like(p) if g is None else g
        for idx in range(p.numel()):
            flat.append((p, g, idx))

    worst = 0.0
    probes = rng.choice(len(flat), size=min(num_probes, len(flat)), replace=False)
    for k in probes:
        p, g, idx = flat[k]
        orig = p.data.view(-1)[idx].item()
        with torch.no_grad():
            p.data.view(-1)[idx] = orig + eps
            up = loss_fn(module).item()
            p.data.view(-1)[idx] = orig - eps
            down = loss_fn(module).item()
            p.data.view(-1)[idx] = orig
        fd = (up - down) / (2.0 * eps)
        ag = g.view(-1)[idx].item()
        rel = abs(fd - ag) / max(abs(fd), abs(ag), 1e-8)
        worst = max(worst, rel)
    return worst
