"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

import numpy as np

from .layers import Parameter


def grad_check(loss_fn, params: list[Parameter], h: float = 1e-5,
               max_entries_per_param: int | None = None,
               seed: int = 0) -> float:
    """Compare tape gradients against central finite differences.

    `loss_fn` must rebuild the forward graph and return a scalar Tensor.
    Returns the max relative error max(|g_ad - g_fd|) / max(1e-8, |g_fd|)
    over all checked entries. When `max_entries_per_param` is set, a seeded
    random subset of entries is checked per parameter (all entries otherwise).
    """
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {p.name: (np.zeros_like(p.data) if p.grad is None
                         else p.grad.copy()) for p in params}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            idxs = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            idxs = range(n)
        ga = analytic[p.name].reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn().item()
            flat[i] = orig - h
            lm = loss_fn().item()
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            denom = max(abs(fd), abs(ga[i]), 1e-6)
            err = abs(ga[i] - fd) / denom
            if err > worst:
                worst = err
    return worst
