"""Finite-difference verification of analytic gradients.

The loss callable must return (loss, grads) where grads maps parameter names
to arrays shaped like the parameters. Probes are random scalar coordinates;
each is perturbed by +/- eps and compared against the analytic entry via
central differences. Run in float64: float32 round-off swamps eps**2 error.
"""

from __future__ import annotations

import numpy as np

from .seeding import substream


def gradient_check(loss_fn, params, n_probes: int = 32, eps: float = 1e-5,
                   seed: int = 0) -> float:
    """Max relative error |g_a - g_n| / max(1e-8, |g_a| + |g_n|) over random probes."""
    loss0, grads = loss_fn(params)
    if not np.isfinite(loss0):
        raise FloatingPointError(f"loss is non-finite at the probe point: {loss0}")
    names = sorted(params.keys())
    sizes = np.array([params[n].size for n in names], dtype=np.int64)
    total = int(sizes.sum())
    rng = substream(seed, "gradcheck")
    worst = 0.0
    for flat in rng.choice(total, size=min(n_probes, total), replace=False):
        t = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        idx = int(flat - (np.cumsum(sizes)[t] - sizes[t]))
        name = names[t]
        theta = params[name].reshape(-1)
        keep = theta[idx]
        theta[idx] = keep + eps
        up, _ = loss_fn(params)
        theta[idx] = keep - eps
        down, _ = loss_fn(params)
        theta[idx] = keep
        if not (np.isfinite(up) and np.isfinite(down)):
            raise FloatingPointError(f"non-finite loss while probing {name}[{idx}]")
        g_num = (up - down) / (2.0 * eps)
        g_ana = 0.0 if name not in grads else float(grads[name].reshape(-1)[idx])
        rel = abs(g_ana - g_num) / max(1e-8, abs(g_ana) + abs(g_num))
        worst = max(worst, rel)
    return worst
