"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

from qakb.nn.tensor import Tensor


def finite_diff_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must rebuild the scalar loss from the live ``params`` on every
    call (so nudged parameter values take effect).  Relative error is
    |a - n| / max(|a| + |n|, 1e-6) per element.
    """
    for p in params:
        p.grad = None
    loss = fn()
    loss.backward()
    analytic = []
    for p in params:
        if p.grad is None:
            analytic.append(None)
        else:
            analytic.append(p.grad.copy())

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = None if grad is None else grad.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            f_plus = fn().item()
            flat[i] = saved - eps
            f_minus = fn().item()
            flat[i] = saved
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = 0.0 if gflat is None else gflat[i]
            rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-6)
            worst = max(worst, rel)
    return worst
