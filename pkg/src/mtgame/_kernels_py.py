"""Pure-numpy twin of the compiled kernel; same arithmetic order."""

from __future__ import annotations

import numpy as np

from .hamiltonian import saddle_reduce


def saddle_interp(cost, base, theta, vnext, strides, upper):
    """Min-max over controls of ``cost + interp(vnext, foot)``.

    ``cost``, ``base`` have shape ``(Bc, S, U, V)`` and ``theta`` shape
    ``(Bc, S, U, V, n)`` with ``Bc`` either 1 (shared by every successor
    field) or ``B``; ``vnext`` is ``(B, Stot)``; ``base`` holds the flat
    index of the lower interpolation corner. Returns ``(value, iu, iv)``,
    each ``(B, S)``.
    """
    n = theta.shape[-1]
    B = vnext.shape[0]
    shared = cost.shape[0] == 1
    acc = 0.0
    for k in range(1 << n):
        weight = 1.0
        off = 0
        for i in range(n):
            if (k >> (n - 1 - i)) & 1:
                weight = weight * theta[..., i]
                off += int(strides[i])
            else:
                weight = weight * (1.0 - theta[..., i])
        idx = base + off
        if shared:
            gathered = vnext[:, idx[0]]
        else:
            gathered = np.take_along_axis(vnext, idx.reshape(B, -1), axis=1).reshape(idx.shape)
        acc = acc + weight * gathered
    total = cost + acc
    value, iu, iv = saddle_reduce(total, "upper" if upper else "lower")
    return value, iu.astype(np.int64), iv.astype(np.int64)
