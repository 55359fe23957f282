"""The two calibration network architectures."""

from __future__ import annotations

import numpy as np

from ..nn import Conv2d, Dense, Dropout, Flatten, MaxPool2d, ReLU, Sequential, ShapeError

N_PARAMS = 5
FCN_HIDDEN = (1000, 1500, 1000)
CNN_HIDDEN = 100
DROPOUT = 0.25


def build_fcn(nf: int, seed: int = 0, hidden=FCN_HIDDEN, dropout: float = DROPOUT) -> Sequential:
    """nf -> 1000 -> 1500 -> 1000 -> dropout -> 5, ReLU on the hidden layers."""
    if nf < 1:
        raise ValueError(f"nf must be >= 1, got {nf}")
    rng = np.random.default_rng(seed)
    layers = []
    width = nf
    for h in hidden:
        layers += [Dense(width, h, rng), ReLU()]
        width = h
    layers += [Dropout(dropout, rng), Dense(width, N_PARAMS, rng)]
    return Sequential(layers, (nf,))


def build_cnn(height: int, width: int, channels: int = 4, seed: int = 0, kernel: int = 7,
              stride: int = 2, padding: int = 3, pool_kernel: int = 7, pool_stride: int = 2,
              hidden: int = CNN_HIDDEN, dropout: float = DROPOUT) -> Sequential:
    """conv 7x7/2 -> ReLU -> maxpool 7/2 -> flatten -> 100 -> ReLU -> dropout -> 5."""
    rng = np.random.default_rng(seed)
    conv = Conv2d(1, channels, kernel, stride, padding, rng)
    pool = MaxPool2d(pool_kernel, pool_stride)
    try:
        flat = int(np.prod(pool.output_shape(conv.output_shape((1, height, width)))))
    except ShapeError as exc:
        raise ValueError(f"CNN configuration collapses a {height}x{width} grid: {exc}") from exc
    layers = [conv, ReLU(), pool, Flatten(), Dense(flat, hidden, rng), ReLU(),
              Dropout(dropout, rng), Dense(hidden, N_PARAMS, rng)]
    return Sequential(layers, (1, height, width))
