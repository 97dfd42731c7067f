"""Graph smoothing: repeated application of the row-stochastic operator to a
descriptor matrix (m sparse-matrix x dense-matrix products; A^m is never
materialized).

Accumulation is always float64, with one final cast back to the input dtype,
and the dense signal is processed in column blocks so memory stays bounded at
large n x d. Column blocking does not change any value: each column's
accumulation chain is independent of the block layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .graph import SmoothingOperator

# Upper bound on the float64 working set (input block + product) per column
# block.
_BLOCK_BUDGET_BYTES = 256 << 20

_DENSE_ORACLE_MAX_N = 2000


@dataclass(frozen=True)
class SmoothConfig:
    """Number of times the operator is applied (m = 0 is the identity)."""

    m: int = 2

    def __post_init__(self) -> None:
        if self.m < 0:
            raise InputError(f"m must be nonnegative, got {self.m}")


def smooth(op: SmoothingOperator, signal: np.ndarray,
           cfg: SmoothConfig) -> np.ndarray:
    """Apply the operator cfg.m times. The input is never mutated; m = 0
    returns it as-is."""
    s = np.asarray(signal)
    if s.ndim != 2:
        raise InputError("signal must be a 2-D array")
    if s.shape[0] != op.n:
        raise InputError(f"signal has {s.shape[0]} rows but operator expects {op.n}")
    if cfg.m == 0:
        return s
    n, d = s.shape
    block = max(1, int(_BLOCK_BUDGET_BYTES // (2 * 8 * max(1, n))))
    out = np.empty_like(s)
    for start in range(0, d, block):
        cols = s[:, start:start + block].astype(np.float64)
        for _ in range(cfg.m):
            cols = op.matrix @ cols
        out[:, start:start + block] = cols.astype(s.dtype)
    return out


def smooth_dense_oracle(op: SmoothingOperator, signal: np.ndarray,
                        cfg: SmoothConfig) -> np.ndarray:
    """Reference implementation via a dense matrix power; testing only."""
    if op.n > _DENSE_ORACLE_MAX_N:
        raise InputError(f"dense oracle refuses n={op.n} > {_DENSE_ORACLE_MAX_N}")
    s = np.asarray(signal)
    if s.ndim != 2 or s.shape[0] != op.n:
        raise InputError("signal shape does not match operator")
    if cfg.m == 0:
        return s
    dense = op.matrix.toarray()
    power = np.linalg.matrix_power(dense, cfg.m)
    return (power @ s.astype(np.float64)).astype(s.dtype)
