"""Initializers and the RMSProp optimizer."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from ..errors import NumericError, ShapeError
from .engine import DTYPE, Tensor


def orthogonal_init(rows: int, cols: int, seed: int | np.random.Generator, gain: float = 1.0) -> np.ndarray:
    """Orthogonalized Gaussian matrix; rows (or columns, whichever fewer) are orthonormal."""
    if rows < 1 or cols < 1:
        raise ShapeError(f"orthogonal_init: invalid shape ({rows}, {cols})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    big, small = max(rows, cols), min(rows, cols)
    q, r = np.linalg.qr(rng.standard_normal((big, small)))
    # sign fix makes the result uniformly distributed over orthogonal matrices
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    q = q * d
    m = q if rows >= cols else q.T
    return (gain * m).astype(DTYPE)


def glorot_uniform(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols)).astype(DTYPE)


@dataclass
class RmspropState:
    lr: float = 1e-3
    decay: float = 0.9
    eps: float = 1e-8
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0 or not 0 < self.decay < 1 or self.eps <= 0:
            raise ValueError(f"invalid RMSProp hyperparameters lr={self.lr} decay={self.decay} eps={self.eps}")


def rmsprop_step(
    state: RmspropState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    l2: float = 0.0,
    exempt: Iterable[str] = (),
) -> Mapping[str, np.ndarray]:
    """One in-place RMSProp update.

    ``l2`` adds ``2 * l2 * p`` to the gradient of every parameter not named in
    ``exempt`` (the embeddings).
    """
    exempt = set(exempt)
    updates = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(f"rmsprop_step: grad {g.shape} vs param {p.shape} for {name!r}")
        if l2 and name not in exempt:
            g = g + 2.0 * l2 * p
        acc = state.accumulators.get(name)
        if acc is None:
            acc = np.zeros(p.shape, dtype=np.float64)
        acc = state.decay * acc + (1.0 - state.decay) * g * g
        new = p - state.lr * g / (np.sqrt(acc) + state.eps)
        if not np.all(np.isfinite(new)):
            raise NumericError(f"rmsprop_step: non-finite update for {name!r}")
        updates[name] = (acc, new)
    # commit only after every parameter updated cleanly
    for name, (acc, new) in updates.items():
        state.accumulators[name] = acc
        params[name][...] = new
    return params


class Rmsprop:
    """Binds an :class:`RmspropState` to a set of named parameter tensors."""

    def __init__(self, params: Mapping[str, Tensor], lr=1e-3, decay=0.9, eps=1e-8, l2=0.0, exempt=()):
        self.params = dict(params)
        self.state = RmspropState(lr=lr, decay=decay, eps=eps)
        self.l2 = l2
        self.exempt = set(exempt)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def step(self, masks: Mapping[str, np.ndarray] | None = None) -> None:
        """Apply one update; ``masks`` zero selected gradient entries (e.g. frozen rows)."""
        grads = {}
        for name, t in self.params.items():
            g = t.grad
            if masks and name in masks:
                g = g * masks[name]
            grads[name] = g
        rmsprop_step(self.state, {n: t.data for n, t in self.params.items()}, grads, self.l2, self.exempt)
