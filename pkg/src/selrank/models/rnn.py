"""Bidirectional GRU encoder with attentive-pooling and one-way attention scorers."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DataError
from ..tensor import DTYPE, Tensor, orthogonal_init
from ..tensor import ops


@dataclass
class GruConfig:
    h: int = 141
    emb_dim: int = 300
    margin: float = 0.5
    l2: float = 1e-5
    pooling: str = "max"

    @property
    def c(self) -> int:
        return 2 * self.h

    def __post_init__(self):
        if self.pooling not in ("max", "avg"):
            raise ValueError("pooling must be 'max' or 'avg'")

    def to_dict(self) -> dict:
        return asdict(self)


def init_gru_params(config: GruConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Orthogonal blocks per gate for input and recurrent weights, zero biases,
    orthogonal bilinear attention matrix."""
    h, e = config.h, config.emb_dim
    params = {}
    for d in ("fw", "bw"):
        params[f"{d}.W"] = np.hstack([orthogonal_init(e, h, rng) for _ in range(3)])
        params[f"{d}.U"] = np.hstack([orthogonal_init(h, h, rng) for _ in range(3)])
        params[f"{d}.b"] = np.zeros(3 * h, dtype=DTYPE)
    params["att.U"] = orthogonal_init(config.c, config.c, rng)
    return params


def _run_gru(xw: Tensor, U: Tensor, h: int, reverse: bool) -> list[Tensor]:
    """GRU over precomputed input projections ``xw`` (T, 3h); gates ordered z, r, n."""
    T = xw.shape[0]
    U_zr, U_n = U[:, : 2 * h], U[:, 2 * h :]
    state = Tensor(np.zeros(h, dtype=xw.data.dtype))
    states: list[Tensor] = [None] * T  # type: ignore[list-item]
    order = range(T - 1, -1, -1) if reverse else range(T)
    for t in order:
        x_t = xw[t]
        zr = ops.sigmoid(x_t[: 2 * h] + state @ U_zr)
        z, r = zr[:h], zr[h:]
        n = ops.tanh(x_t[2 * h :] + (r * state) @ U_n)
        state = n + z * (state - n)
        states[t] = state
    return states


def encode(ids: np.ndarray, emb: Tensor, params: dict[str, Tensor], h: int) -> Tensor:
    """Sentence matrix (|tokens|, 2h): forward state at i concatenated with backward state at i."""
    ids = np.asarray(ids)
    if len(ids) == 0:
        raise DataError("encode: empty token list")
    X = ops.gather(emb, ids)
    halves = []
    for d, reverse in (("fw", False), ("bw", True)):
        xw = X @ params[f"{d}.W"] + params[f"{d}.b"]
        halves.append(ops.stack(_run_gru(xw, params[f"{d}.U"], h, reverse), axis=0))
    return ops.concat(halves, axis=1)


def ap_attention(Q: Tensor, A: Tensor, U: Tensor, pooling: str = "max") -> tuple[Tensor, Tensor]:
    """Softmax attention weights over question rows and answer rows."""
    H = ops.tanh(Q @ U @ A.T)  # (|q|, |a|)
    pool = ops.max if pooling == "max" else ops.mean
    return ops.softmax(pool(H, axis=1)), ops.softmax(pool(H, axis=0))


def ap_score(Q, A, U, pooling: str = "max") -> Tensor:
    Q, A, U = ops.as_tensor(Q), ops.as_tensor(A), ops.as_tensor(U)
    if Q.ndim != 2 or A.ndim != 2 or U.shape != (Q.shape[1], A.shape[1]):
        raise DataError(f"ap_score: incompatible shapes Q{Q.shape} A{A.shape} U{U.shape}")
    sq, sa = ap_attention(Q, A, U, pooling)
    return ops.cosine(sq @ Q, sa @ A)


def oneway_score(q_last, A, U) -> Tensor:
    q_last, A, U = ops.as_tensor(q_last), ops.as_tensor(A), ops.as_tensor(U)
    if q_last.ndim != 1 or A.ndim != 2 or U.shape != (A.shape[1], q_last.shape[0]):
        raise DataError(f"oneway_score: incompatible shapes q{q_last.shape} A{A.shape} U{U.shape}")
    sa = ops.softmax(ops.tanh(A @ (U @ q_last)))
    return ops.cosine(q_last, sa @ A)


def hinge_loss(s_pos, s_neg, margin: float) -> Tensor:
    return ops.maximum(margin - ops.as_tensor(s_pos) + s_neg, 0.0)
