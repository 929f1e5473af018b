"""Convolutional pair scorer.

The question and the candidate each fill ``max_len`` rows of a single image
(question on top); longer inputs are cut and shorter ones are padded with the
zero OOV row. Full-width filters slide over the image, windows lying wholly in
the question half are pooled into the question vector and those in the answer
half into the answer vector, and a tanh hidden layer over both vectors feeds a
sigmoid output.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DataError
from ..tensor import DTYPE, Tensor, glorot_uniform
from ..tensor import ops


@dataclass
class CnnConfig:
    max_len: int = 40
    emb_dim: int = 300
    filter_heights: tuple[int, ...] = (2, 3)
    filters_per_height: int = 100
    hidden_dim: int = 200
    trainable_embeddings: bool = False
    pooling: str = "max"

    def __post_init__(self):
        self.filter_heights = tuple(int(h) for h in self.filter_heights)
        if any(h < 1 or h > self.max_len for h in self.filter_heights):
            raise ValueError(f"filter heights {self.filter_heights} must lie in [1, max_len={self.max_len}]")
        if self.pooling not in ("max", "avg"):
            raise ValueError("pooling must be 'max' or 'avg'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filter_heights"] = list(self.filter_heights)
        return d


def init_cnn_params(config: CnnConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    e, F = config.emb_dim, config.filters_per_height
    for h in config.filter_heights:
        w = glorot_uniform(h * e, F, rng).T.reshape(F, h, e)
        params[f"conv{h}.w"] = np.ascontiguousarray(w)
        params[f"conv{h}.b"] = np.zeros(F, dtype=DTYPE)
    pooled = 2 * F * len(config.filter_heights)
    params["hidden.w"] = glorot_uniform(pooled, config.hidden_dim, rng)
    params["hidden.b"] = np.zeros(config.hidden_dim, dtype=DTYPE)
    params["out.w"] = glorot_uniform(config.hidden_dim, 1, rng).reshape(-1)
    params["out.b"] = np.zeros(1, dtype=DTYPE)
    return params


def image_ids(q_ids: np.ndarray, a_ids: np.ndarray, max_len: int) -> np.ndarray:
    """Row ids of the 2*max_len image; 0 is the zero padding row."""
    if len(q_ids) == 0 or len(a_ids) == 0:
        raise DataError("cnn: question and answer must both be non-empty")
    ids = np.zeros(2 * max_len, dtype=np.int64)
    q, a = q_ids[:max_len], a_ids[:max_len]
    ids[: len(q)] = q
    ids[max_len : max_len + len(a)] = a
    return ids


def cnn_logit(ids: np.ndarray, emb: Tensor, params: dict[str, Tensor], config: CnnConfig) -> Tensor:
    image = ops.gather(emb, ids)
    L = config.max_len
    q_parts, a_parts = [], []
    pool = ops.max if config.pooling == "max" else ops.mean
    for h in config.filter_heights:
        fmap = ops.conv2d(image, params[f"conv{h}.w"])  # (2L-h+1, 1, F)
        fmap = ops.tanh(ops.reshape(fmap, (2 * L - h + 1, -1)) + params[f"conv{h}.b"])
        q_parts.append(pool(fmap[: L - h + 1], axis=0))
        a_parts.append(pool(fmap[L : 2 * L - h + 1], axis=0))
    pooled = ops.concat(q_parts + a_parts, axis=0)
    hidden = ops.tanh(pooled @ params["hidden.w"] + params["hidden.b"])
    return hidden @ params["out.w"] + params["out.b"][0]


def cnn_forward(q_ids, a_ids, emb, params, config: CnnConfig) -> float:
    """Score in (0, 1) for one question/candidate pair."""
    emb_t = emb if isinstance(emb, Tensor) else Tensor(emb)
    tensors = {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}
    logit = cnn_logit(image_ids(np.asarray(q_ids), np.asarray(a_ids), config.max_len), emb_t, tensors, config)
    return float(ops.sigmoid(logit).data)
