"""Seeded finite-difference checks of every model's training loss.

Each fixture is a tiny random model plus a handful of random token-id
inputs; the check perturbs every parameter coordinate (embeddings included)
and compares central differences with the analytic gradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .models.cnn import CnnConfig, image_ids, init_cnn_params
from .models.rankers import attention_batch_loss, cnn_batch_loss
from .models.rnn import GruConfig, init_gru_params
from .tensor import GradCheckReport, Tensor, grad_check

LOSSES = ("cnn", "oneway", "ap")


@dataclass
class LossFixture:
    name: str
    seed: int
    loss: Callable[[dict[str, Tensor]], Tensor]
    params: dict[str, np.ndarray]


def _ids(rng: np.random.Generator, vocab: int, lo: int, hi: int) -> np.ndarray:
    # ids start at 1: row 0 is the OOV / padding row
    return rng.integers(1, vocab, size=int(rng.integers(lo, hi + 1)))


def cnn_fixture(seed: int, vocab: int = 12, dim: int = 4) -> LossFixture:
    rng = np.random.default_rng(seed)
    config = CnnConfig(max_len=5, emb_dim=dim, filter_heights=(2, 3), filters_per_height=3, hidden_dim=3)
    params = {k: v.astype(np.float64) for k, v in init_cnn_params(config, rng).items()}
    params["emb"] = rng.uniform(-0.5, 0.5, size=(vocab, dim))
    batch = [(image_ids(_ids(rng, vocab, 2, 6), _ids(rng, vocab, 2, 6), config.max_len), float(y)) for y in (1, 0, 0)]

    def loss(p):
        net = {k: v for k, v in p.items() if k != "emb"}
        return cnn_batch_loss(net, p["emb"], batch, config)

    return LossFixture("cnn", seed, loss, params)


def attention_fixture(variant: str, seed: int, vocab: int = 12, dim: int = 4, h: int = 3) -> LossFixture:
    rng = np.random.default_rng(seed)
    # a margin above the cosine range keeps every hinge term active
    config = GruConfig(h=h, emb_dim=dim, margin=2.5)
    params = {k: v.astype(np.float64) for k, v in init_gru_params(config, rng).items()}
    for d in ("fw", "bw"):
        params[f"{d}.b"] = rng.uniform(-0.1, 0.1, size=3 * h)
    emb = rng.uniform(-0.5, 0.5, size=(vocab, dim))
    emb[0] = 0.0
    q = _ids(rng, vocab, 2, 5)
    cands = [_ids(rng, vocab, 2, 5) for _ in range(3)]
    batch = [(q, cands, [(0, 1), (0, 2)])]

    def loss(p):
        return attention_batch_loss(p, Tensor(emb), batch, variant, config)

    return LossFixture(variant, seed, loss, params)


def fixture(name: str, seed: int) -> LossFixture:
    if name == "cnn":
        return cnn_fixture(seed)
    if name in ("oneway", "ap"):
        return attention_fixture(name, seed)
    raise ValueError(f"unknown loss {name!r}; expected one of {LOSSES}")


def check_losses(seeds=range(5), names=LOSSES, tol: float = 1e-4, h: float = 1e-5) -> list[tuple[str, int, GradCheckReport]]:
    """Run grad_check on every (loss, seed) pair."""
    out = []
    for name in names:
        for seed in seeds:
            fx = fixture(name, seed)
            out.append((name, seed, grad_check(fx.loss, fx.params, h=h, tol=tol, seed=seed)))
    return out
