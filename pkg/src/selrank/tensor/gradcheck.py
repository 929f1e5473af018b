"""Finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from ..errors import SelrankError
from .engine import Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    n_coords: int
    worst: tuple[str, tuple[int, ...]] | None = None
    failures: list[tuple[str, tuple[int, ...], float]] = field(default_factory=list)
    message: str = ""

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_error={self.max_rel_error:.3e} coords={self.n_coords} {self.message}".rstrip()


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-8)


def grad_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: Mapping[str, np.ndarray],
    h: float = 1e-3,
    tol: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backward() against central differences of ``f``.

    Everything runs on float64 copies of ``params``. ``max_coords`` caps the
    number of coordinates probed per parameter (chosen with ``seed``).
    """
    shadow = {name: np.array(value, dtype=np.float64) for name, value in params.items()}

    try:
        tensors = {name: Tensor(value.copy(), requires_grad=True, name=name) for name, value in shadow.items()}
        loss = f(tensors)
        if loss.data.size != 1:
            return GradCheckReport(False, float("inf"), 0, message=f"loss is not scalar: shape {loss.shape}")
        backward(loss)
    except SelrankError as exc:
        return GradCheckReport(False, float("inf"), 0, message=f"analytic pass failed: {exc}")
    analytic = {name: t.grad for name, t in tensors.items()}

    def evaluate(values: dict[str, np.ndarray]) -> float:
        with no_grad():
            out = f({name: Tensor(v) for name, v in values.items()})
        return float(out.data)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(True, 0.0, 0)
    for name, value in shadow.items():
        coords = list(np.ndindex(value.shape))
        if max_coords is not None and len(coords) > max_coords:
            picks = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(picks)]
        for coord in coords:
            original = value[coord]
            try:
                value[coord] = original + h
                plus = evaluate(shadow)
                value[coord] = original - h
                minus = evaluate(shadow)
            except SelrankError as exc:
                value[coord] = original
                report.passed = False
                report.max_rel_error = float("inf")
                report.worst = (name, coord)
                report.message = f"non-finite value at {name}{list(coord)}: {exc}"
                return report
            value[coord] = original
            numeric = (plus - minus) / (2 * h)
            g = float(analytic[name][coord])
            if not (np.isfinite(numeric) and np.isfinite(g)):
                report.passed = False
                report.max_rel_error = float("inf")
                report.worst = (name, coord)
                report.message = f"non-finite gradient at {name}{list(coord)}"
                return report
            err = relative_error(g, numeric)
            report.n_coords += 1
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst = (name, coord)
            if err >= tol:
                report.passed = False
                report.failures.append((name, coord, err))
    return report
