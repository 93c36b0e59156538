"""Log-time quadrature shared by every dt/t integral in the package."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


class ConfigurationError(ValueError):
    """A parameter combination violates an operation's precondition."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Log-spaced node family on [t_min, t_max] with a declared tail policy.

    tail_policy governs what happens to the (t_max, infinity) part of an
    integral: "analytic_bound" adds a closed-form bound/limit term supplied
    by the caller, "drop" discards it.
    """

    t_min: float = 1e-6
    t_max: float = 1e4
    nodes_per_decade: int = 16
    tail_policy: str = "analytic_bound"
    total_nodes: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if not (0.0 < self.t_min < self.t_max):
            raise ConfigurationError("need 0 < t_min < t_max")
        if self.nodes_per_decade < 4:
            raise ConfigurationError("nodes_per_decade must be >= 4")
        if self.tail_policy not in ("analytic_bound", "drop"):
            raise ConfigurationError(f"unknown tail_policy {self.tail_policy!r}")

    @classmethod
    def with_total(cls, t_min, t_max, total_nodes, tail_policy="analytic_bound"):
        decades = np.log10(t_max / t_min)
        npd = max(4, int(np.ceil(total_nodes / decades)))
        return cls(t_min, t_max, npd, tail_policy, total_nodes=int(total_nodes))

    def nodes(self) -> np.ndarray:
        if self.total_nodes is not None:
            num = self.total_nodes
        else:
            decades = np.log10(self.t_max / self.t_min)
            num = int(round(decades * self.nodes_per_decade)) + 1
        return np.geomspace(self.t_min, self.t_max, num)


def log_trapezoid(t: np.ndarray, f: np.ndarray, axis: int = -1) -> float | np.ndarray:
    """integral of f(t) dt computed as trapezoid in log t of t*f(t)."""
    f = np.asarray(f)
    t = np.asarray(t, dtype=float)
    shape = [1] * f.ndim
    shape[axis] = t.size
    return _trapezoid(f * t.reshape(shape), np.log(t), axis=axis)


def log_grid(lo: float, hi: float, per_decade: int = 16) -> np.ndarray:
    num = int(round(np.log10(hi / lo) * per_decade)) + 1
    return np.geomspace(lo, hi, max(num, 2))
