"""Potential-operator inequalities: the pointwise maximal-vs-potential
bound, Hardy-Littlewood-Sobolev ratios, and the fractional embedding ratios
tied to them by spectral inversion.

All constants here are empirical family statistics; the underlying
inequalities fix exponent couplings (1/p - 1/q = a/Q), not constants.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma

import numpy as np

from .grid import GridFunction, hom_dimension, lp_norm
from .operator import SpectralData, fractional_power_spectral, riesz_potential
from .quadrature import ConfigurationError, log_grid
from .semigroup import maximal_function, weak_level_sup


@dataclass
class EmbeddingReport:
    p: float
    q: float
    s: float | None
    alpha_tilde: float | None
    ratio: float  # strong ratio, 0.0 where undefined (p = 1)
    weak_ratio: float
    family_stats: dict | None = None

    def check_coupling(self, q_hom) -> float:
        """|1/p - 1/q - a/Q| with a = alpha_tilde or 2s."""
        a = self.alpha_tilde if self.alpha_tilde is not None else 2.0 * self.s
        return abs(1.0 / self.p - 1.0 / self.q - a / q_hom)


def hls_ratio(data: SpectralData, u: GridFunction, alpha_tilde: float, p: float):
    """Potential-operator ratios at the scale-invariant exponent coupling
    1/p - 1/q = alpha_tilde / Q: strong ||I u||_q / ||u||_p for p > 1, weak
    level-sup ratio for p = 1."""
    q_hom = hom_dimension(data.grid.spec)
    if not (0.0 < alpha_tilde < q_hom):
        raise ConfigurationError("potential order must lie in (0, Q)")
    if not (1.0 <= p < q_hom / alpha_tilde):
        raise ConfigurationError("need p in [1, Q / alpha_tilde)")
    q = 1.0 / (1.0 / p - alpha_tilde / q_hom)
    if not np.any(u.values):
        return EmbeddingReport(p, q, None, alpha_tilde, 0.0, 0.0)
    iu = riesz_potential(data, alpha_tilde, u)
    denom = lp_norm(u, p)
    # weak quasinorm at exponent q: sup lambda |{|Iu| > lambda}|^(1/q)
    weak = weak_level_sup(iu.values, data.cell_volume, 1.0 / q) / denom
    strong = lp_norm(iu, q) / denom if p > 1 else 0.0
    return EmbeddingReport(p, q, None, alpha_tilde, float(strong), float(weak))


def sobolev_ratio(data: SpectralData, u: GridFunction, s: float, p: float):
    """Embedding ratios ||u||_q vs ||L^s u||_p at q = p Q / (Q - 2 s p);
    by spectral inversion this is the potential ratio applied to L^s u."""
    q_hom = hom_dimension(data.grid.spec)
    if not (0.0 < s < 1.0):
        raise ConfigurationError("s must lie in (0, 1)")
    if not (1.0 <= p < q_hom / (2.0 * s)):
        raise ConfigurationError("need p in [1, Q / 2s)")
    q = p * q_hom / (q_hom - 2.0 * s * p)
    if not np.any(u.values):
        return EmbeddingReport(p, q, s, None, 0.0, 0.0)
    lsu = fractional_power_spectral(data, s, u)
    denom = lp_norm(lsu, p)
    weak = weak_level_sup(u.values, data.cell_volume, 1.0 / q) / denom
    strong = lp_norm(u, q) / denom if p > 1 else 0.0
    return EmbeddingReport(p, q, s, None, float(strong), float(weak))


def family_reports(make_report, family) -> dict:
    """min/max/median of the defined ratios across a function family."""
    reports = [make_report(u) for u in family]
    stats = {}
    for attr in ("ratio", "weak_ratio"):
        vals = np.array([getattr(r, attr) for r in reports])
        vals = vals[vals > 0]
        if vals.size:
            stats[attr] = {
                "min": float(vals.min()),
                "max": float(vals.max()),
                "median": float(np.median(vals)),
            }
    return stats


# ---------------------------------------------------------------------------
# Pointwise maximal-vs-potential bound
# ---------------------------------------------------------------------------


@dataclass
class PointwiseBoundReport:
    defect: float  # max positive excess of |I u| over the bound, relative
    c_alpha: float  # 1 / Gamma(1 + alpha_tilde), the explicit constant
    c_decay: float  # fitted sup-norm decay constant of e^{-t sqrt(L)}
    c_tail: float  # derived tail constant entering the bound
    eps_scaling_slope: float  # argmin-epsilon versus (||u||_p / M u)^(p/Q)


def fit_subordinate_decay(
    data: SpectralData, u: GridFunction, p: float, t_window=(1e-2, 1e2)
) -> float:
    """Empirical constant C with sup |e^{-t sqrt(L)} u| <= C t^{-Q/p}
    ||u||_p over the window (the box cannot certify an all-t constant)."""
    q_hom = hom_dimension(data.grid.spec)
    tg = log_grid(*t_window, 16)
    coeffs = data.coefficients(u)
    sq = np.sqrt(data.eigenvalues)
    best = 0.0
    for t in tg:
        sup = float(np.max(np.abs(data.eigenvectors @ (np.exp(-t * sq) * coeffs))))
        best = max(best, sup * t ** (q_hom / p))
    return best / lp_norm(u, p)


def pointwise_bound_defect(
    data: SpectralData,
    u: GridFunction,
    alpha_tilde: float,
    p: float,
    epsilon_grid=None,
    maximal_t_grid=None,
) -> PointwiseBoundReport:
    """Verify |I_a u| <= M u * eps^a / Gamma(1+a) + C ||u||_p eps^(a-Q/p)
    node by node, minimising over the epsilon grid; C is fitted from the
    measured sup-norm decay of the subordinated semigroup."""
    q_hom = hom_dimension(data.grid.spec)
    if not (0.0 < alpha_tilde < q_hom) or not (1.0 <= p < q_hom / alpha_tilde):
        raise ConfigurationError("need alpha_tilde in (0, Q), p in [1, Q/a)")
    if not np.any(u.values):
        return PointwiseBoundReport(0.0, 1.0 / gamma(1 + alpha_tilde), 0.0, 0.0, 0.0)
    if epsilon_grid is None:
        epsilon_grid = log_grid(1e-3, 1e3, 16)
    if maximal_t_grid is None:
        maximal_t_grid = log_grid(1e-4, 1e3, 16)
    iu = riesz_potential(data, alpha_tilde, u)
    mu = maximal_function(data, u, maximal_t_grid)
    c_alpha = 1.0 / gamma(1.0 + alpha_tilde)
    c_decay = fit_subordinate_decay(data, u, p)
    c_tail = c_decay / (gamma(alpha_tilde) * (q_hom / p - alpha_tilde))
    norm_p = lp_norm(u, p)
    eps = np.asarray(epsilon_grid)
    bound_terms = (
        c_alpha * mu.values[:, None] * eps[None, :] ** alpha_tilde
        + c_tail * norm_p * eps[None, :] ** (alpha_tilde - q_hom / p)
    )
    argmin = np.argmin(bound_terms, axis=1)
    bound = bound_terms[np.arange(mu.values.size), argmin]
    excess = np.abs(iu.values) - bound
    defect = float(np.max(np.maximum(excess, 0.0)) / np.max(np.abs(iu.values)))
    # the minimising epsilon should scale like (||u||_p / M u)^(p/Q)
    interior = ~np.isin(argmin, [0, eps.size - 1])
    slope = 0.0
    if np.count_nonzero(interior) > 8:
        x = np.log((norm_p / mu.values[interior]) ** (p / q_hom))
        y = np.log(eps[argmin[interior]])
        slope = float(np.polyfit(x, y, 1)[0])
    return PointwiseBoundReport(
        defect=defect,
        c_alpha=c_alpha,
        c_decay=c_decay,
        c_tail=c_tail,
        eps_scaling_slope=slope,
    )
