import numpy as np
import pytest
from math import gamma, inf

from grushin_lab import GridFunction, QuadratureSpec
from grushin_lab.besov import (
    BesovParams,
    EnergyProfile,
    HeadDivergenceError,
    bbm_bracket,
    difference_energy,
    local_energy,
    local_energy_direct,
    ls_boundedness_check,
    minmax_defect,
    ms_limit_scan,
    seminorm_difference,
    seminorm_heat,
    seminorm_subordinate,
)
from grushin_lab.metric import euclidean_distance_field, strided_sources
from grushin_lab.perimeter import perimeter_star
from grushin_lab.quadrature import ConfigurationError, log_trapezoid
from grushin_lab.grid import Grid, GridSpec, SetSpec, rasterize
from tests.conftest import compact_bump, gaussian

QUAD = QuadratureSpec(1e-6, 1e4, 16)


def test_constant_energy_vanishes(gp24):
    grid, _, data = gp24
    const = GridFunction(grid, np.full(grid.size, 2.5))
    assert local_energy(data, 0.05, 1.0, const) == 0.0
    assert seminorm_heat(data, const, BesovParams(1, 1, 0.4), QUAD) == 0.0
    assert seminorm_subordinate(data, const, BesovParams(1, 1, 0.4), QUAD) == 0.0


@pytest.mark.parametrize("p", [1.0, 2.0, 1.5])
def test_profile_matches_kernel_route(gp24, p):
    """The modal energy profiles against the dense kernel-column oracle."""
    grid, _, data = gp24
    u = compact_bump(grid, (0.1, -0.2), 0.7)
    prof = EnergyProfile(data, u, p)
    for t in (0.01, 0.1, 1.0):
        oracle = local_energy_direct(data, t, p, u)
        assert prof.heat([t])[0] == pytest.approx(oracle, rel=1e-10)


def test_p2_closed_form(gp24):
    """p = 2 energy equals 2(<u^2, e^{-tL} 1> - <u, e^{-tL} u>)."""
    from grushin_lab.semigroup import heat_apply

    grid, _, data = gp24
    u = gaussian(grid, width=0.6)
    t = 0.07
    ones = GridFunction(grid, np.ones(grid.size))
    closed = 2.0 * (
        data.inner(GridFunction(grid, u.values**2), heat_apply(data, t, ones))
        - data.inner(u, heat_apply(data, t, u))
    )
    assert local_energy(data, t, 2.0, u) == pytest.approx(closed, rel=1e-10)


def test_small_time_trend(gp64):
    """Resolved small-time laws: the p = 1 energy needs kernels wider than
    a node spacing (its continuum sqrt(t) law breaks discretely below h^2),
    while the p = 2 energy is a smooth quadratic functional whose linear
    law holds straight down to t -> 0."""
    grid, _, data = gp64
    u = compact_bump(grid, (0.0, 0.0), 1.2)
    h = float(np.max(grid.spacing))
    windows = {1.0: np.geomspace(2.5 * h * h, 12 * h * h, 6),
               2.0: np.geomspace(1e-4, 1e-3, 6)}
    for p, ts in windows.items():
        prof = EnergyProfile(data, u, p)
        slope = np.polyfit(np.log(ts), np.log(prof.heat(ts)), 1)[0]
        assert slope == pytest.approx(p / 2.0, rel=0.10)


def test_homogeneity(gp24):
    grid, _, data = gp24
    u = gaussian(grid, width=0.5)
    scaled = GridFunction(grid, -3.0 * u.values)
    for params in (BesovParams(1, 1, 0.4), BesovParams(2, 2, 0.6),
                   BesovParams(1, inf, 0.4)):
        n1 = seminorm_heat(data, u, params, QUAD)
        n2 = seminorm_heat(data, scaled, params, QUAD)
        assert n2 == pytest.approx(3.0 * n1, rel=1e-10)


def test_triangle_inequality(gp24):
    grid, _, data = gp24
    rng = np.random.default_rng(12)
    for params in (BesovParams(1, 1, 0.4), BesovParams(2, 2, 0.5)):
        for _ in range(4):
            u = GridFunction(grid, rng.standard_normal(grid.size))
            v = GridFunction(grid, rng.standard_normal(grid.size))
            w = GridFunction(grid, u.values + v.values)
            nu = seminorm_heat(data, u, params, QUAD)
            nv = seminorm_heat(data, v, params, QUAD)
            nw = seminorm_heat(data, w, params, QUAD)
            assert nw <= nu + nv + 1e-10 * (nu + nv)


def test_beta_monotone_on_truncated_head(gp24):
    """On the (0, 1) head the seminorm grows with the smoothness exponent."""
    grid, _, data = gp24
    u = gaussian(grid, width=0.5)
    head = QuadratureSpec(1e-6, 1.0, 16, tail_policy="drop")
    values = [seminorm_heat(data, u, BesovParams(1, 1, b), head)
              for b in (0.2, 0.4, 0.6, 0.8)]
    assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))


def test_qinf_equals_grid_sup(gp24):
    grid, _, data = gp24
    u = gaussian(grid, width=0.5)
    params = BesovParams(1, inf, 0.5)
    prof = EnergyProfile(data, u, 1.0)
    t = QUAD.nodes()
    manual = np.max(t ** (-0.25) * prof.heat(t))
    assert seminorm_heat(data, u, params, QUAD) == pytest.approx(manual, rel=1e-12)


def test_indicator_seminorm_ties_to_fractional_norm(gp48):
    """At p = q = 1, beta = 2s the indicator seminorm (defect realisation)
    matches the L^1 norm of the fractional power within 1 percent."""
    grid, _, data = gp48
    mask = rasterize(SetSpec.euclidean_box((0, 0), (0.5, 0.5)), grid)
    s = 0.25
    quad = QuadratureSpec(1e-6, 1e3, 16)
    pref = s / gamma(1.0 - s)
    lhs = pref * perimeter_star(data, mask, s, quad)
    coeffs = data.coefficients(mask.function())
    nodal = data.eigenvectors @ (data.eigenvalues**s * coeffs)
    rhs = data.cell_volume * float(np.sum(np.abs(nodal)))
    assert lhs == pytest.approx(rhs, rel=1e-2)


def test_head_divergence_detected(gp24):
    grid, _, data = gp24
    mask = rasterize(SetSpec.euclidean_box((0, 0), (0.5, 0.5)), grid)
    with pytest.raises(HeadDivergenceError) as err:
        seminorm_heat(data, mask.function(), BesovParams(1, 1, 1.2), QUAD)
    assert err.value.trend < 1.0


# ---------------------------------------------------------------------------
# Difference seminorm
# ---------------------------------------------------------------------------


def euclidean_difference_seminorm(u, fields, params, r_quad):
    """Independent ball-averaged implementation: brute-force pair sums per
    radius, no sorting tricks."""
    grid = u.grid
    r = r_quad.nodes()
    x = np.zeros(r.size)
    for src, fld in fields.items():
        d = fld.values.values
        for i, rv in enumerate(r):
            inside = d < rv
            count = max(int(np.count_nonzero(inside)), 1)
            x[i] += np.sum(np.abs(u.values[inside] - u.values[src]) ** params.p) / count
    x *= grid.cell_volume * (grid.size / len(fields))
    qp = params.q / params.p
    expo = 2.0 * params.beta * params.q
    body = log_trapezoid(r, x**qp * r ** (-expo - 1.0))
    tail = x[-1] ** qp * r_quad.t_max ** (-expo) / expo
    return float((body + tail) ** (1.0 / params.q))


def test_difference_matches_euclidean_oracle():
    grid = Grid(GridSpec(1, 1, 0.0, half_width=1.0, points=16))
    u = gaussian(grid, width=0.4)
    sources = strided_sources(grid, 2)
    fields = {int(s): euclidean_distance_field(grid, int(s)) for s in sources}
    params = BesovParams(1, 1, 0.3)
    r_quad = QuadratureSpec(0.05, 4.0, 16)
    fast = seminorm_difference(u, params, fields, r_quad)
    oracle = euclidean_difference_seminorm(u, fields, params, r_quad)
    assert fast == pytest.approx(oracle, rel=1e-8)


def test_difference_constant_zero(gp24):
    grid, _, data = gp24
    const = GridFunction(grid, np.ones(grid.size))
    sources = strided_sources(grid, 4)
    fields = {int(s): euclidean_distance_field(grid, int(s)) for s in sources}
    out = seminorm_difference(const, BesovParams(1, 1, 0.3), fields,
                              QuadratureSpec(0.1, 4.0, 8))
    assert out == 0.0


def test_difference_energy_counts_center(gp24):
    grid, _, data = gp24
    u = gaussian(grid, width=0.5)
    src = grid.node_index((0.0, 0.0))
    fields = {src: euclidean_distance_field(grid, src)}
    x = difference_energy(u, fields, np.array([1e-9]), 1.0)
    assert x[0] == 0.0  # only the centre is inside; zero difference


# ---------------------------------------------------------------------------
# Min-max
# ---------------------------------------------------------------------------


def test_minmax_equal_inputs(gp24):
    grid, _, data = gp24
    u = gaussian(grid, width=0.5)
    rep = minmax_defect(data, u, u, BesovParams(1, 1, 0.4), QUAD)
    assert rep.defect == pytest.approx(0.0, abs=1e-12 * max(rep.rhs, 1.0))


def test_minmax_disjoint_split(gp24):
    grid, _, data = gp24
    u1 = compact_bump(grid, (0.0, 0.0), 0.6)
    zero = GridFunction(grid, np.zeros(grid.size))
    rep = minmax_defect(data, u1, zero, BesovParams(1, 1, 0.4), QUAD)
    assert abs(rep.defect) <= 1e-12 * max(rep.rhs, 1.0)


@pytest.mark.parametrize("params", [BesovParams(1, 1, 0.4),
                                    BesovParams(2, 2, 0.4),
                                    BesovParams(1, inf, 0.4)])
def test_minmax_random_pairs(gp24, params):
    grid, _, data = gp24
    rng = np.random.default_rng(21)
    for _ in range(6):
        u1 = compact_bump(grid, rng.uniform(-0.5, 0.5, 2), rng.uniform(0.3, 0.8))
        u2 = compact_bump(grid, rng.uniform(-0.5, 0.5, 2), rng.uniform(0.3, 0.8))
        rep = minmax_defect(data, u1, u2, params, QUAD)
        assert rep.defect <= 1e-10 * max(rep.rhs, 1e-300)


def test_minmax_needs_p_equals_q(gp24):
    grid, _, data = gp24
    u = gaussian(grid)
    with pytest.raises(ConfigurationError):
        minmax_defect(data, u, u, BesovParams(1, 2, 0.4), QUAD)


# ---------------------------------------------------------------------------
# Limit scans
# ---------------------------------------------------------------------------


def test_ms_limit_scan_hits_target(gp48):
    grid, _, data = gp48
    u = compact_bump(grid, (0.0, 0.0), 0.6)
    for p in (1.0, 2.0):
        rep = ms_limit_scan(data, u, p, [0.4, 0.2, 0.1, 0.05], QUAD)
        assert rep.extrapolated == pytest.approx(rep.target, rel=0.1)
        assert rep.head_values[-1] < rep.head_values[0]


def test_ms_limit_forbids_drop(gp24):
    grid, _, data = gp24
    u = gaussian(grid)
    with pytest.raises(ConfigurationError):
        ms_limit_scan(data, u, 1.0, [0.2, 0.1],
                      QuadratureSpec(1e-6, 1e4, 16, tail_policy="drop"))


def test_bbm_sandwich(gp48):
    grid, _, data = gp48
    u = compact_bump(grid, (0.0, 0.0), 0.6)
    rep = bbm_bracket(data, u, 1.0, [0.8, 0.9, 0.95, 0.98], QUAD)
    assert rep.values[-1] <= 1.05 * rep.upper
    assert rep.values[-1] >= 0.95 * rep.lower


def test_bbm_constant_zero(gp24):
    grid, _, data = gp24
    const = GridFunction(grid, np.full(grid.size, 1.3))
    rep = bbm_bracket(data, const, 1.0, [0.8, 0.9], QUAD)
    assert np.all(rep.values == 0.0)
    assert rep.upper == 0.0


def test_bbm_bracket_narrows_at_smaller_scales(gp48):
    grid, _, data = gp48
    u = compact_bump(grid, (0.0, 0.0), 0.7)
    h = float(np.max(grid.spacing))
    hi_window = (16 * h * h, 160 * h * h)
    lo_window = (4 * h * h, 40 * h * h)
    hi = bbm_bracket(data, u, 1.0, [0.9], QUAD, window=hi_window)
    lo = bbm_bracket(data, u, 1.0, [0.9], QUAD, window=lo_window)
    assert lo.upper / lo.lower <= hi.upper / hi.lower + 0.02


# ---------------------------------------------------------------------------
# Fractional-power boundedness
# ---------------------------------------------------------------------------


def test_ls_bound_ratio_family(gp24):
    grid, _, data = gp24
    rng = np.random.default_rng(4)
    ratios = []
    for _ in range(5):
        u = compact_bump(grid, rng.uniform(-0.4, 0.4, 2), rng.uniform(0.4, 0.8))
        ratios.append(ls_boundedness_check(data, u, 0.25, 1.0, 0.5, QUAD))
    assert max(ratios) / min(ratios) < 3.0


def test_ls_bound_zero_input(gp24):
    grid, _, data = gp24
    zero = GridFunction(grid, np.zeros(grid.size))
    assert ls_boundedness_check(data, zero, 0.25, 1.0, 0.5, QUAD) == 0.0


def test_ls_bound_qinf(gp24):
    grid, _, data = gp24
    u = gaussian(grid, width=0.5)
    val = ls_boundedness_check(data, u, 0.25, 1.0, 0.6, QUAD, q=inf)
    assert np.isfinite(val) and val > 0


def test_ls_bound_exponent_guard(gp24):
    grid, _, data = gp24
    u = gaussian(grid)
    with pytest.raises(ConfigurationError):
        ls_boundedness_check(data, u, 0.3, 1.0, 0.5, QUAD)  # beta < 2s
    with pytest.raises(ConfigurationError):
        ls_boundedness_check(data, u, 0.25, 2.0, 0.5, QUAD)  # beta = 2s, p > 1


def test_general_p_budget_guard(gp64):
    grid, _, data = gp64
    u = gaussian(grid, width=0.5)
    with pytest.raises(ConfigurationError):
        EnergyProfile(data, u, 1.5)  # dense pair route needs a small grid
