"""Acceptance gate: every quantitative exit criterion at its stated
tolerance, one printed pass/fail line per criterion.

Canonical configuration GP64: m = k = 1, alpha = 1 (homogeneous dimension
3), box half-width 2, 64 nodes per axis.  GP24/GP48 serve as oracle and
refinement-stability companions."""

import numpy as np
import pytest
from math import gamma, inf

from grushin_lab import (
    Grid,
    GridFunction,
    GridSpec,
    QuadratureSpec,
    SetSpec,
    assemble,
    eigendecompose,
    fractional_power_balakrishnan,
    fractional_power_spectral,
    lp_norm,
    rasterize,
    riesz_potential,
)
from grushin_lab import besov, metric, perimeter, semigroup, sobolev
from grushin_lab.cli import ExperimentConfig, run
from grushin_lab.quadrature import log_trapezoid
from tests.conftest import compact_bump, gaussian

QUAD = QuadratureSpec(1e-6, 1e4, 16)
PQUAD = QuadratureSpec(1e-6, 1e3, 16)


def criterion(num, name, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num:2d}] {status}: {name} ({detail})")
    assert ok, f"criterion {num} {name}: {detail}"


def test_c01_algebraic_semigroup_suite(gp64):
    grid, op, data = gp64
    rng = np.random.default_rng(1)
    u = gaussian(grid, width=0.45)
    v = GridFunction(grid, rng.standard_normal(grid.size))
    w = GridFunction(grid, rng.standard_normal(grid.size))
    defects = {}
    a = semigroup.heat_apply(data, 0.05, semigroup.heat_apply(data, 0.03, u))
    b = semigroup.heat_apply(data, 0.08, u)
    defects["law"] = lp_norm(GridFunction(grid, a.values - b.values), 2)
    lhs = data.inner(semigroup.heat_apply(data, 0.05, v), w)
    rhs = data.inner(v, semigroup.heat_apply(data, 0.05, w))
    defects["self-adjoint"] = abs(lhs - rhs) / abs(lhs)
    pos = semigroup.heat_apply(
        data, 0.05, GridFunction(grid, np.abs(v.values)))
    defects["positivity"] = max(0.0, -float(np.min(pos.values)))
    for p in (1, 2, inf):
        ratio = lp_norm(semigroup.heat_apply(data, 0.1, v), p) / lp_norm(v, p)
        defects[f"contraction-{p}"] = max(0.0, ratio - 1.0)
    s = 0.5
    c1 = fractional_power_spectral(data, s, semigroup.heat_apply(data, 0.07, u))
    c2 = semigroup.heat_apply(data, 0.07, fractional_power_spectral(data, s, u))
    defects["commutation"] = lp_norm(
        GridFunction(grid, c1.values - c2.values), 2)
    left = riesz_potential(data, 2 * s, fractional_power_spectral(data, s, u))
    right = fractional_power_spectral(data, s, riesz_potential(data, 2 * s, u))
    defects["inversion-left"] = lp_norm(
        GridFunction(grid, left.values - u.values), 2)
    defects["inversion-right"] = lp_norm(
        GridFunction(grid, right.values - u.values), 2)
    worst = max(defects.values())
    criterion(1, "algebraic semigroup suite", worst < 1e-8,
              f"max defect {worst:.2e}")


def test_c02_mass_conservation_defect(gp64):
    grid, _, data = gp64
    d_small = semigroup.stochastic_completeness_defect(data, 0.01, 1.0)
    d_large = semigroup.stochastic_completeness_defect(data, 0.1, 1.0)
    margins = [semigroup.stochastic_completeness_defect(data, 0.05, m)
               for m in (0.6, 0.9, 1.2)]
    ok = (d_small < 1e-3 and d_large < 5e-2
          and margins[0] > margins[1] > margins[2])
    criterion(2, "interior mass conservation", ok,
              f"defect(0.01)={d_small:.2e}, defect(0.1)={d_large:.2e}")


def test_c03_balakrishnan_vs_spectral(gp64):
    grid, op, data = gp64
    u = gaussian(grid, width=0.45)
    quad = QuadratureSpec.with_total(1e-6, 1e3, 200)
    worst = 0.0
    for s in (0.25, 0.5, 0.75):
        result = fractional_power_balakrishnan(op, data, s, u, quad)
        oracle = fractional_power_spectral(data, s, u)
        rel = lp_norm(GridFunction(grid, result.function.values - oracle.values),
                      2) / lp_norm(oracle, 2)
        worst = max(worst, rel)
    criterion(3, "subordination-integral fractional power", worst < 1e-3,
              f"max relative L2 mismatch {worst:.2e}")


def test_c04_half_power_subordination(gp64):
    grid, _, data = gp64
    sub = semigroup.SubordinatorSpec(s=0.5, route="poisson_quadrature")
    mass = semigroup.subordinator_mass(sub, 0.5)
    u = gaussian(grid, width=0.5)
    pois = semigroup.subordinate_apply(data, sub, 0.5, u)
    spec = semigroup.subordinate_apply(
        data, semigroup.SubordinatorSpec(s=0.5), 0.5, u)
    rel = lp_norm(GridFunction(grid, pois.values - spec.values), 2) \
        / lp_norm(spec, 2)
    ok = abs(mass - 1.0) < 1e-8 and rel < 1e-4
    criterion(4, "half-power subordination", ok,
              f"mass defect {abs(mass - 1):.1e}, route mismatch {rel:.1e}")


def test_c05_gaussian_bound_sandwich(gp64, euclid64):
    grid, _, data = gp64
    sources = [grid.node_index(c)
               for c in ((0.0, 0.0), (0.5, 0.0), (1.0, 0.0), (0.4, 0.4))]
    fields = metric.distance_fields(grid, sources)
    vol = metric.make_volume_fn(grid)
    cols = [semigroup.kernel_column(data, t, s)
            for t in (0.01, 0.04) for s in sources]
    fit = semigroup.gaussian_bound_fit(cols, fields, vol, margin=0.5,
                                       max_pairs=200, rng=0)
    g0, _, d0 = euclid64
    src0 = [g0.node_index((0.0, 0.0)), g0.node_index((0.5, 0.5))]
    f0 = {s: metric.euclidean_distance_field(g0, s) for s in src0}
    cols0 = [semigroup.kernel_column(d0, t, s)
             for t in (0.01, 0.04) for s in src0]
    fit0 = semigroup.gaussian_bound_fit(cols0, f0, metric.make_volume_fn(g0),
                                        margin=0.5, max_pairs=200, rng=0)
    ok = fit.ratio_spread < 50 and abs(fit0.slope + 0.25) < 0.025
    criterion(5, "two-sided kernel bound", ok,
              f"spread {fit.ratio_spread:.1f} over {fit.n_pairs} pairs, "
              f"flat-case slope {fit0.slope:.4f}")


def test_c06_ultracontractivity_exponents(gp64):
    grid, _, data = gp64
    narrow = compact_bump(grid, (0.0, 0.0), 0.08)
    window = (0.2, 0.8)
    fit_inf = semigroup.ultracontractivity_fit(data, narrow, 1, inf, window)
    fit_12 = semigroup.ultracontractivity_fit(data, narrow, 1, 2, window)
    ok = (abs(fit_inf.slope + 1.5) < 0.15 and abs(fit_12.slope + 0.75) < 0.075)
    criterion(6, "smoothing-rate exponents", ok,
              f"slopes {fit_inf.slope:.3f} (target -1.5), "
              f"{fit_12.slope:.3f} (target -0.75)")


def test_c07_metric_volume_suite(gp64):
    grid, _, data = gp64
    g0 = Grid(GridSpec(1, 1, 0.0, 2.0, 64))
    f0 = metric.cc_distance(g0, (0.0, 0.0))
    e0 = metric.euclidean_distance_field(g0, f0.source)
    h = float(np.max(g0.spacing))
    dist_err = float(np.max(np.abs(f0.values.values - e0.values.values)))
    ratios = []
    for xc in (0.0, 0.5, 1.0):
        fld = metric.cc_distance(grid, (xc, 0.0))
        for r in np.linspace(0.15, 0.8, 6):
            vol = metric.ball_volume(fld, r, warn=False)
            ratios.append(vol / metric.model_ball_volume(r, xc, 2, 1, 1.0))
    band = max(ratios) / min(ratios)
    origin = metric.cc_distance(grid, (0.0, 0.0))
    slope = metric.volume_scaling_fit(origin, np.geomspace(0.55, 1.1, 8))
    doubling = []
    for xc in (0.0, 0.5, 1.0):
        fld = metric.cc_distance(grid, (xc, 0.0))
        for r in (0.3, 0.45):
            doubling.append(
                metric.ball_volume(fld, 2 * r, warn=False)
                / metric.ball_volume(fld, r, warn=False))
    ok = (dist_err < 2.0 * h and band < 12.0
          and abs(slope - 3.0) < 0.15
          and min(doubling) >= 4.0 / 1.25 and max(doubling) <= 8.0 * 1.5)
    criterion(7, "metric and volume suite", ok,
              f"flat-distance err {dist_err:.3f} (h={h:.3f}), model band "
              f"{band:.1f}, origin slope {slope:.2f}, doubling "
              f"[{min(doubling):.2f}, {max(doubling):.2f}]")


def _equivalence_bands(grid, data, rng, beta=0.3, s=0.5, n_bumps=10):
    sources = metric.strided_sources(grid, 2)
    fields = metric.distance_fields(grid, sources)
    diam = max(float(np.max(f.values.values)) for f in fields.values())
    r = QuadratureSpec(float(np.min(grid.spacing)) / 2, 2 * diam, 16).nodes()
    heat_params = besov.BesovParams(1, 1, 2 * beta)
    sub_params = besov.BesovParams(1, 1, 2 * beta, s=s)
    heat_ratios, sub_ratios = [], []
    for _ in range(n_bumps):
        center = rng.uniform(-0.7, 0.7, size=2)
        width = rng.uniform(0.35, 0.9)
        u = compact_bump(grid, center, width)
        prof = besov.EnergyProfile(data, u, 1.0)
        n_heat = besov.seminorm_heat(data, u, heat_params, QUAD, profile=prof)
        n_sub = besov.seminorm_subordinate(data, u, sub_params, QUAD,
                                           profile=prof)
        x = besov.difference_energy(u, fields, r, 1.0)
        diffs = {}
        for expo in (beta, s * beta):
            e2 = 2.0 * expo
            body = log_trapezoid(r, x * r ** (-e2 - 1.0))
            tail = x[-1] * r[-1] ** (-e2) / e2
            diffs[expo] = body + tail
        heat_ratios.append(n_heat / diffs[beta])
        sub_ratios.append(n_sub / diffs[s * beta])
    return (max(heat_ratios) / min(heat_ratios),
            max(sub_ratios) / min(sub_ratios))


def test_c08_equivalence_bands(gp48, gp64):
    rng64 = np.random.default_rng(8)
    band64, band64_sub = _equivalence_bands(gp64[0], gp64[2], rng64)
    rng48 = np.random.default_rng(8)
    band48, band48_sub = _equivalence_bands(gp48[0], gp48[2], rng48)
    drift = abs(band64 / band48 - 1.0)
    ok = (band64 < 20 and band64_sub < 20 and drift < 0.3)
    criterion(8, "seminorm equivalence bands", ok,
              f"heat band {band64:.2f}, subordinate band {band64_sub:.2f}, "
              f"refinement drift {drift:.2%}")


def test_c09_minmax_property(gp64):
    grid, _, data = gp64
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        u1 = compact_bump(grid, rng.uniform(-0.6, 0.6, 2),
                          rng.uniform(0.3, 0.8))
        u2 = compact_bump(grid, rng.uniform(-0.6, 0.6, 2),
                          rng.uniform(0.3, 0.8))
        prof1 = besov.minmax_profiles(data, u1, u2, 1.0)
        for params in (besov.BesovParams(1, 1, 0.4),
                       besov.BesovParams(1, inf, 0.4)):
            rep = besov.minmax_defect(data, u1, u2, params, QUAD,
                                      profiles=prof1)
            worst = max(worst, rep.defect / max(rep.rhs, 1e-300))
        rep = besov.minmax_defect(data, u1, u2, besov.BesovParams(2, 2, 0.4),
                                  QUAD)
        worst = max(worst, rep.defect / max(rep.rhs, 1e-300))
    criterion(9, "min-max property", worst <= 1e-10,
              f"worst relative defect {worst:.2e} over 50 pairs")


def test_c10_small_exponent_limit(gp64):
    grid, _, data = gp64
    u = compact_bump(grid, (0.0, 0.0), 0.85)
    rels = {}
    for p in (1.0, 2.0):
        rep = besov.ms_limit_scan(data, u, p, [0.4, 0.2, 0.1, 0.05], QUAD)
        rels[p] = abs(rep.extrapolated / rep.target - 1.0)
    ok = all(r < 0.1 for r in rels.values())
    criterion(10, "small-exponent limit 4/p", ok,
              f"relative errors p=1: {rels[1.0]:.2%}, p=2: {rels[2.0]:.2%}")


def test_c11_large_exponent_sandwich(gp64):
    grid, _, data = gp64
    u = compact_bump(grid, (0.0, 0.0), 0.6)
    rep = besov.bbm_bracket(data, u, 1.0, [0.8, 0.9, 0.95, 0.98], QUAD)
    val = rep.values[-1]
    ok = 0.95 * rep.lower <= val <= 1.05 * rep.upper
    criterion(11, "large-exponent sandwich", ok,
              f"value {val:.3f} vs bracket [{rep.lower:.3f}, {rep.upper:.3f}]")


def test_c12_perimeter_identity_and_ordering(gp64):
    grid, _, data = gp64
    box = rasterize(SetSpec.euclidean_box((0, 0), (0.5, 0.5)), grid)
    s = 0.25
    res = perimeter.measure_perimeters(data, box, s, PQUAD)
    pref = s / gamma(1.0 - s)
    identity = abs(pref * res.p_star - res.p_ls) / res.p_ls
    mol = perimeter.perimeter_via_mollification(data, box, s,
                                                [0.05, 0.02, 0.01, 0.005])
    ordering = (np.all(np.diff(mol.values) >= -1e-12)
                and mol.estimate <= pref * res.p_star + 1e-8 * res.p_star)
    ok = identity < 1e-8 and bool(ordering)
    criterion(12, "perimeter identity and relaxed ordering", ok,
              f"identity defect {identity:.2e}")


def test_c13_coarea(gp64):
    grid, _, data = gp64
    s = 0.25
    box = rasterize(SetSpec.euclidean_box((0, 0), (0.5, 0.5)), grid)
    d_ind = perimeter.coarea_defect(data, box.function(), s, PQUAD)
    vals = np.zeros(grid.size)
    for hw in (0.9, 0.6, 0.3):
        vals += rasterize(SetSpec.euclidean_box((0, 0), (hw, hw)),
                          grid).indicator
    d_stair = perimeter.coarea_defect(data, GridFunction(grid, vals), s, PQUAD)
    bump = compact_bump(grid, (0.13, -0.21), 0.8)  # off-centre: all-distinct values
    d_bump = perimeter.coarea_defect(data, bump, s, PQUAD, levels=64)
    ok = d_ind == 0.0 and d_stair < 1e-10 and d_bump < 1e-2
    criterion(13, "coarea identity", ok,
              f"indicator {d_ind:.1e}, staircase {d_stair:.1e}, "
              f"binned bump {d_bump:.2e}")


def _iso_family(grid):
    family = []
    for name, hs in (("box-square", (0.5, 0.5)), ("box-wide", (0.75, 0.35)),
                     ("box-tall", (0.35, 0.75))):
        family.append((name, rasterize(SetSpec.euclidean_box((0, 0), hs), grid)))
    for xc in (0.0, 0.5, 1.0):
        fld = metric.cc_distance(grid, (xc, 0.0))
        family.append((f"ball-x{xc:g}", rasterize(
            SetSpec.metric_ball((xc, 0.0), 0.6), grid,
            metric_field=fld.values)))
    base = SetSpec.euclidean_box((0, 0), (0.28, 0.28))
    for lam in (1.0, 1.25, 1.5, 2.0):
        family.append((f"dilate-{lam:g}",
                       rasterize(SetSpec.dilate(lam, base), grid)))
    return family


def test_c14_isoperimetric_scan(gp48, gp64):
    mins = {}
    for label, (grid, _, data) in (("48", gp48), ("64", gp64)):
        family = _iso_family(grid)
        for s in (0.1, 0.25, 0.4):
            rep = perimeter.isoperimetric_scan(data, family, s, PQUAD)
            assert rep.min_ratio_star > 0
            assert rep.min_ratio_ls > 0
            assert rep.min_ratio_inf > 0
            mins[label, s] = rep.min_ratio_star
    drift = max(abs(mins["64", s] / mins["48", s] - 1.0)
                for s in (0.1, 0.25, 0.4))
    # scaling invariance on paired grids at s = 0.25
    grid, _, data = gp64
    base = SetSpec.euclidean_box((0, 0), (0.4, 0.4))
    expo = (3.0 - 0.5) / 3.0
    ratios = []
    for lam in (1.0, 1.5, 2.0):
        g = Grid(grid.spec.dilated(lam)) if lam != 1.0 else grid
        d = eigendecompose(assemble(g)) if lam != 1.0 else data
        mask = rasterize(SetSpec.dilate(lam, base), g)
        ratios.append(perimeter.perimeter_star(d, mask, 0.25, PQUAD)
                      / mask.measure**expo)
    lam_spread = max(ratios) / min(ratios)
    ok = drift < 0.1 and lam_spread < 1.05
    criterion(14, "isoperimetric ratios", ok,
              f"family-min drift {drift:.2%}, dilation spread "
              f"{lam_spread:.4f}")


def test_c15_small_s_limit(gp64):
    grid, _, data = gp64
    box = rasterize(SetSpec.euclidean_box((0, 0), (0.5, 0.5)), grid)
    rep = perimeter.small_s_limit_scan(data, box, [0.2, 0.1, 0.05], QUAD)
    rel = abs(rep.extrapolated / rep.target - 1.0)
    criterion(15, "small-s measure limit", rel < 0.1,
              f"extrapolated {rep.extrapolated:.4f} vs target "
              f"{rep.target:.4f} ({rel:.2%})")


def test_c16_sobolev_hls(gp48, gp64):
    strong = {}
    for label, (grid, _, data) in (("48", gp48), ("64", gp64)):
        u = compact_bump(grid, (0.0, 0.0), 0.6)
        strong[label] = sobolev.sobolev_ratio(data, u, 0.5, 2.0).ratio
    stability = abs(strong["64"] / strong["48"] - 1.0)
    grid, _, data = gp64
    u = gaussian(grid, width=0.4)
    weak_rep = sobolev.sobolev_ratio(data, u, 0.5, 1.0)
    lam = 1.5
    dil_grid = Grid(grid.spec.dilated(lam))
    dil_data = eigendecompose(assemble(dil_grid))
    scale = np.array([lam, lam**2])

    def dil_field(coords):
        return np.exp(-np.sum((coords / scale) ** 2, axis=1) / (2 * 0.4**2))

    r0 = sobolev.hls_ratio(data, u, 1.0, 2.0)
    r1 = sobolev.hls_ratio(dil_data, dil_grid.sample(dil_field), 1.0, 2.0)
    invariance = abs(r1.ratio / r0.ratio - 1.0)
    weak_le_strong = r0.weak_ratio <= r0.ratio + 1e-12
    ok = (np.isfinite(strong["64"]) and strong["64"] > 0
          and weak_rep.weak_ratio > 0 and weak_rep.q == pytest.approx(1.5)
          and stability < 0.2 and invariance < 0.05 and weak_le_strong)
    criterion(16, "potential and embedding ratios", ok,
              f"strong(2->6) {strong['64']:.3f} (drift {stability:.2%}), "
              f"weak q=3/2 {weak_rep.weak_ratio:.3f}, scale drift "
              f"{invariance:.2%}")


def test_c17_ledoux_estimate(gp64):
    grid, _, data = gp64
    sigma_grid = np.geomspace(1e-4, 10.0, 40)
    rng = np.random.default_rng(17)
    worst = np.inf
    slack = 0.0
    for _ in range(3):
        u = compact_bump(grid, rng.uniform(-0.4, 0.4, 2),
                         rng.uniform(0.4, 0.7))
        for t in (0.01, 0.1, 1.0):
            for s in (0.2, 0.4):
                rep = semigroup.ledoux_defect(data, s, t, u, sigma_grid)
                worst = min(worst, rep.defect)
                slack = max(slack, rep.monotone_slack)
    ok = worst >= -1e-8 and slack <= 1e-10
    criterion(17, "one-parameter heat-defect bound", ok,
              f"min defect {worst:.3e}, monotonicity slack {slack:.1e}")


def test_c18_cli_determinism(tmp_path):
    mapping = {
        "experiment": "metric-volumes",
        "seed": 11,
        "grid": {"m": 1, "k": 1, "alpha": 1.0, "half_width": 2.0,
                 "points": 16},
        "quadrature": {"t_min": 1e-5, "t_max": 1e3, "nodes_per_decade": 8},
    }
    run(ExperimentConfig.from_mapping(dict(mapping), out_dir=str(tmp_path / "a")))
    run(ExperimentConfig.from_mapping(dict(mapping), out_dir=str(tmp_path / "b")))
    a = (tmp_path / "a" / "results.csv").read_bytes()
    b = (tmp_path / "b" / "results.csv").read_bytes()
    criterion(18, "deterministic reports", a == b,
              f"{len(a)} bytes, byte-identical: {a == b}")
