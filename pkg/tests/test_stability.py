import math

import numpy as np
import pytest

from dplab.spectral import Field, functional_S, inner_l2, l2_norm, make_grid, shift
from dplab.profile import WaveParams, build_profile
from dplab.stability import (
    FoliationError,
    InvalidInitialData,
    Perturbation,
    SweepConfig,
    apriori_linfty_check,
    certificate_polynomial,
    foliation_decompose,
    gamma_constant,
    loglog_slope,
    make_perturbed_initial,
    max_slope,
    momentum_w,
    orbital_distance,
    perturbation_direction,
    stability_certificate,
    stability_sweep,
    worker_count,
)
from dplab.spectral import h3_norm

from conftest import band_limited

# certificate constants of the lab at (c, k) = (3, 1): alpha/2 from the N=1024 coercivity
# constant, gamma from the closed-form profile bounds
ALPHA = 0.1752493970549654 / 2
GAMMA = 0.7097940941441195


@pytest.fixture(scope="module")
def small_wave():
    return build_profile(WaveParams(3, 1), make_grid(64.0, 1024))


def odd_direction(w):
    """A unit-L2 direction orthogonal to phi_x that is not even."""
    G = Field(w.grid, np.exp(-((w.grid.x - 1.0) ** 2)))
    g = G - inner_l2(G, w.phi_x) / inner_l2(w.phi_x, w.phi_x) * w.phi_x
    return g / l2_norm(g)


# ------------------------------------------------------------------ initial data


def test_zero_delta_is_profile(small_wave):
    u0 = make_perturbed_initial(small_wave, Perturbation(0.0))
    assert np.array_equal(u0.values, small_wave.phi.values)


@pytest.mark.parametrize("shape", ["gaussian", "random:1", "random:7", "kernel"])
def test_directions_have_unit_h3_norm(small_wave, shape):
    v = perturbation_direction(small_wave, Perturbation(1e-3, shape))
    assert h3_norm(v) == pytest.approx(1.0, rel=1e-13)


def test_random_direction_is_reproducible_and_band_limited(small_wave):
    a = perturbation_direction(small_wave, Perturbation(1e-3, "random:3"))
    b = perturbation_direction(small_wave, Perturbation(1e-3, "random:3"))
    assert np.array_equal(a.values, b.values)
    coef = np.fft.fft(a.values)
    high = np.abs(small_wave.grid.mode_index) > small_wave.grid.N // 8
    assert np.max(np.abs(coef[high])) <= 1e-12 * np.max(np.abs(coef))


@pytest.mark.parametrize("shape", ["gaussian", "random:2", "kernel"])
def test_small_h3_perturbations_keep_w_positive(small_wave, shape):
    delta = 0.999 * 2 * math.sqrt(2) * small_wave.k / 3
    u0 = make_perturbed_initial(small_wave, Perturbation(delta, shape, s_matched=False))
    assert momentum_w(u0, small_wave.k).values.min() > 0


@pytest.mark.parametrize("shape", ["gaussian", "random:4"])
def test_s_matching(small_wave, shape):
    u0 = make_perturbed_initial(small_wave, Perturbation(1e-2, shape, s_matched=True))
    S = functional_S(small_wave.phi)
    assert abs(functional_S(u0) - S) <= 1e-12 * S


def test_nonpositive_w_rejected(small_wave):
    dip = Field(small_wave.grid, -np.exp(-small_wave.grid.x**2))
    with pytest.raises(InvalidInitialData):
        make_perturbed_initial(small_wave, Perturbation(100.0, "custom", s_matched=False, custom=dip))


def test_unknown_shape(small_wave):
    with pytest.raises(ValueError):
        make_perturbed_initial(small_wave, Perturbation(1e-3, "square"))


# --------------------------------------------------------------- orbit geometry


def test_distance_to_itself(small_wave):
    od = orbital_distance(small_wave.phi, small_wave)
    assert od.d2 <= 1e-10 and od.dinf <= 1e-10 and abs(od.x0) <= 1e-10


@pytest.mark.parametrize("m", [1, 17, -250, 511, -512])
def test_grid_shift_recovered(small_wave, m):
    g = small_wave.grid
    a = m * g.dx
    u = Field(g, np.roll(small_wave.phi.values, m))
    od = orbital_distance(u, small_wave)
    assert od.d2 <= 1e-10
    assert -g.L <= od.x0 < g.L
    assert (od.x0 - a + g.L) % (2 * g.L) - g.L == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("a", [0.3 * 0.125, 5.37, -20.01])
def test_subgrid_shift_recovered(small_wave, a):
    od = orbital_distance(shift(small_wave.phi, a), small_wave)
    assert od.x0 == pytest.approx(a, abs=1e-8)
    assert od.d2 <= 1e-10


def test_distance_bounded_by_perturbation(small_wave):
    rng = np.random.default_rng(0)
    for eps in (1e-4, 1e-2, 1e-1):
        v = band_limited(small_wave.grid, rng)
        v = v / l2_norm(v)
        assert orbital_distance(small_wave.phi + eps * v, small_wave).d2 <= eps


def test_distance_is_an_infimum(small_wave):
    rng = np.random.default_rng(1)
    g = small_wave.grid
    u = shift(small_wave.phi, 3.3) + 0.05 * band_limited(g, rng)
    d2 = orbital_distance(u, small_wave).d2
    for a in rng.uniform(-g.L, g.L, 100):
        assert d2 <= l2_norm(u - shift(small_wave.phi, a)) + 1e-10


def test_flat_correlation_falls_back(small_wave):
    od = orbital_distance(small_wave.grid.zeros(), small_wave)
    assert od.x0 == 0.0
    assert od.d2 == pytest.approx(l2_norm(small_wave.phi))


def test_foliation_of_translate(small_wave):
    r, h = foliation_decompose(shift(small_wave.phi, 2.71), small_wave)
    assert r == pytest.approx(2.71, abs=1e-10)
    assert l2_norm(h) <= 1e-10


def test_foliation_expansion(small_wave):
    # with g orthogonal to phi_x the shift r = 0 already satisfies the constraint
    g = odd_direction(small_wave)
    for eps in (1e-2, 1e-3):
        r, h = foliation_decompose(small_wave.phi + eps * g, small_wave)
        assert abs(r) <= eps * eps
        assert l2_norm(h - eps * g) <= eps * eps


def test_foliation_orthogonality_and_shift_consistency(small_wave):
    rng = np.random.default_rng(2)
    gr = small_wave.grid
    px = l2_norm(small_wave.phi_x)
    for _ in range(25):
        a = rng.uniform(-gr.L, gr.L)
        eps = 10 ** rng.uniform(-4, -1.5)
        v = band_limited(gr, rng)
        u = shift(small_wave.phi, a) + eps * v / l2_norm(v)
        r, h = foliation_decompose(u, small_wave)
        assert abs(inner_l2(h, small_wave.phi_x)) <= 1e-10 * px * px
        if l2_norm(h) >= 1e-6:
            assert abs(inner_l2(h, small_wave.phi_x)) <= 1e-10 * l2_norm(h) * px
        x0 = orbital_distance(u, small_wave).x0
        assert abs((r - x0 + gr.L) % (2 * gr.L) - gr.L) <= gr.dx


def test_foliation_refuses_far_data(small_wave):
    with pytest.raises(FoliationError):
        foliation_decompose(small_wave.grid.zeros(), small_wave)


# ------------------------------------------------------------------ inequalities


def test_linfty_slack_vanishes_on_orbit(small_wave):
    assert apriori_linfty_check(small_wave.phi, small_wave, 0.0, 1.0) == 0.0


def test_linfty_detects_spike():
    # a unit spike one cell wide has ||g||_2^(2/3) = dx^(1/3); the bracket is about 4.5 at (3, 1),
    # so the violation needs dx below roughly 0.01
    w = build_profile(WaveParams(3, 1), make_grid(64.0, 2**15))
    v = np.array(w.phi.values)
    v[20000] += 1.0
    assert apriori_linfty_check(Field(w.grid, v), w, 0.0, 1.0) < 0


def test_max_slope_against_fine_grid():
    w = build_profile(WaveParams(3, 1), make_grid(64.0, 2**16))
    assert max_slope(w.params) == pytest.approx(np.max(np.abs(w.phi_x.values)), rel=1e-7)
    assert max_slope(w.params) >= np.max(np.abs(w.phi_x.values))


def test_gamma_formula(small_wave):
    expected = (1 + 4 / 3 + 2 * small_wave.max_height + 2 * max_slope(small_wave.params)) / 6
    assert gamma_constant(small_wave) == expected
    assert gamma_constant(small_wave) == pytest.approx(GAMMA, rel=1e-12)


# ------------------------------------------------------------------- certificate


def test_certificate_at_zero_level():
    cert = stability_certificate(ALPHA, 0.0, GAMMA, 0.0)
    assert cert.r1 == 0.0 and cert.r2 > 0


@pytest.mark.parametrize("Q", [1e-10, 1e-7, 1e-6])
def test_certificate_roots(Q):
    cert = stability_certificate(ALPHA, 0.0, GAMMA, Q)
    assert 0 < cert.r1 < cert.r2
    for r in (cert.r1, cert.r2):
        assert abs(certificate_polynomial(r, ALPHA, 0.0, GAMMA, Q)) <= 1e-12 * Q + 1e-18
    assert certificate_polynomial(0.5 * (cert.r1 + cert.r2), ALPHA, 0.0, GAMMA, Q) < 0
    # leading-order size
    assert cert.r1 == pytest.approx(math.sqrt(Q / ALPHA), rel=0.2)


def test_certificate_r2_stays_order_one():
    r2 = [stability_certificate(ALPHA, 0.0, GAMMA, Q).r2 for Q in (1e-12, 1e-10, 1e-8)]
    assert np.ptp(r2) <= 0.01 * r2[0]
    assert r2[0] == pytest.approx(stability_certificate(ALPHA, 0.0, GAMMA, 0.0).r2, rel=1e-3)


def test_certificate_without_roots():
    cert = stability_certificate(ALPHA, 0.0, GAMMA, 1e-3)
    assert not cert.has_roots and cert.r2 is None


def test_beta_shrinks_the_window():
    loose = stability_certificate(ALPHA, 0.0, GAMMA, 1e-8)
    tight = stability_certificate(ALPHA, 1.0, GAMMA, 1e-8)
    assert tight.r1 >= loose.r1 and tight.r2 < loose.r2


@pytest.mark.parametrize("args", [(0.0, 0, 1, 1e-8), (1, -1, 1, 1e-8), (1, 0, -1, 1e-8), (1, 0, 1, -1e-8)])
def test_certificate_rejects_invalid_constants(args):
    with pytest.raises(ValueError):
        stability_certificate(*args)


def test_certificate_slope_over_fixed_window():
    Q = np.logspace(-8, -4, 9)
    certs = [stability_certificate(ALPHA, 0.0, GAMMA, q) for q in Q]
    assert all(c.has_roots for c in certs)
    assert abs(loglog_slope(Q, [c.r1 for c in certs]) - 0.5) <= 0.02


def test_certificate_slope_tends_to_one_half():
    Q = np.logspace(-14, -12, 5)
    r1 = [stability_certificate(ALPHA, 0.0, GAMMA, q).r1 for q in Q]
    assert abs(loglog_slope(Q, r1) - 0.5) <= 0.02


# -------------------------------------------------------------------------- sweep


def test_worker_count(monkeypatch):
    monkeypatch.delenv("DPLAB_THREADS", raising=False)
    assert worker_count(3, 3) == 3
    assert worker_count(8, 2) == 2
    monkeypatch.setenv("DPLAB_THREADS", "1")
    assert worker_count(3, 3) == 1


def test_short_sweep(small_wave):
    rep = stability_sweep(small_wave, [0.0, 1e-2], 2.0, SweepConfig(workers=1, dt=2e-3, sample_every=50))
    base, pert = rep.members
    assert base.sup_d2 <= 1e-4
    assert pert.sup_d2 <= 10 * pert.delta
    assert all(m.min_linfty_slack >= 0 for m in rep.members)
    assert all(m.foliation_failures == 0 and m.shift_mismatch <= small_wave.grid.dx for m in rep.members)
    assert rep.monotone_in_delta()
    summary = rep.summary()
    assert summary["alpha_certificate"] == pytest.approx(0.5 * rep.alpha)
    assert [m["delta"] for m in summary["members"]] == [0.0, 1e-2]
    ts = pert.timeseries
    assert ts.shape[1] == 8 and np.all(np.diff(ts[:, 0]) > 0)
    assert np.max(np.abs(ts[:, 4:6])) <= 1e-8


def test_sweep_is_deterministic_across_worker_counts(small_wave):
    cfg = dict(dt=2e-3, sample_every=50)
    a = stability_sweep(small_wave, [1e-3, 2e-3], 0.5, SweepConfig(workers=1, **cfg))
    b = stability_sweep(small_wave, [1e-3, 2e-3], 0.5, SweepConfig(workers=2, **cfg))
    for ma, mb in zip(a.members, b.members):
        assert ma.delta == mb.delta
        assert np.array_equal(ma.timeseries, mb.timeseries)
