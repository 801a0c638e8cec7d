"""Semimetrics, constants, TV bounds, transport estimates and assumption checks."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qg2l import rng as streams
from qg2l.coupling import ConditionError, ControlSpec, run_coupled_ensemble
from qg2l.ergodics import (
    Ensemble,
    SemimetricParams,
    alpha0,
    c_xi_estimate,
    check_A2,
    check_assumptions,
    compute_constants,
    contraction_factor,
    d_N,
    d_tilde,
    default_gamma,
    delta_of_alpha,
    empirical_wasserstein,
    kappa2,
    lyapunov_V,
    m_delta_estimate,
    pairwise,
    rho_formula,
    semimetric_from_theta,
    spectral_gap_check,
    theta_alpha,
    tv_bound_large,
    tv_bound_small,
    wasserstein_coupling_bound,
)
from qg2l.model import ModelParams, NoiseSpec, integrate_ensemble
from qg2l.spectral import (
    Grid,
    LayerWeights,
    Operators,
    SpectralField,
    SpectralField2L,
    measure_k0,
    random_field,
    triple_norm_minus1,
)


def scaled(grid, w, rng, V, slope=2.0):
    q = random_field(grid, rng, slope=slope)
    return q * math.sqrt(V / Operators(grid, w).vort_minus1_sq(q.modes))


@pytest.fixture(scope="module")
def calm():
    """Weakly stratified, strongly damped setup on a 16^2 grid where conditions pass."""
    g = Grid(2 * math.pi, 16)
    w = LayerWeights(1.0, 1.0, 0.02, 0.02)
    p = ModelParams(g, w, nu=0.01, r=0.2, dt=0.05)
    spec = NoiseSpec.power_law(g, 3e-4, 0.0)
    cs = ControlSpec(0.2, g.n_modes)
    k0 = measure_k0(g, w, np.random.default_rng(0), trials=400)
    consts = compute_constants(p, spec, cs, k0)
    assert consts.all_pass
    return g, w, p, spec, cs, consts


class TestTheta:
    def test_hand_value(self, small_grid):
        # |||x - y||| = 1 and |||x|||^2 = 1 with alpha = 1/4, upsilon = 2
        w = LayerWeights()
        ops = Operators(small_grid, w)
        x = np.zeros((2, small_grid.n_modes), dtype=complex)
        x[0, 0] = 1.0
        x = x / math.sqrt(ops.vort_minus1_sq(x))
        X, Y = SpectralField2L(small_grid, x), SpectralField2L(small_grid, np.zeros_like(x))
        sp = SemimetricParams(0.25, 2.0)
        assert theta_alpha(X, Y, sp, w) == pytest.approx(math.exp(0.5), rel=1e-15)
        assert theta_alpha(X, Y, sp, w) == pytest.approx(1.6487212707, rel=1e-10)

    def test_zero_cases(self, small_grid, weights, rng):
        sp = SemimetricParams(0.3, 1.5)
        y = random_field(small_grid, rng)
        z = SpectralField2L.zeros(small_grid)
        assert theta_alpha(y, y, sp, weights) == 0
        assert theta_alpha(z, y, sp, weights) == pytest.approx(
            triple_norm_minus1(y, weights) ** (2 * 0.3), rel=1e-14)

    def test_asymmetric(self, small_grid, weights, rng):
        sp = SemimetricParams(0.3, 1.5)
        x, y = scaled(small_grid, weights, rng, 1.0), scaled(small_grid, weights, rng, 2.0)
        assert theta_alpha(x, y, sp, weights) != pytest.approx(theta_alpha(y, x, sp, weights))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.1, 3.0), alpha=st.floats(0.01, 0.5),
           ups=st.floats(0.01, 3.0))
    def test_scaling_identity(self, seed, c, alpha, ups):
        g = Grid(2 * math.pi, 16)
        w = LayerWeights(0.6, 1.5, 2.5, 1.0)
        r = np.random.default_rng(seed)
        x, y = scaled(g, w, r, 0.5), scaled(g, w, r, 0.5)
        sp = SemimetricParams(alpha, ups)
        vx = lyapunov_V(x, w)
        want = c ** (2 * alpha) * math.exp(alpha * ups * (c**2 - 1) * vx) * theta_alpha(x, y, sp, w)
        assert theta_alpha(x * c, y * c, sp, w) == pytest.approx(want, rel=1e-9)


class TestSemimetrics:
    def test_from_theta_hand_value(self):
        assert semimetric_from_theta(0.3, 0.4, 2) == pytest.approx(0.6, rel=1e-15)
        assert semimetric_from_theta(0.9, 0.8, 2) == 1.0

    def test_d_N_properties(self, small_grid, weights, rng):
        sp = SemimetricParams(0.2, 1.0, N_scale=3.0)
        for _ in range(10):
            x = scaled(small_grid, weights, rng, rng.uniform(0, 2))
            y = scaled(small_grid, weights, rng, rng.uniform(0, 2))
            d = d_N(x, y, sp, weights)
            assert d == d_N(y, x, sp, weights)
            assert 0 < d <= 1
            assert d_N(x, x, sp, weights) == 0

    def test_far_apart_capped(self, small_grid, weights, rng):
        sp = SemimetricParams(0.2, 1.0)
        x, y = scaled(small_grid, weights, rng, 50.0), scaled(small_grid, weights, rng, 60.0)
        assert d_N(x, y, sp, weights) == 1.0

    def test_d_tilde_recomputed(self, small_grid, weights, rng):
        sp = SemimetricParams(0.1, 0.7, N_scale=1.5)
        x, y = scaled(small_grid, weights, rng, 1e-4), scaled(small_grid, weights, rng, 4e-5)
        vx, vy = triple_norm_minus1(x, weights) ** 2, triple_norm_minus1(y, weights) ** 2
        dist = triple_norm_minus1(x - y, weights)
        tx = dist ** 0.2 * math.exp(0.1 * 0.7 * vx)
        ty = dist ** 0.2 * math.exp(0.1 * 0.7 * vy)
        dn = min(1.5 * tx, 1.5 * ty, 1.0)
        assert dn < 1
        assert d_tilde(x, y, sp, weights) == pytest.approx(math.sqrt(dn * (1 + vx + vy)), rel=1e-13)
        assert d_tilde(x, x, sp, weights) == 0

    def test_d_tilde_at_zero_energy(self, small_grid, weights, rng):
        # V(x) = V(y) = 0 forces x = y = 0, so the reduction to sqrt(d_N) is the trivial one
        sp = SemimetricParams(0.1, 0.7)
        z = SpectralField2L.zeros(small_grid)
        assert d_tilde(z, z, sp, weights) == math.sqrt(d_N(z, z, sp, weights)) == 0

    def test_lyapunov(self, small_grid, weights, rng):
        x = random_field(small_grid, rng)
        assert lyapunov_V(SpectralField2L.zeros(small_grid), weights) == 0
        assert lyapunov_V(x, weights) == pytest.approx(triple_norm_minus1(x, weights) ** 2, rel=1e-15)

    def test_pairwise_matches_scalar(self, small_grid, weights, rng):
        sp = SemimetricParams(0.2, 1.0, 2.0)
        a = np.stack([scaled(small_grid, weights, rng, 0.2).modes for _ in range(3)])
        b = np.stack([scaled(small_grid, weights, rng, 0.3).modes for _ in range(4)])
        ops = Operators(small_grid, weights)
        m = pairwise(a, b, sp, ops)
        for i, j in itertools.product(range(3), range(4)):
            want = d_tilde(SpectralField2L(small_grid, a[i]), SpectralField2L(small_grid, b[j]), sp, weights)
            assert m[i, j] == pytest.approx(want, rel=1e-13)
        with pytest.raises(ValueError):
            pairwise(a, b, sp, ops, kind="euclid")

    @pytest.mark.parametrize("kw", [dict(alpha=0, upsilon=1), dict(alpha=0.6, upsilon=1),
                                    dict(alpha=0.2, upsilon=0), dict(alpha=0.2, upsilon=1, N_scale=0.5)])
    def test_params_rejected(self, kw):
        with pytest.raises(ValueError):
            SemimetricParams(**kw)


class TestConstants:
    def test_alpha0_examples(self):
        assert alpha0(2.0, 1.0) == 0.5
        assert alpha0(6.0, 1.0) == pytest.approx(0.25, rel=1e-15)

    @settings(max_examples=100)
    @given(ups=st.floats(1e-6, 1e6), gam=st.floats(1e-6, 1e6))
    def test_alpha0_bounds(self, ups, gam):
        a = alpha0(ups, gam)
        assert 0 < a <= 0.5
        assert a < 2 * gam / ups

    def test_kappa2_hand_value(self):
        assert kappa2(1.0, 1.0, 1.0, 0.25) == 0.5
        assert default_gamma(1.0, 1.0, 1.0) == 0.25

    def test_unforced_noiseless_limit(self, small_grid, weights):
        p = ModelParams(small_grid, weights, nu=0.5, r=0.3)
        c = compute_constants(p, NoiseSpec.zero(small_grid), ControlSpec(0.3, 60), k0=0.8)
        assert c.kappa3 == c.T_Q == c.r0 == 0
        assert c.chi == c.kappa0 == 0.6
        assert c.cond_r and c.all_pass

    def test_formula_values(self, small_grid, weights):
        f = np.zeros(small_grid.n_modes, dtype=complex)
        f[[0, 3]] = [0.5, 0.2j]
        p = ModelParams(small_grid, weights, nu=0.2, r=0.4, f=SpectralField(small_grid, f))
        spec = NoiseSpec.power_law(small_grid, 0.01, 1.0, n_active=30)
        cs = ControlSpec(0.4, 30)
        c = compute_constants(p, spec, cs, k0=0.3)
        lam = small_grid.lam
        fm2 = 2 * small_grid.area * np.sum(np.abs(f) ** 2 / lam**2)
        assert c.f_minus2_sq == pytest.approx(fm2, rel=1e-13)
        gamma = lam[0] ** 2 * 0.2 / (4 * spec.trace)
        assert c.gamma == pytest.approx(gamma)
        k2 = 0.2 - 2 * gamma * spec.trace
        k3 = weights.h1 * fm2 / 0.2 + spec.t_q(weights)
        kB = 0.09 / 0.4
        assert c.kappa2 == pytest.approx(k2) and c.kappa2 == pytest.approx(0.1)
        assert c.kappa3 == pytest.approx(k3)
        assert c.upsilon == pytest.approx(2 * kB / k2)
        assert c.chi == pytest.approx(0.8 - 2 * kB / k2 * k3)
        assert c.r0 == pytest.approx(2 * kB / 0.2 * k3)
        a0 = 1 + 2 * 2.5
        assert c.gamma1 == pytest.approx(0.2 / a0) and c.K_V == pytest.approx(k3 * a0 / 0.2)
        assert c.gamma_abs == pytest.approx(gamma / (2 * weights.h1))

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_flags_match_manual_evaluation(self, small_grid, weights, seed):
        r = np.random.default_rng(seed)
        nu, rr, k0 = r.uniform(0.05, 1), r.uniform(0, 2), r.uniform(0.01, 1)
        n = int(r.integers(1, small_grid.n_modes + 1))
        a = r.uniform(0.01, 1)
        spec = NoiseSpec.power_law(small_grid, r.uniform(1e-4, 1e-2), r.uniform(0, 2))
        p = ModelParams(small_grid, weights, nu=nu, r=rr)
        c = compute_constants(p, spec, ControlSpec(a, n), k0)
        lam1, lamn = small_grid.lambda1, small_grid.lambda_n(n)
        trq = 2 * spec.sigma.sum()
        gam = lam1**2 * nu / (4 * trq)
        k2 = nu - 2 * gam * trq / lam1**2
        kB = k0**2 / (2 * nu)
        k3 = spec.t_q(weights)
        a0 = 1 + 2 * max(weights.F1, weights.F2) / lam1
        assert c.cond_r == (rr > 2 * kB / nu * k3)
        assert c.cond_n == (nu - 2 * a / lamn > 0)
        assert c.cond_viscosity == (2 * rr + lam1 / a0 * (nu - 2 * rr / lamn) > 4 * kB / nu * k3)
        assert c.cond_kappa == (2 * rr > 2 * kB * k3 / k2)

    def test_flags_independent(self, small_grid, weights):
        # r = 0 fails r > r0 while the viscous variant can still hold
        p = ModelParams(small_grid, weights, nu=1.0, r=0.0)
        c = compute_constants(p, NoiseSpec.power_law(small_grid, 1e-3, 0), ControlSpec(0.1, 10), k0=0.1)
        assert c.cond_viscosity and not c.cond_r and not c.all_pass
        assert "condition_r" in c.failed()

    def test_errors(self, small_grid, weights):
        p = ModelParams(small_grid, weights, nu=1.0, r=0.1)
        spec = NoiseSpec.power_law(small_grid, 1e-2, 1.0)
        cs = ControlSpec(0.1, 10)
        limit = small_grid.lambda1**2 / (2 * spec.trace)
        with pytest.raises(ValueError, match="gamma"):
            compute_constants(p, spec, cs, 0.1, gamma=limit)
        with pytest.raises(ValueError, match="gamma"):
            compute_constants(p, spec, cs, 0.1, gamma=-1)

    def test_semimetric_from_constants(self, calm):
        consts = calm[-1]
        sp = SemimetricParams.from_constants(consts)
        assert sp.alpha == pytest.approx(consts.alpha0 / 2) and sp.upsilon == consts.upsilon
        with pytest.raises(ConditionError):
            SemimetricParams.from_constants(consts, alpha=consts.alpha0)


class TestTVBounds:
    def test_small_exact(self):
        assert tv_bound_small(0.0, 0.5) == 0.0
        assert tv_bound_small(1.0, 0.5) == min(1.0, 2 ** (1 / 3))
        assert tv_bound_small(1e-3, 0.5) == pytest.approx(2 ** (1 / 3) * 1e-2, rel=1e-15)

    def test_large_exact(self):
        assert tv_bound_large(0.0, 0.5) == pytest.approx(1 - 1 / 48, abs=1e-15)
        assert tv_bound_large(0.1, 0.5) < 1
        # the margin underflows in double precision for large M, no overflow error
        assert tv_bound_large(1e300, 0.01) == 1.0

    @settings(max_examples=100)
    @given(m1=st.floats(0, 50), m2=st.floats(0, 50), delta=st.floats(0.01, 0.99))
    def test_large_monotone_and_range(self, m1, m2, delta):
        lo, hi = sorted((m1, m2))
        a, b = tv_bound_large(lo, delta), tv_bound_large(hi, delta)
        assert 1 - 1 / 48 <= a <= b <= 1
        assert 0 <= tv_bound_small(lo, delta) <= tv_bound_small(hi, delta) <= 1

    @pytest.mark.parametrize("delta", [0, 1, -0.1])
    def test_delta_range(self, delta):
        with pytest.raises(ValueError):
            tv_bound_small(0.1, delta)
        with pytest.raises(ValueError):
            tv_bound_large(0.1, delta)

    def test_delta_of_alpha(self):
        assert delta_of_alpha(1 / 3) == pytest.approx(0.5)

    def test_estimators(self):
        costs = np.array([0.0, 1.0, 4.0, 9.0])
        m, se = m_delta_estimate(costs, 0.5)
        assert m == pytest.approx(1.5) and se == pytest.approx(np.std([0, 1, 2, 3], ddof=1) / 2)
        c, _ = c_xi_estimate(np.zeros(5), 2.0, 0.3)
        assert c == 1.0


class TestEmpiricalWasserstein:
    def make(self, g, samples):
        return Ensemble(g, np.asarray(samples), 1.0, 0, 0)

    def test_identity_zero(self, small_grid, weights, rng):
        sp = SemimetricParams(0.2, 1.0)
        s = np.stack([scaled(small_grid, weights, rng, 0.3).modes for _ in range(5)])
        assert empirical_wasserstein(self.make(small_grid, s), self.make(small_grid, s), sp, weights) == 0

    def test_singleton(self, small_grid, weights, rng):
        sp = SemimetricParams(0.2, 1.0)
        x, y = scaled(small_grid, weights, rng, 0.3), scaled(small_grid, weights, rng, 0.3)
        w_ = empirical_wasserstein(self.make(small_grid, [x.modes]), self.make(small_grid, [y.modes]), sp, weights)
        assert w_ == pytest.approx(d_tilde(x, y, sp, weights), rel=1e-14)

    @pytest.mark.parametrize("n", [3, 5, 6])
    def test_brute_force(self, small_grid, weights, rng, n):
        sp = SemimetricParams(0.3, 2.0, 1.2)
        a = np.stack([scaled(small_grid, weights, rng, rng.uniform(0.01, 0.2)).modes for _ in range(n)])
        b = np.stack([scaled(small_grid, weights, rng, rng.uniform(0.01, 0.2)).modes for _ in range(n)])
        for kind in ("d_tilde", "d_N"):
            cost = pairwise(a, b, sp, Operators(small_grid, weights), kind)
            perms = [np.mean(cost[np.arange(n), list(pm)]) for pm in itertools.permutations(range(n))]
            got = empirical_wasserstein(self.make(small_grid, a), self.make(small_grid, b), sp, weights, kind)
            assert got == pytest.approx(min(perms), rel=1e-12)
            assert got <= np.mean(np.diag(cost)) * (1 + 1e-12)

    def test_errors(self, small_grid, weights, rng):
        sp = SemimetricParams(0.2, 1.0)
        s = np.stack([random_field(small_grid, rng).modes for _ in range(3)])
        with pytest.raises(ValueError, match="differ"):
            empirical_wasserstein(self.make(small_grid, s), self.make(small_grid, s[:2]), sp, weights)
        big = np.zeros((129, 2, small_grid.n_modes), dtype=complex)
        with pytest.raises(ValueError, match="128"):
            empirical_wasserstein(self.make(small_grid, big), self.make(small_grid, big), sp, weights)
        with pytest.raises(ValueError):
            Ensemble(small_grid, s[0], 1.0, 0, 0)


class TestContraction:
    def test_coincident_rejected(self, calm, rng):
        g, w, p, spec, _, consts = calm
        x = scaled(g, w, rng, 1.0)
        sp = SemimetricParams.from_constants(consts)
        with pytest.raises(ValueError, match="coincide"):
            contraction_factor(x, x, p, spec, sp, 1.0, 4)

    def test_failed_conditions_rejected(self, calm, rng):
        g, w, p, spec, _, consts = calm
        bad = type(consts)(**{**consts.to_dict(), "cond_r": False})
        sp = SemimetricParams.from_constants(consts)
        with pytest.raises(ConditionError):
            contraction_factor(scaled(g, w, rng, 1), scaled(g, w, rng, 1), p, spec, sp, 1.0, 4, consts=bad)

    def test_rho_below_one_and_decreasing(self, calm):
        g, w, p, spec, _, consts = calm
        sp = SemimetricParams.from_constants(consts)
        x = scaled(g, w, streams.stream(5, streams.INITIAL, 0), 1.0)
        y = scaled(g, w, streams.stream(5, streams.INITIAL, 1), 1.0)
        rhos = [contraction_factor(x, y, p, spec, sp, t, 32, seed=5, consts=consts)[0].rho
                for t in (1.0, 4.0, 12.0)]
        assert rhos[-1] < 1
        assert rhos[0] > rhos[1] > rhos[2]

    def test_thread_count_irrelevant(self, calm):
        g, w, p, spec, _, consts = calm
        sp = SemimetricParams.from_constants(consts)
        x = scaled(g, w, streams.stream(6, streams.INITIAL, 0), 1.0)
        y = scaled(g, w, streams.stream(6, streams.INITIAL, 1), 1.0)
        a, ea, _ = contraction_factor(x, y, p, spec, sp, 0.5, 20, seed=6, threads=1)
        b, eb, _ = contraction_factor(x, y, p, spec, sp, 0.5, 20, seed=6, threads=4)
        assert a == b
        np.testing.assert_array_equal(ea.samples, eb.samples)


class TestCouplingBound:
    def test_coincident_zero(self, calm, rng):
        g, w, _, _, _, consts = calm
        x = scaled(g, w, rng, 1.0)
        sp = SemimetricParams.from_constants(consts)
        b = wasserstein_coupling_bound(x, x, consts, sp, 3.0, np.zeros(4), np.zeros(4), w)
        assert b.tv == 0 and b.drift_term == 0 and b.total == 0

    def test_drift_term_decays(self, calm, rng):
        g, w, _, _, _, consts = calm
        x, y = scaled(g, w, rng, 1.0), scaled(g, w, rng, 1.0)
        sp = SemimetricParams.from_constants(consts)
        costs, xi = np.full(8, 0.01), np.full(8, 0.05)
        terms = [wasserstein_coupling_bound(x, y, consts, sp, t, costs, xi, w).drift_term
                 for t in (0.0, 10.0, 1e6)]
        assert terms[0] > terms[1] > terms[2] == 0
        assert terms[0] == pytest.approx(
            math.exp(sp.alpha * sp.upsilon * 2 * w.h1 * 0.05) * theta_alpha(x, y, sp, w), rel=1e-12)

    def test_rejects_failing_conditions(self, calm, rng):
        g, w, _, _, _, consts = calm
        bad = type(consts)(**{**consts.to_dict(), "cond_kappa": False})
        sp = SemimetricParams.from_constants(consts)
        x, y = scaled(g, w, rng, 1.0), scaled(g, w, rng, 1.0)
        with pytest.raises(ConditionError):
            wasserstein_coupling_bound(x, y, bad, sp, 1.0, np.ones(2), np.ones(2), w)

    def test_bound_dominates_assignment_estimate(self, calm):
        g, w, p, spec, cs, consts = calm
        sp = SemimetricParams.from_constants(consts)
        x = scaled(g, w, streams.stream(8, streams.INITIAL, 0), 1.0)
        y = scaled(g, w, streams.stream(8, streams.INITIAL, 1), 1.0)
        t = 4.0
        res, _, _ = contraction_factor(x, y, p, spec, sp, t, 32, seed=8, consts=consts)
        rec = run_coupled_ensemble(np.broadcast_to(x.modes, (32, 2, g.n_modes)),
                                   np.broadcast_to(y.modes, (32, 2, g.n_modes)), p, spec, cs, t,
                                   streams.streams(8, streams.FIXED_PAIR, range(32)))
        b = wasserstein_coupling_bound(x, y, consts, sp, t, rec.cost[:, -1], rec.x.xi_hat(consts.gamma), w)
        assert b.total >= res.w_hat_dN
        rf = rho_formula(consts, sp, t, rec.x.xi_hat(consts.gamma), cs, spec, w)
        assert rf.C_xi >= 1 and rf.rho > 0


def _ensemble_run(calm, S, T, seed, coincident=False, noise=True):
    g, w, p, spec, cs, consts = calm
    if not noise:
        spec = NoiseSpec.zero(g)
    x = np.stack([scaled(g, w, streams.stream(seed, streams.INITIAL, 2 * i), 1.0).modes for i in range(S)])
    y = x if coincident else np.stack(
        [scaled(g, w, streams.stream(seed, streams.INITIAL, 2 * i + 1), 1.0).modes for i in range(S)])
    coupled = run_coupled_ensemble(x, y, p, spec, cs, T, streams.streams(seed, streams.PAIR, range(S)))
    singles = integrate_ensemble(x, p, spec, T, streams.streams(seed, streams.TRAJECTORY, range(S)))
    return coupled, singles, spec


class TestAssumptions:
    def test_trivial_pass(self, calm):
        g, w, p, _, cs, _ = calm
        coupled, singles, spec = _ensemble_run(calm, 16, 2.0, 1, coincident=True, noise=False)
        consts = compute_constants(p, spec, cs, 0.05)
        rep = check_assumptions(coupled, singles, consts, cs, g)
        assert rep.all_pass
        assert rep["A1"]["pathwise_slack"] == 0 and rep["A3"]["max_ratio"] == 0

    def test_passing_config(self, calm):
        g, w, p, spec, cs, consts = calm
        coupled, singles, _ = _ensemble_run(calm, 16, 5.0, 2)
        ops = Operators(g, w)
        snaps = list(ops.psi(singles.snapshots.reshape(-1, 2, g.n_modes)))
        k0 = measure_k0(g, w, np.random.default_rng(1), trials=400, extra=snaps)
        consts = compute_constants(p, spec, cs, k0)
        tail = integrate_ensemble(np.zeros((256, 2, g.n_modes), dtype=complex), p, spec, 1.0,
                                  streams.streams(2, streams.TAIL, range(256))).xi_hat(consts.gamma)
        rep = check_assumptions(coupled, singles, consts, cs, g, tail_xi=tail)
        for k in ("A1", "A2", "A3", "A4"):
            assert rep[k]["pass"], (k, rep[k])
        assert rep["A1"]["measured_decay_rate"] > 0

    def test_insufficient_samples(self, calm):
        g, w, p, spec, cs, consts = calm
        coupled, singles, _ = _ensemble_run(calm, 8, 0.5, 3)
        with pytest.raises(ValueError, match="16"):
            check_assumptions(coupled, singles, consts, cs, g)

    def test_negative_control_flags_A1(self, calm):
        g, w, p, spec, cs, _ = calm
        p0 = p.with_(r=0.0, nu=0.01)
        neg = (g, w, p0, spec, cs, None)
        coupled, singles, _ = _ensemble_run(neg, 16, 1.0, 4)
        consts = compute_constants(p0, spec, cs, 0.05)
        rep = check_assumptions(coupled, singles, consts, cs, g)
        assert not rep["A1"]["pass"] and not rep["A1"]["kappa0_positive"]
        assert not rep.all_pass and not consts.all_pass

    def test_tail_rows(self, calm):
        consts = calm[-1]
        rng = np.random.default_rng(0)
        # exponential with the extremal rate satisfies the bound
        xi = rng.exponential(1 / (2 * consts.gamma), 2000)
        out = check_A2([], consts, tail_xi=xi)
        assert out["tail_pass"] and len(out["tail"]) == 12
        heavy = rng.exponential(3 / (2 * consts.gamma), 2000)
        assert not check_A2([], consts, tail_xi=heavy)["tail_pass"]


class TestSpectralGap:
    def test_observables(self, calm):
        g, w, p, spec, _, consts = calm
        sp = SemimetricParams.from_constants(consts)
        ops = Operators(g, w)
        starts = np.stack([scaled(g, w, streams.stream(9, streams.GAP, i), 0.5 + i).modes for i in range(4)])
        from qg2l.ergodics import sample_ensemble
        pushed = [sample_ensemble(SpectralField2L(g, s), p, spec, 4.0, 16, 9, streams.GAP + 10 + i)
                  for i, s in enumerate(starts)]
        mu = sample_ensemble(SpectralField2L(g, starts[0]), p, spec, 20.0, 16, 9, streams.GAP)
        obs = {
            "constant": lambda q: np.ones(len(q)),
            "clipped_norm": lambda q: np.minimum(np.sqrt(ops.vort_minus1_sq(q)), 1.0),
        }
        out = spectral_gap_check(obs, mu, starts, pushed, sp, w, rho=1.0,
                                 duality=(pushed[0], pushed[1]))
        assert out["constant"]["skipped"] and out["constant"]["lhs"] == 0 and out["constant"]["pass"]
        assert 0 < out["clipped_norm"]["seminorm"] < np.inf
        assert out["duality"]["pass"]
