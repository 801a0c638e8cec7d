"""Semimetrics, explicit ergodicity constants and Monte Carlo contraction checks.

Two scales of the martingale term appear.  Trajectory records carry
``xi_hat = sup_s (X_s - gamma <X>_s)`` with ``P(xi_hat >= R) <= exp(-2 gamma R)``.
The abstract energy inequality uses ``Xi = 2 h1 xi_hat`` whose tail parameter is
therefore ``gamma / (2 h1)``; every formula that mixes ``Xi`` with ``gamma``
(``alpha0``, ``C_Xi`` and the Girsanov bound) uses that rescaled value.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import rng as R
from .coupling import ConditionError, ControlSpec, CoupledRecord, q_inv_norm_sq
from .model import (
    ModelParams,
    NoiseSpec,
    TrajectoryRecord,
    concat_records,
    integrate_ensemble,
    run_chunked,
)
from .spectral import Grid, LayerWeights, Operators, SpectralField2L, _check_same

MAX_ASSIGNMENT = 128


# -- constants ---------------------------------------------------------------------


def alpha0(upsilon: float, gamma: float) -> float:
    """``min(1/2, 2 gamma / (upsilon + 2 gamma))``."""
    if math.isinf(gamma):
        return 0.5
    return min(0.5, 2 * gamma / (upsilon + 2 * gamma))


def kappa2(nu: float, trace_q: float, lambda1: float, gamma: float) -> float:
    return nu - 2 * gamma * trace_q / lambda1**2


def default_gamma(nu: float, trace_q: float, lambda1: float) -> float:
    """``lambda1^2 nu / (4 Tr Q)``; any value works without noise, 1 is used."""
    return lambda1**2 * nu / (4 * trace_q) if trace_q > 0 else 1.0


@dataclass(frozen=True)
class ErgodicityConstants:
    nu: float
    r: float
    h1: float
    lambda1: float
    lambda_n: float
    a0: float
    k0: float
    k_B: float
    trace_Q: float
    T_Q: float
    f_minus2_sq: float
    gamma: float
    gamma_abs: float
    kappa0: float
    kappa1: float
    kappa2: float
    kappa3: float
    upsilon: float
    chi: float
    alpha0: float
    gamma1: float
    K: float
    K_V: float
    r0: float
    kappa0_conservative: float
    kappa0_viscous: float
    cond_r: bool
    cond_n: bool
    cond_viscosity: bool
    cond_kappa: bool

    @property
    def all_pass(self) -> bool:
        return self.cond_r and self.cond_n and self.cond_kappa and self.chi > 0

    def failed(self) -> list[str]:
        names = {"cond_r": "condition_r", "cond_n": "condition_n",
                 "cond_viscosity": "condition_r_nu", "cond_kappa": "kappa0 > kappa1 kappa3 / kappa2"}
        return [v for k, v in names.items() if not getattr(self, k)]

    def to_dict(self) -> dict:
        return asdict(self)


def forcing_minus2_sq(p: ModelParams) -> float:
    """``||f||_{-2}^2`` of the upper-layer forcing (unweighted)."""
    return float(p.grid.sq(p.f.modes, -2))


def compute_constants(p: ModelParams, spec: NoiseSpec, cs: ControlSpec, k0: float,
                      gamma: float | None = None) -> ErgodicityConstants:
    """Evaluate every explicit constant and condition flag of the ergodicity theorem."""
    g, w = p.grid, p.w
    lam1 = g.lambda1
    trq = spec.trace
    if gamma is None:
        gamma = default_gamma(p.nu, trq, lam1)
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if trq > 0 and not gamma < lam1**2 * p.nu / (2 * trq):
        raise ValueError(
            f"gamma = {gamma:.6g} must be below lambda1^2 nu / (2 Tr Q) = {lam1**2 * p.nu / (2 * trq):.6g}"
        )
    k2 = kappa2(p.nu, trq, lam1, gamma)
    if not k2 > 0:
        raise ValueError(f"kappa2 = {k2:.6g} must be positive")
    k_B = k0**2 / (2 * p.nu)
    tq = spec.t_q(w)
    fm2 = forcing_minus2_sq(p)
    k3 = w.h1 * fm2 / p.nu + tq
    k0_ = 2 * p.r
    k1 = 2 * k_B
    ups = k1 / k2
    chi = k0_ - ups * k3
    gamma_abs = gamma / (2 * w.h1)
    a0 = w.a0(lam1)
    lam_n = g.lambda_n(cs.n)
    visc = p.nu - 2 * p.r / lam_n
    gamma1 = p.nu * lam1 / a0
    r0 = 2 * k_B / p.nu * k3
    return ErgodicityConstants(
        nu=p.nu, r=p.r, h1=w.h1, lambda1=lam1, lambda_n=lam_n, a0=a0, k0=k0, k_B=k_B,
        trace_Q=trq, T_Q=tq, f_minus2_sq=fm2, gamma=gamma, gamma_abs=gamma_abs,
        kappa0=k0_, kappa1=k1, kappa2=k2, kappa3=k3, upsilon=ups, chi=chi,
        alpha0=alpha0(ups, gamma_abs), gamma1=gamma1, K=k3, K_V=k3 / gamma1, r0=r0,
        kappa0_conservative=k0_ / a0,
        kappa0_viscous=k0_ + lam1 / a0 * visc,
        cond_r=bool(p.r > r0),
        cond_n=bool(p.nu - 2 * cs.a / lam_n > 0),
        cond_viscosity=bool(2 * p.r + lam1 / a0 * visc > 4 * k_B / p.nu * k3),
        cond_kappa=bool(k0_ > k1 * k3 / k2),
    )


# -- semimetrics -------------------------------------------------------------------


@dataclass(frozen=True)
class SemimetricParams:
    alpha: float
    upsilon: float
    N_scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha <= 0.5:
            raise ValueError(f"alpha must lie in (0, 1/2], got {self.alpha}")
        if not self.upsilon > 0:
            raise ValueError(f"upsilon must be positive, got {self.upsilon}")
        if not self.N_scale >= 1:
            raise ValueError(f"N_scale must be >= 1, got {self.N_scale}")

    @classmethod
    def from_constants(cls, consts: ErgodicityConstants, alpha: float | None = None,
                       N_scale: float = 1.0):
        """Pick ``alpha`` (default: half of ``alpha0``) and check ``alpha < alpha0``."""
        a = 0.5 * consts.alpha0 if alpha is None else alpha
        if not a < consts.alpha0:
            raise ConditionError("alpha0", f"alpha = {a:.6g} must be below alpha0 = {consts.alpha0:.6g}")
        return cls(a, consts.upsilon, N_scale)


def _log_theta(dist_sq: np.ndarray, vx: np.ndarray, sp: SemimetricParams) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return sp.alpha * np.log(dist_sq) + sp.alpha * sp.upsilon * vx


def semimetric_from_theta(theta_xy, theta_yx, N_scale: float):
    """``min(N theta(x, y), N theta(y, x), 1)``."""
    return np.minimum(np.minimum(N_scale * theta_xy, N_scale * theta_yx), 1.0)


def _d_from_parts(dist_sq, vx, vy, sp: SemimetricParams):
    with np.errstate(over="ignore"):
        return semimetric_from_theta(np.exp(_log_theta(dist_sq, vx, sp)),
                                     np.exp(_log_theta(dist_sq, vy, sp)), sp.N_scale)


def lyapunov_V(x: SpectralField2L, w: LayerWeights) -> float:
    return float(Operators(x.grid, w).vort_minus1_sq(x.modes))


def theta_alpha(x: SpectralField2L, y: SpectralField2L, sp: SemimetricParams,
                w: LayerWeights) -> float:
    """``|||x - y|||^(2 alpha) exp(alpha upsilon |||x|||^2)``."""
    _check_same(x, y)
    ops = Operators(x.grid, w)
    lt = _log_theta(ops.vort_minus1_sq(x.modes - y.modes), ops.vort_minus1_sq(x.modes), sp)
    return float(np.exp(lt))


def d_N(x: SpectralField2L, y: SpectralField2L, sp: SemimetricParams, w: LayerWeights) -> float:
    _check_same(x, y)
    ops = Operators(x.grid, w)
    return float(_d_from_parts(ops.vort_minus1_sq(x.modes - y.modes),
                               ops.vort_minus1_sq(x.modes), ops.vort_minus1_sq(y.modes), sp))


def d_tilde(x: SpectralField2L, y: SpectralField2L, sp: SemimetricParams, w: LayerWeights) -> float:
    """``sqrt(d_N(x, y) (1 + V(x) + V(y)))``."""
    dn = d_N(x, y, sp, w)
    return math.sqrt(dn * (1 + lyapunov_V(x, w) + lyapunov_V(y, w)))


def pairwise(a: np.ndarray, b: np.ndarray, sp: SemimetricParams, ops: Operators,
             kind: str = "d_tilde") -> np.ndarray:
    """Cost matrix ``(len(a), len(b))`` of ``d_N`` or ``d_tilde`` between mode batches."""
    va = ops.vort_minus1_sq(a)
    vb = ops.vort_minus1_sq(b)
    dist = np.stack([ops.vort_minus1_sq(a[i] - b) for i in range(len(a))])
    dn = _d_from_parts(dist, va[:, None], vb[None, :], sp)
    if kind == "d_N":
        return dn
    if kind == "d_tilde":
        return np.sqrt(dn * (1 + va[:, None] + vb[None, :]))
    raise ValueError(f"unknown semimetric {kind!r}")


# -- TV bounds and the coupling decomposition --------------------------------------


def tv_bound_small(m_delta: float, delta: float) -> float:
    """``min(1, 2^((1-delta)/(1+delta)) M^(1/(1+delta)))``."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if m_delta < 0:
        raise ValueError("M_delta must be non-negative")
    return min(1.0, 2 ** ((1 - delta) / (1 + delta)) * m_delta ** (1 / (1 + delta)))


def tv_bound_large(m_delta: float, delta: float) -> float:
    """``1 - min(1/8, exp(-(2^(2-delta) M)^(1/delta))) / 6``."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if m_delta < 0:
        raise ValueError("M_delta must be non-negative")
    return 1 - min(1 / 8, _exp_neg_power(2 ** (2 - delta) * m_delta, 1 / delta)) / 6


def _exp_neg_power(x: float, k: float) -> float:
    """``exp(-x^k)`` without overflow in the power."""
    if x == 0:
        return 1.0
    lp = k * math.log(x)
    return 0.0 if lp > 700 else math.exp(-math.exp(lp))


def delta_of_alpha(alpha: float) -> float:
    return alpha / (1 - alpha)


def m_delta_estimate(costs: np.ndarray, delta: float) -> tuple[float, float]:
    """Monte Carlo mean of ``cost^delta`` and its standard error."""
    v = np.asarray(costs, dtype=float) ** delta
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.inf
    return float(v.mean()), se


def c_xi_estimate(xi_abs: np.ndarray, upsilon: float, alpha: float) -> tuple[float, float]:
    """``E exp(upsilon alpha Xi)`` with its standard error."""
    v = np.exp(upsilon * alpha * np.asarray(xi_abs, dtype=float))
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.inf
    return float(v.mean()), se


@dataclass(frozen=True)
class CouplingBound:
    tv: float
    tv_small: float
    tv_large: float
    m_delta: float
    m_delta_se: float
    delta: float
    c_xi: float
    c_xi_se: float
    drift_term: float

    @property
    def total(self) -> float:
        return self.tv + self.drift_term


def wasserstein_coupling_bound(x0: SpectralField2L, y0: SpectralField2L,
                               consts: ErgodicityConstants, sp: SemimetricParams, t: float,
                               costs: np.ndarray, xi_hat: np.ndarray,
                               w: LayerWeights) -> CouplingBound:
    """Right-hand side of the coupling-lemma estimate of ``W_{d_N}(P_t x0, P_t y0)``.

    ``costs`` are realized Girsanov costs up to ``t`` and ``xi_hat`` the recorded
    martingale suprema of the same coupled runs.
    """
    if not consts.all_pass:
        raise ConditionError("conditions", "failed: " + ", ".join(consts.failed() or ["chi"]))
    _check_same(x0, y0)
    delta = delta_of_alpha(sp.alpha)
    if np.array_equal(x0.modes, y0.modes):
        return CouplingBound(0.0, 0.0, 0.0, 0.0, 0.0, delta, 1.0, 0.0, 0.0)
    md, md_se = m_delta_estimate(costs, delta)
    small = tv_bound_small(md, delta)
    large = tv_bound_large(md, delta)
    cx, cx_se = c_xi_estimate(2 * w.h1 * np.asarray(xi_hat), sp.upsilon, sp.alpha)
    th = theta_alpha(x0, y0, sp, w)
    drift = sp.N_scale * cx * th * math.exp(-consts.chi * sp.alpha * t)
    return CouplingBound(min(small, large), small, large, md, md_se, delta, cx, cx_se, drift)


@dataclass(frozen=True)
class RhoFormula:
    """Symbolic contraction constant ``C_alpha / N + C_Xi exp(-chi alpha t)`` evaluated
    with estimated inputs; reported next to the measured value, never asserted."""

    C_tilde_delta: float
    C_alpha: float
    C_K: float
    C_xi: float
    rho: float
    eps1: float
    eps: float


def rho_formula(consts: ErgodicityConstants, sp: SemimetricParams, t: float, xi_hat: np.ndarray,
                cs: ControlSpec, spec: NoiseSpec, w: LayerWeights) -> RhoFormula:
    delta = delta_of_alpha(sp.alpha)
    c = cs.a**2 * consts.lambda_n
    xi_abs = 2 * w.h1 * np.asarray(xi_hat)
    c_xi, _ = c_xi_estimate(xi_abs, sp.upsilon, sp.alpha)
    c_xi_delta, _ = c_xi_estimate(xi_abs, sp.upsilon, delta)
    ct = (c * q_inv_norm_sq(spec, cs.n, w) / consts.chi) ** delta * c_xi_delta
    c_alpha = 2 ** ((1 - delta) / (1 + delta)) * ct ** (1 / (1 + delta))
    kv4 = 4 * consts.K_V
    c_k = (4 * kv4) ** sp.alpha * math.exp(sp.alpha * sp.upsilon * kv4)
    decay = math.exp(-consts.chi * sp.alpha * t)
    eps1 = min(1 / 8, _exp_neg_power(2 ** (2 - delta) * ct * c_k, 1 / delta)) / 6
    return RhoFormula(ct, c_alpha, c_k, c_xi, c_alpha / sp.N_scale + c_xi * decay,
                      eps1, eps1 - sp.N_scale * c_k * c_xi * decay)


# -- ensembles and empirical transport ---------------------------------------------


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Samples of one transition law ``P_t(x0, .)``."""

    grid: Grid
    samples: np.ndarray = field(repr=False)
    time: float
    seed: int
    purpose: int

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 3 or s.shape[1:] != (2, self.grid.n_modes):
            raise ValueError(f"samples must have shape (S, 2, {self.grid.n_modes})")

    def __len__(self):
        return len(self.samples)


def empirical_wasserstein(A: Ensemble, B: Ensemble, sp: SemimetricParams, w: LayerWeights,
                          kind: str = "d_tilde") -> float:
    """Optimal-assignment transport cost between two equal-size ensembles."""
    if len(A) != len(B):
        raise ValueError(f"ensemble sizes differ: {len(A)} vs {len(B)}")
    if len(A) > MAX_ASSIGNMENT:
        raise ValueError(f"at most {MAX_ASSIGNMENT} samples per ensemble")
    if A.grid != B.grid:
        raise ValueError("ensembles live on different grids")
    cost = pairwise(A.samples, B.samples, sp, Operators(A.grid, w), kind)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def sample_ensemble(x0: SpectralField2L, p: ModelParams, spec: NoiseSpec, t: float,
                    n_samples: int, seed: int, purpose: int, threads: int = 1,
                    chunk: int = 16) -> Ensemble:
    """Push ``x0`` forward with ``n_samples`` independent noise streams."""
    idx = list(range(n_samples))
    x = x0.modes

    def run(ix):
        q0 = np.broadcast_to(x, (len(ix),) + x.shape)
        return integrate_ensemble(q0, p, spec, t, R.streams(seed, purpose, ix),
                                  sample_every=max(1, int(round(t / p.dt))))

    rec = concat_records(run_chunked(run, idx, chunk, threads))
    return Ensemble(p.grid, rec.final, t, seed, purpose)


@dataclass(frozen=True)
class ContractionResult:
    rho: float
    w_hat: float
    w_hat_dN: float
    d0: float
    dN0: float
    t: float
    n_samples: int


def contraction_factor(x0: SpectralField2L, y0: SpectralField2L, p: ModelParams,
                       spec: NoiseSpec, sp: SemimetricParams, t: float, n_samples: int,
                       seed: int = 0, consts: ErgodicityConstants | None = None,
                       threads: int = 1) -> tuple[ContractionResult, Ensemble, Ensemble]:
    """``W_dtilde(P_t x0, P_t y0) / dtilde(x0, y0)`` from independent-noise ensembles."""
    if consts is not None and not consts.all_pass:
        raise ConditionError("conditions", "failed: " + ", ".join(consts.failed() or ["chi"]))
    d0 = d_tilde(x0, y0, sp, p.w)
    if d0 == 0:
        raise ValueError("x0 and y0 coincide; contraction factor undefined")
    ea = sample_ensemble(x0, p, spec, t, n_samples, seed, R.ENSEMBLE_X, threads)
    eb = sample_ensemble(y0, p, spec, t, n_samples, seed, R.ENSEMBLE_Y, threads)
    wt = empirical_wasserstein(ea, eb, sp, p.w, "d_tilde")
    wn = empirical_wasserstein(ea, eb, sp, p.w, "d_N")
    res = ContractionResult(wt / d0, wt, wn, d0, d_N(x0, y0, sp, p.w), t, n_samples)
    return res, ea, eb


# -- assumption checks -------------------------------------------------------------


MIN_TRAJECTORIES = 16


@dataclass
class AssumptionReport:
    """Per-assumption verdict with the worst observed slack (negative = violation margin)."""

    results: dict

    @property
    def all_pass(self) -> bool:
        return all(v["pass"] for v in self.results.values())

    def __getitem__(self, k):
        return self.results[k]


def check_A1(rec: CoupledRecord, consts: ErgodicityConstants, rel_tol: float = 1e-6) -> dict:
    """Pathwise ``|||xi(t)|||^2 <= |||xi(0)|||^2 exp(-kappa0 t + kappa1 int |Delta psi|^2)``."""
    xi0 = rec.xi_V[:, :1]
    live = xi0[:, 0] > 0
    t = rec.times
    expo = -consts.kappa0 * t + consts.kappa1 * rec.x.D
    slack = 0.0
    rate = float("nan")
    if live.any():
        with np.errstate(divide="ignore"):
            lhs = np.log(rec.xi_V[live] / xi0[live])
        e = expo[live]
        viol = lhs - e - rel_tol * np.abs(e)
        viol = np.where(np.isneginf(lhs), -np.inf, viol)
        slack = float(-np.max(viol[:, 1:])) if t.size > 1 else 0.0
        med = np.median(lhs, axis=0)
        ok = np.isfinite(med)
        if ok.sum() > 1:
            rate = float(-np.polyfit(t[ok], med[ok], 1)[0])
    return {
        "pass": bool(consts.kappa0 > 0 and slack >= 0),
        "kappa0_positive": bool(consts.kappa0 > 0),
        "pathwise_slack": slack,
        "measured_decay_rate": rate,
        "kappa0": consts.kappa0,
        "kappa1": consts.kappa1,
    }


def check_A2(recs: list[TrajectoryRecord], consts: ErgodicityConstants, rtol: float = 1e-10,
             tail_xi: np.ndarray | None = None, R_grid: np.ndarray | None = None) -> dict:
    """Pathwise energy inequality and the exponential tail of ``xi_hat``.

    ``pathwise_slack`` uses ``kappa3 t`` literally.  ``discrete_ito_slack``
    replaces the mean noise energy ``T_Q t`` by the realized one: on a time grid
    the two differ by a zero-mean fluctuation that the continuous estimate
    does not see.
    """
    worst = worst_ito = math.inf
    forcing_rate = consts.kappa3 - consts.T_Q
    for rec in recs:
        xi = np.asarray(rec.xi_hat(consts.gamma))[..., None]
        lhs = rec.V - rec.V[..., :1] + consts.kappa2 * rec.D
        mart = 2 * consts.h1 * xi
        rhs = consts.kappa3 * rec.times + mart
        rhs_ito = forcing_rate * rec.times + rec.NE + mart
        scale = rtol * (np.abs(rec.V[..., :1]) + np.abs(rhs) + np.abs(lhs))
        worst = min(worst, float(np.min(rhs - lhs + scale)))
        worst_ito = min(worst_ito, float(np.min(rhs_ito - lhs + scale)))
    out = {"pathwise_slack": worst, "pathwise_pass": bool(worst >= 0),
           "discrete_ito_slack": worst_ito, "discrete_ito_pass": bool(worst_ito >= 0),
           "kappa2": consts.kappa2, "kappa3": consts.kappa3, "gamma": consts.gamma}
    tail_ok = True
    if tail_xi is not None:
        tail_xi = np.asarray(tail_xi)
        if R_grid is None:
            R_grid = np.linspace(0, 3 / consts.gamma, 13)[1:]
        n = len(tail_xi)
        rows = []
        for Rv in R_grid:
            ph = float(np.mean(tail_xi >= Rv))
            se = math.sqrt(max(ph * (1 - ph), 1.0 / n) / n)
            bound = math.exp(-2 * consts.gamma * Rv)
            rows.append({"R": float(Rv), "p_hat": ph, "se": se, "bound": bound,
                         "pass": bool(ph <= bound + 4 * se)})
        tail_ok = all(r["pass"] for r in rows)
        out["tail"] = rows
        out["tail_samples"] = n
    out["tail_pass"] = tail_ok
    out["pass"] = bool(out["pathwise_pass"] and tail_ok and consts.kappa2 > 0)
    return out


def check_A3(rec: CoupledRecord, cs: ControlSpec, grid: Grid, rtol: float = 1e-10) -> dict:
    """``h1 |G|^2 <= a^2 lambda_n |||xi|||^2`` at every step."""
    c = cs.a**2 * grid.lambda_n(cs.n)
    num, den = rec.G_sq, c * rec.xi_V
    live = den > 0
    ratio = float(np.max(num[live] / den[live])) if live.any() else 0.0
    zero_ok = bool(np.all(num[~live] == 0))
    return {"pass": bool(ratio <= 1 + rtol and zero_ok), "max_ratio": ratio, "c": c}


def check_A4(rec: TrajectoryRecord, consts: ErgodicityConstants, n_points: int = 5) -> dict:
    """Monte Carlo ``E V(q(t)) <= exp(-gamma1 t) V(q0) + K_V`` plus three standard errors."""
    V = np.atleast_2d(rec.V)
    S = V.shape[0]
    if S < MIN_TRAJECTORIES:
        raise ValueError(f"need at least {MIN_TRAJECTORIES} trajectories, got {S}")
    idx = np.unique(np.linspace(0, V.shape[1] - 1, n_points + 1).round().astype(int)[1:])
    rows = []
    for i in idx:
        t = float(rec.times[i])
        m = float(V[:, i].mean())
        se = float(V[:, i].std(ddof=1) / math.sqrt(S))
        v0 = float(V[:, 0].mean())
        bound = math.exp(-consts.gamma1 * t) * v0 + consts.K_V
        rows.append({"t": t, "mean_V": m, "se": se, "bound": bound, "pass": bool(m <= bound + 3 * se)})
    return {"pass": all(r["pass"] for r in rows), "points": rows,
            "gamma1": consts.gamma1, "K_V": consts.K_V}


def check_assumptions(coupled: CoupledRecord, singles: TrajectoryRecord,
                      consts: ErgodicityConstants, cs: ControlSpec, grid: Grid,
                      tail_xi: np.ndarray | None = None) -> AssumptionReport:
    """Verdicts for A1-A4 from finished coupled runs and an uncontrolled ensemble."""
    n = min(coupled.xi_V.shape[0], np.atleast_2d(singles.V).shape[0])
    if n < MIN_TRAJECTORIES:
        raise ValueError(f"need at least {MIN_TRAJECTORIES} trajectories, got {n}")
    return AssumptionReport({
        "A1": check_A1(coupled, consts),
        "A2": check_A2([coupled.x, singles], consts, tail_xi=tail_xi),
        "A3": check_A3(coupled, cs, grid),
        "A4": check_A4(singles, consts),
    })


# -- spectral gap ------------------------------------------------------------------


def quotient_seminorm(values_a: np.ndarray, values_b: np.ndarray, dist: np.ndarray) -> float:
    """``max |phi(a_i) - phi(b_j)| / d(a_i, b_j)`` over pairs with ``d > 0``."""
    diff = np.abs(values_a[:, None] - values_b[None, :])
    live = dist > 0
    if not live.any():
        return 0.0
    return float(np.max(diff[live] / dist[live]))


def spectral_gap_check(observables: dict, mu_star: Ensemble, starts: np.ndarray,
                       pushed: list[Ensemble], sp: SemimetricParams, w: LayerWeights,
                       rho: float, duality: tuple[Ensemble, Ensemble] | None = None) -> dict:
    """Compare ``||P_t phi - <phi, mu>||`` with ``rho ||phi - <phi, mu>||`` in the
    ``d_tilde`` quotient seminorm over the start points.

    ``pushed[i]`` samples ``P_t(starts[i], .)``.  Observables map a mode batch
    ``(S, 2, M)`` to values ``(S,)``.  With ``duality = (A, B)`` the largest
    normalised mean difference is also reported next to ``W_dtilde(A, B)``.
    """
    ops = Operators(mu_star.grid, w)
    dist = pairwise(starts, starts, sp, ops, "d_tilde")
    out = {}
    for name, phi in observables.items():
        mean_mu = float(np.mean(phi(mu_star.samples)))
        v0 = np.asarray(phi(starts), dtype=float) - mean_mu
        vt = np.array([np.mean(phi(e.samples)) for e in pushed]) - mean_mu
        s0 = quotient_seminorm(v0, v0, dist)
        st = quotient_seminorm(vt, vt, dist)
        if s0 == 0:
            out[name] = {"skipped": True, "reason": "constant on the start points",
                         "lhs": st, "rhs": 0.0, "pass": bool(st == 0)}
            continue
        out[name] = {"skipped": False, "mean_mu": mean_mu, "lhs": st, "rhs": rho * s0,
                     "seminorm": s0, "pass": bool(st <= rho * s0)}
    if duality is not None:
        A, B = duality
        cross = pairwise(A.samples, B.samples, sp, ops, "d_tilde")
        best = 0.0
        for phi in observables.values():
            fa, fb = np.asarray(phi(A.samples), float), np.asarray(phi(B.samples), float)
            s = quotient_seminorm(fa, fb, cross)
            if s > 0:
                best = max(best, abs(fa.mean() - fb.mean()) / s)
        wh = empirical_wasserstein(A, B, sp, w, "d_tilde")
        out["duality"] = {"sup_test": best, "w_hat": wh, "pass": bool(best <= wh * (1 + 1e-12))}
    return out
