"""Generalized coupling: a controlled copy driven by the same noise path.

The companion ``Y~`` solves the model with forcing ``f + G(X, Y~)`` where
``G = a Pi_n Delta (psi1 - psi~1)`` nudges the lowest ``n`` modes of the upper
layer.  The price of the nudge is the Girsanov cost ``int |Q_n^{-1/2} G|^2 ds``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    BlowUpError,
    ModelParams,
    NoiseSpec,
    Stepper,
    TrajectoryRecord,
    _diagnostics,
    concat_records,
)
from .spectral import LayerWeights, Operators, SpectralField, SpectralField2L, _check_same


class ConditionError(ValueError):
    """A named solvability or ergodicity condition is violated."""

    def __init__(self, condition: str, msg: str):
        super().__init__(f"{condition}: {msg}")
        self.condition = condition


@dataclass(frozen=True)
class ControlSpec:
    a: float
    n: int

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"control gain a must be positive, got {self.a}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"number of controlled modes n must be >= 1, got {self.n}")


def validate_control(cs: ControlSpec, p: ModelParams, spec: NoiseSpec) -> None:
    """Reject controls outside the range of Q or violating ``nu - 2 a / lambda_n > 0``."""
    g = p.grid
    if cs.n > g.n_modes:
        raise ConditionError("control.n", f"n = {cs.n} exceeds the {g.n_modes} active modes")
    if np.any(spec.sigma[: cs.n] <= 0):
        k = int(np.argmin(spec.sigma[: cs.n] > 0)) + 1
        raise ConditionError(
            "range_Q", f"Pi_n H must lie in the range of Q but sigma_{k} = 0 for n = {cs.n}"
        )
    margin = p.nu - 2 * cs.a / g.lambda_n(cs.n)
    if not margin > 0:
        raise ConditionError(
            "condition_n",
            f"nu - 2 a / lambda_n = {margin:.6g} <= 0 (n = {cs.n}, lambda_n = {g.lambda_n(cs.n):.6g})",
        )


def _control(ops: Operators, qx: np.ndarray, qy: np.ndarray, cs: ControlSpec) -> np.ndarray:
    d = ops.psi(qx - qy)[..., 0, :]
    G = -cs.a * ops.grid.lam * d
    G[..., cs.n:] = 0
    return G


def control_G(X: SpectralField2L, Y_tilde: SpectralField2L, cs: ControlSpec,
              w: LayerWeights) -> SpectralField:
    """``G = a Pi_n Delta(psi1 - psi~1)`` as a layer-1 field."""
    _check_same(X, Y_tilde)
    ops = Operators(X.grid, w)
    return SpectralField(X.grid, _control(ops, X.modes, Y_tilde.modes, cs))


def cost_rate(G: np.ndarray, spec: NoiseSpec, n: int) -> np.ndarray:
    """``|Q_n^{-1/2} G|^2`` summed over both real eigenfunctions of each mode."""
    g = spec.grid
    g2 = np.abs(G[..., :n]) ** 2
    sig = spec.sigma[:n]
    # a zero control costs nothing even where Q vanishes; a nonzero one is infinitely costly
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(g2 == 0, 0.0, g2 / sig)
    return 2 * g.area * np.sum(terms, axis=-1)


def q_inv_norm_sq(spec: NoiseSpec, n: int, w: LayerWeights) -> float:
    """``||Q_n^{-1/2}||^2`` with respect to the layer-weighted norm on layer 1."""
    return 1.0 / (w.h1 * spec.min_sigma(n))


@dataclass(frozen=True, eq=False)
class CoupledState:
    X: SpectralField2L
    Y_tilde: SpectralField2L
    girsanov_cost: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        _check_same(self.X, self.Y_tilde)


def step_coupled(s: CoupledState, p: ModelParams, cs: ControlSpec, dW: SpectralField | None,
                 spec: NoiseSpec, stepper: Stepper | None = None) -> CoupledState:
    """Advance both components with one shared noise increment."""
    st = stepper or Stepper(p)
    G = _control(st.ops, s.X.modes, s.Y_tilde.modes, cs)
    qx, _ = st.deterministic(s.X.modes)
    qy, _ = st.deterministic(s.Y_tilde.modes, extra=G)
    if dW is not None:
        qx[0] += dW.modes
        qy[0] += dW.modes
    if not (np.all(np.isfinite(qx)) and np.all(np.isfinite(qy))):
        raise BlowUpError("non-finite coupled state", 1, s.t + p.dt,
                          np.stack([s.X.modes, s.Y_tilde.modes]))
    cost = s.girsanov_cost + p.dt * float(cost_rate(G, spec, cs.n))
    return CoupledState(SpectralField2L(p.grid, qx), SpectralField2L(p.grid, qy), cost, s.t + p.dt)


@dataclass
class CoupledRecord:
    """Per-step histories of a batch of coupled pairs.

    ``x`` holds the diagnostics of the uncontrolled component; ``xi_V`` is
    ``|||X - Y~|||_{-1}^2``, ``G_sq`` the weighted ``h1 |G|^2`` applied during the
    step starting at each time and ``cost`` the accumulated Girsanov cost.
    """

    x: TrajectoryRecord
    xi_V: np.ndarray
    G_sq: np.ndarray
    cost: np.ndarray
    final_y: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.x.times


def run_coupled_ensemble(x0: np.ndarray, y0: np.ndarray, p: ModelParams, spec: NoiseSpec,
                         cs: ControlSpec, T: float, rngs: list[np.random.Generator],
                         sample_every: int = 1) -> CoupledRecord:
    """Integrate a batch ``(S, 2, M)`` of coupled pairs, one noise stream per pair."""
    steps = int(round(T / p.dt))
    if T < 0 or abs(steps * p.dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T = {T} must be a non-negative multiple of dt = {p.dt}")
    qx = np.array(x0, dtype=complex)
    qy = np.array(y0, dtype=complex)
    S = qx.shape[0]
    if qy.shape != qx.shape or len(rngs) != S:
        raise ValueError("x0, y0 and rngs must describe the same number of pairs")
    st = Stepper(p)
    ops, g = st.ops, p.grid
    active = spec.sigma > 0
    V, diss, e1, e2, D, X, QV, NE = (np.zeros((S, steps + 1)) for _ in range(8))
    inv11 = -ops.psi_of_q[:, 0, 0]
    xi_V, G_sq, cost = (np.zeros((S, steps + 1)) for _ in range(3))
    snaps = [qx.copy()]
    V[:, 0], diss[:, 0], e1[:, 0], e2[:, 0] = _diagnostics(ops, qx)
    xi_V[:, 0] = ops.vort_minus1_sq(qx - qy)
    for n in range(1, steps + 1):
        G = _control(ops, qx, qy, cs)
        G_sq[:, n - 1] = p.w.h1 * g.sq(G)
        sx, psis = st.deterministic(qx)
        sy, _ = st.deterministic(qy, extra=G)
        if active.any():
            dW = np.stack([spec.draw(p.dt, r) for r in rngs])
            X[:, n] = X[:, n - 1] - g.dot(psis[:, 0, :], dW)
            QV[:, n] = QV[:, n - 1] + p.dt * 2 * g.area * np.sum(
                spec.sigma * np.abs(psis[:, 0, :]) ** 2, axis=-1)
            NE[:, n] = NE[:, n - 1] + p.w.h1 * g.sq(np.sqrt(inv11) * dW)
            sx[:, 0, :] += dW
            sy[:, 0, :] += dW
        else:
            X[:, n], QV[:, n], NE[:, n] = X[:, n - 1], QV[:, n - 1], NE[:, n - 1]
        if not (np.all(np.isfinite(sx)) and np.all(np.isfinite(sy))):
            raise BlowUpError(f"non-finite coupled state at step {n}", n, n * p.dt,
                              np.stack([qx, qy], axis=1))
        D[:, n] = D[:, n - 1] + p.dt * ops.norm_sq(psis, 2)
        cost[:, n] = cost[:, n - 1] + p.dt * cost_rate(G, spec, cs.n)
        qx, qy = sx, sy
        V[:, n], diss[:, n], e1[:, n], e2[:, n] = _diagnostics(ops, qx)
        xi_V[:, n] = ops.vort_minus1_sq(qx - qy)
        if n % sample_every == 0:
            snaps.append(qx.copy())
    G_sq[:, steps] = p.w.h1 * g.sq(_control(ops, qx, qy, cs))
    xrec = TrajectoryRecord(p.dt, sample_every, np.arange(steps + 1) * p.dt, V, diss, e1, e2,
                            D, X, QV, NE, np.stack(snaps, axis=1), qx)
    return CoupledRecord(xrec, xi_V, G_sq, cost, qy)


def girsanov_cost_bound(x0: SpectralField2L, y0: SpectralField2L, consts, xi: float, t: float,
                        cs: ControlSpec, spec: NoiseSpec, w: LayerWeights) -> float:
    """Upper bound on the accumulated Girsanov cost up to time ``t``.

    ``xi`` is the martingale supremum on the scale of the abstract energy
    inequality (``2 h1`` times the recorded ``sup(X - gamma <X>)``).
    """
    if not consts.chi > 0:
        raise ConditionError("chi", f"chi = {consts.chi:.6g} must be positive")
    _check_same(x0, y0)
    ops = Operators(x0.grid, w)
    d2 = float(ops.vort_minus1_sq(x0.modes - y0.modes))
    if d2 == 0:
        return 0.0
    c = cs.a**2 * x0.grid.lambda_n(cs.n)
    vx = float(ops.vort_minus1_sq(x0.modes))
    pref = c * q_inv_norm_sq(spec, cs.n, w) / consts.chi * d2
    return pref * math.exp(consts.upsilon * (vx + xi)) * -math.expm1(-consts.chi * t)


def concat_coupled(recs: list[CoupledRecord]) -> CoupledRecord:
    if len(recs) == 1:
        return recs[0]
    cat = lambda k: np.concatenate([getattr(r, k) for r in recs], axis=0)
    return CoupledRecord(concat_records([r.x for r in recs]), cat("xi_V"), cat("G_sq"),
                         cat("cost"), cat("final_y"))
