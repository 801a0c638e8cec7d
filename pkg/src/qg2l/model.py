"""Stochastic two-layer QG model: parameters, Q-Wiener noise and IMEX stepping.

The prognostic variable is the potential vorticity ``q = (Delta + M) psi``::

    dq + (B(psi, psi) + beta d_x psi) dt = nu Delta^2 psi dt + (f, -r Delta psi2) dt + (dW, 0)

Time stepping is first-order IMEX Euler-Maruyama: all linear terms implicit via
closed-form per-mode 2x2 solves, ``B`` explicit, noise added after the
deterministic substep.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .spectral import Grid, LayerWeights, Operators, SpectralField, SpectralField2L


class BlowUpError(FloatingPointError):
    """Non-finite state encountered; carries the last finite state."""

    def __init__(self, msg, step: int, time: float, last_good: np.ndarray):
        super().__init__(msg)
        self.step = step
        self.time = time
        self.last_good = last_good


@dataclass(frozen=True)
class PhysicalParams:
    f0: float
    g: float
    rho1: float
    rho2: float
    h1: float
    h2: float

    def __post_init__(self):
        if not self.rho1 < self.rho2:
            raise ValueError(
                "rho1 must be smaller than rho2: a denser upper layer makes the "
                "elliptic operator indefinite (physically impossible setup)"
            )

    @property
    def reduced_gravity(self) -> float:
        rho0 = 0.5 * (self.rho1 + self.rho2)
        return self.g * (self.rho2 - self.rho1) / rho0


def params_from_physical(ph: PhysicalParams) -> LayerWeights:
    """``F_i = f0^2 / (g' h_i)``."""
    gp = ph.reduced_gravity
    return LayerWeights(
        h1=ph.h1, h2=ph.h2, F1=ph.f0**2 / (gp * ph.h1), F2=ph.f0**2 / (gp * ph.h2)
    )


@dataclass(frozen=True)
class ModelParams:
    grid: Grid
    w: LayerWeights
    nu: float
    r: float = 0.0
    beta: float = 0.0
    dt: float = 0.01
    f: SpectralField | None = None
    nonlinear: bool = True

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if not self.r >= 0:
            raise ValueError(f"r must be non-negative, got {self.r}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.f is None:
            object.__setattr__(self, "f", SpectralField.zeros(self.grid))
        elif self.f.grid != self.grid:
            raise ValueError("forcing lives on a different grid")

    def with_(self, **kw) -> "ModelParams":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return ModelParams(**d)


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Covariance eigenvalues per active mode.

    ``sigma[m]`` is the variance rate of each of the two real eigenfunctions
    ``(sqrt 2 / L) cos(k.x)`` and ``(sqrt 2 / L) sin(k.x)`` of mode ``m``.
    """

    grid: Grid
    sigma: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.shape != (self.grid.n_modes,):
            raise ValueError(f"need {self.grid.n_modes} eigenvalues, got {s.shape}")
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError("noise eigenvalues must be finite and non-negative")
        s.setflags(write=False)
        object.__setattr__(self, "sigma", s)

    @classmethod
    def zero(cls, grid: Grid):
        return cls(grid, np.zeros(grid.n_modes))

    @classmethod
    def power_law(cls, grid: Grid, c: float, s: float, n_active: int | None = None):
        """``sigma_k = c * (lambda_k / lambda_1)^(-s)`` on the first ``n_active`` modes."""
        sig = c * (grid.lam / grid.lambda1) ** (-s)
        if n_active is not None:
            sig = np.where(np.arange(grid.n_modes) < n_active, sig, 0.0)
        return cls(grid, sig)

    @classmethod
    def from_list(cls, grid: Grid, values):
        sig = np.zeros(grid.n_modes)
        values = np.asarray(values, dtype=float)
        if len(values) > grid.n_modes:
            raise ValueError(f"at most {grid.n_modes} noise eigenvalues allowed")
        sig[: len(values)] = values
        return cls(grid, sig)

    @property
    def n_active(self) -> int:
        nz = np.nonzero(self.sigma > 0)[0]
        return int(nz[-1]) + 1 if len(nz) else 0

    @property
    def trace(self) -> float:
        """``Tr Q``; every active mode carries two real eigenfunctions."""
        return float(2 * self.sigma.sum())

    def min_sigma(self, n: int) -> float:
        return float(self.sigma[:n].min())

    def t_q(self, w: LayerWeights) -> float:
        """Ito correction of ``|||q|||_{-1}^2``: ``h1 sum_j sigma_j (A^-1)_{11}``."""
        inv11 = -Operators(self.grid, w).psi_of_q[:, 0, 0]
        return float(w.h1 * np.sum(2 * self.sigma * inv11))

    def draw(self, dt: float, rng: np.random.Generator) -> np.ndarray:
        """One increment as layer-1 mode vector; always consumes 2M normals."""
        z = rng.standard_normal((2, self.grid.n_modes))
        amp = np.sqrt(self.sigma * dt) / (math.sqrt(2) * self.grid.L)
        return amp * (z[0] - 1j * z[1])

    def eigen_coefficients(self, modes: np.ndarray) -> np.ndarray:
        """Projections onto the real orthonormal eigenfunctions, shape ``(..., 2, M)``."""
        c = math.sqrt(2) * self.grid.L
        return np.stack([c * modes.real, -c * modes.imag], axis=-2)


def noise_increment(spec: NoiseSpec, dt: float, rng: np.random.Generator) -> SpectralField:
    """Gaussian increment of the Q-Wiener process over a step ``dt``."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return SpectralField(spec.grid, spec.draw(dt, rng))


class Stepper:
    """Precomputed per-mode operators for one ``ModelParams``."""

    def __init__(self, p: ModelParams):
        self.p = p
        g = p.grid
        self.ops = Operators(g, p.w)
        lam = g.lam
        # linear operator acting on psi: diag(nu lam^2 - i beta kx, same + r lam)
        base = p.nu * lam**2 - 1j * p.beta * g.kx
        lin_psi = np.zeros((g.n_modes, 2, 2), dtype=complex)
        lin_psi[:, 0, 0] = base
        lin_psi[:, 1, 1] = base + p.r * lam
        self.lin = np.einsum("mij,mjk->mik", lin_psi, self.ops.psi_of_q)
        a = 1 - p.dt * self.lin[:, 0, 0]
        b = -p.dt * self.lin[:, 0, 1]
        c = -p.dt * self.lin[:, 1, 0]
        d = 1 - p.dt * self.lin[:, 1, 1]
        det = a * d - b * c
        self.resolvent = np.stack([np.stack([d, -b], -1), np.stack([-c, a], -1)], -2) / det[:, None, None]
        self.f = p.f.modes

    def tendency(self, q: np.ndarray, extra: np.ndarray | None = None) -> np.ndarray:
        psi = self.ops.psi(q)
        out = Operators.apply(self.lin, q)
        if self.p.nonlinear:
            out = out - self.ops.advection(q, psi)
        forcing = self.f if extra is None else self.f + extra
        out[..., 0, :] += forcing
        return out

    def deterministic(self, q: np.ndarray, extra: np.ndarray | None = None):
        """Implicit-linear / explicit-nonlinear substep; returns ``(q*, psi*)``."""
        rhs = np.array(q, dtype=complex)
        if self.p.nonlinear:
            rhs -= self.p.dt * self.ops.advection(q, self.ops.psi(q))
        forcing = self.f if extra is None else self.f + extra
        rhs[..., 0, :] += self.p.dt * forcing
        qs = Operators.apply(self.resolvent, rhs)
        return qs, self.ops.psi(qs)


def tendency(q: SpectralField2L, p: ModelParams) -> SpectralField2L:
    """Deterministic right-hand side ``-B - beta d_x psi + nu Delta^2 psi + (f, -r Delta psi2)``."""
    return SpectralField2L(q.grid, Stepper(p).tendency(q.modes))


def step(q: SpectralField2L, p: ModelParams, dW: SpectralField | None = None,
         stepper: Stepper | None = None) -> SpectralField2L:
    """One IMEX Euler-Maruyama step."""
    st = stepper or Stepper(p)
    qs, _ = st.deterministic(q.modes)
    if dW is not None:
        qs[0] += dW.modes
    if not np.all(np.isfinite(qs)):
        raise BlowUpError("non-finite state after one step", 1, p.dt, np.array(q.modes))
    return SpectralField2L(q.grid, qs)


_RECORD_ARRAYS = ("V", "dissipation", "energy1", "energy2", "D", "X", "QV", "NE", "snapshots", "final")


@dataclass
class TrajectoryRecord:
    """Scalar diagnostics at every step plus state snapshots at sample steps.

    Arrays have a leading ensemble axis when produced by ``integrate_ensemble``.
    ``X`` is the noise martingale ``-sum (psi1*, dW)``, ``QV`` its predictable
    quadratic variation, ``NE`` the realized noise energy ``sum |||(dW, 0)|||_{-1}^2``
    (whose mean rate is ``T_Q``) and ``D`` the running dissipation
    ``sum dt |Delta psi*|^2``.
    """

    dt: float
    sample_every: int
    times: np.ndarray
    V: np.ndarray
    dissipation: np.ndarray
    energy1: np.ndarray
    energy2: np.ndarray
    D: np.ndarray
    X: np.ndarray
    QV: np.ndarray
    NE: np.ndarray
    snapshots: np.ndarray
    final: np.ndarray

    @property
    def sample_times(self) -> np.ndarray:
        return self.times[:: self.sample_every]

    @property
    def V_series(self) -> np.ndarray:
        return self.V[..., :: self.sample_every]

    @property
    def dissipation_series(self) -> np.ndarray:
        return self.dissipation[..., :: self.sample_every]

    def xi_hat(self, gamma: float) -> np.ndarray:
        """``sup_s (X_s - gamma <X>_s)`` over the recorded steps (includes s = 0)."""
        return np.max(self.X - gamma * self.QV, axis=-1)

    def member(self, i: int) -> "TrajectoryRecord":
        pick = lambda a: a[i]
        return TrajectoryRecord(
            self.dt, self.sample_every, self.times,
            *(pick(getattr(self, k)) for k in
              _RECORD_ARRAYS),
        )


def _diagnostics(ops: Operators, q: np.ndarray):
    psi = ops.psi(q)
    g = ops.grid
    return (
        ops.vort_minus1_sq(q),
        ops.norm_sq(psi, 2),
        0.5 * ops.w.h1 * g.sq(psi[..., 0, :], 1),
        0.5 * ops.w.h2 * g.sq(psi[..., 1, :], 1),
    )


def integrate_ensemble(q0: np.ndarray, p: ModelParams, spec: NoiseSpec, T: float,
                       rngs: list[np.random.Generator], sample_every: int = 1) -> TrajectoryRecord:
    """Advance a batch ``(S, 2, M)`` of independent trajectories, one stream each."""
    steps = int(round(T / p.dt))
    if T < 0 or abs(steps * p.dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T = {T} must be a non-negative multiple of dt = {p.dt}")
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    q = np.array(q0, dtype=complex)
    S = q.shape[0]
    if len(rngs) != S:
        raise ValueError("need one random stream per trajectory")
    st = Stepper(p)
    ops, g = st.ops, p.grid
    active = spec.sigma > 0
    V, diss, e1, e2 = (np.zeros((S, steps + 1)) for _ in range(4))
    D, X, QV, NE = (np.zeros((S, steps + 1)) for _ in range(4))
    inv11 = -ops.psi_of_q[:, 0, 0]
    snaps = [q.copy()]
    V[:, 0], diss[:, 0], e1[:, 0], e2[:, 0] = _diagnostics(ops, q)
    for n in range(1, steps + 1):
        qs, psis = st.deterministic(q)
        if active.any():
            dW = np.stack([spec.draw(p.dt, r) for r in rngs])
            psi1 = psis[:, 0, :]
            X[:, n] = X[:, n - 1] - g.dot(psi1, dW)
            QV[:, n] = QV[:, n - 1] + p.dt * 2 * g.area * np.sum(spec.sigma * np.abs(psi1) ** 2, axis=-1)
            NE[:, n] = NE[:, n - 1] + p.w.h1 * g.sq(np.sqrt(inv11) * dW)
            qs[:, 0, :] += dW
        else:
            X[:, n], QV[:, n], NE[:, n] = X[:, n - 1], QV[:, n - 1], NE[:, n - 1]
        if not np.all(np.isfinite(qs)):
            raise BlowUpError(f"non-finite state at step {n}", n, n * p.dt, q)
        D[:, n] = D[:, n - 1] + p.dt * ops.norm_sq(psis, 2)
        q = qs
        V[:, n], diss[:, n], e1[:, n], e2[:, n] = _diagnostics(ops, q)
        if n % sample_every == 0:
            snaps.append(q.copy())
    return TrajectoryRecord(
        p.dt, sample_every, np.arange(steps + 1) * p.dt, V, diss, e1, e2, D, X, QV, NE,
        np.stack(snaps, axis=1), q,
    )


def run_chunked(fn, items: list, chunk: int = 16, threads: int = 1) -> list:
    """Apply ``fn`` to fixed-size chunks of ``items``; grouping ignores ``threads``."""
    chunks = [items[i:i + chunk] for i in range(0, len(items), chunk)]
    if threads <= 1 or len(chunks) == 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, chunks))


def concat_records(recs: list[TrajectoryRecord]) -> TrajectoryRecord:
    if len(recs) == 1:
        return recs[0]
    first = recs[0]
    cat = lambda k: np.concatenate([getattr(r, k) for r in recs], axis=0)
    return TrajectoryRecord(
        first.dt, first.sample_every, first.times,
        *(cat(k) for k in _RECORD_ARRAYS),
    )


def integrate(q0: SpectralField2L, p: ModelParams, spec: NoiseSpec, T: float,
              rng: np.random.Generator, sample_every: int = 1) -> TrajectoryRecord:
    """Single trajectory; deterministic given the stream state and parameters."""
    rec = integrate_ensemble(q0.modes[None], p, spec, T, [rng], sample_every)
    return rec.member(0)


# -- checkpoint files --------------------------------------------------------------

CHECKPOINT_MAGIC = b"QG2L"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIdIId")


def checkpoint_bytes(q: SpectralField2L, time: float) -> bytes:
    g = q.grid
    full = g.to_full(q.modes)
    inter = np.empty((2, g.N, g.N, 2), dtype="<f8")
    inter[..., 0] = full.real
    inter[..., 1] = full.imag
    return _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, g.L, g.N, 2, time) + inter.tobytes()


def write_checkpoint(path, q: SpectralField2L, time: float) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(q, time))


def read_checkpoint(path) -> tuple[SpectralField2L, float]:
    with open(path, "rb") as fh:
        data = fh.read()
    magic, version, L, N, layers, time = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION or layers != 2:
        raise ValueError(f"unsupported checkpoint version {version} / layers {layers}")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != 2 * N * N * 2:
        raise ValueError("truncated checkpoint body")
    body = body.reshape(2, N, N, 2)
    grid = Grid(L, N)
    full = body[..., 0] + 1j * body[..., 1]
    return SpectralField2L(grid, grid.from_full(full)), time
