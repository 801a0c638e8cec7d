"""Fourier representation of two-layer fields on a doubly periodic square.

Fields are stored as Galerkin coefficient vectors over the *active* modes:
one representative wavevector per conjugate pair ``(k, -k)``, restricted to the
2/3-rule dealiasing box and excluding ``k = 0``.  With this storage the
zero-mean constraint, Hermitian symmetry and dealiasing hold by construction.

Conventions
-----------
A real field ``u`` has the expansion ``u(x) = sum_k c_k exp(i k.x)`` with
``c_{-k} = conj(c_k)``, i.e. ``c = fft2(u) / N**2``.  Parseval reads
``(u, v) = L**2 sum_k c_k conj(d_k) = 2 L**2 Re sum_{reps} c_k conj(d_k)``.

Array-level routines accept arbitrary leading batch dimensions: a scalar field
batch has shape ``(..., M)`` and a two-layer batch ``(..., 2, M)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class GridMismatchError(ValueError):
    """Raised when two fields live on different grids."""


@dataclass(frozen=True)
class Grid:
    """Square periodic grid ``[0, L]^2`` with ``N`` points per direction."""

    L: float = 2 * math.pi
    N: int = 32

    def __post_init__(self):
        if self.N % 2 or self.N < 8:
            raise ValueError(f"N must be even and >= 8, got {self.N}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")

    @property
    def k_cut(self) -> int:
        """Largest retained integer wavenumber per direction (|j| < N/3)."""
        return -(-self.N // 3) - 1

    @cached_property
    def _modes(self):
        K = self.k_cut
        reps = []
        for jy in range(0, K + 1):
            for jx in range(-K, K + 1):
                if jy > 0 or jx > 0:
                    reps.append((jx, jy))
        # ascending |k|^2, ties broken lexicographically on (jx, jy)
        reps.sort(key=lambda j: (j[0] ** 2 + j[1] ** 2, j[0], j[1]))
        return np.array(reps, dtype=np.int64)

    @property
    def jx(self) -> np.ndarray:
        return self._modes[:, 0]

    @property
    def jy(self) -> np.ndarray:
        return self._modes[:, 1]

    @property
    def n_modes(self) -> int:
        """Number of active conjugate-pair modes ``M``."""
        return len(self._modes)

    @cached_property
    def kx(self) -> np.ndarray:
        return 2 * np.pi / self.L * self.jx

    @cached_property
    def ky(self) -> np.ndarray:
        return 2 * np.pi / self.L * self.jy

    @cached_property
    def lam(self) -> np.ndarray:
        """Laplacian eigenvalue ``|k|^2`` of every active mode, ascending."""
        return self.kx**2 + self.ky**2

    @property
    def lambda1(self) -> float:
        return (2 * np.pi / self.L) ** 2

    def lambda_n(self, n: int) -> float:
        """Eigenvalue of the n-th mode (1-based) in the fixed ordering."""
        if not 1 <= n <= self.n_modes:
            raise ValueError(f"mode index {n} outside 1..{self.n_modes}")
        return float(self.lam[n - 1])

    @property
    def area(self) -> float:
        return self.L**2

    @cached_property
    def x(self) -> np.ndarray:
        """Physical coordinates, each of shape (N, N), indexed ``[iy, ix]``."""
        s = np.arange(self.N) * self.L / self.N
        X, Y = np.meshgrid(s, s, indexing="xy")
        return np.stack([X, Y])

    # -- half-spectrum (rfft2 layout) scatter/gather tables ------------------
    @cached_property
    def _half_index(self):
        N = self.N
        jx, jy = self.jx, self.jy
        direct = jx >= 0
        # reps with jx >= 0 sit in the rfft half directly; jx < 0 via conjugate
        iy = np.where(direct, jy % N, (-jy) % N)
        ix = np.abs(jx)
        # kx = 0 column needs both members of the pair
        col0 = np.nonzero(jx == 0)[0]
        return iy, ix, direct, col0, (-jy[col0]) % N

    def to_half(self, modes: np.ndarray) -> np.ndarray:
        """Scatter mode vectors ``(..., M)`` into rfft2 half arrays."""
        iy, ix, direct, col0, iy0c = self._half_index
        out = np.zeros(modes.shape[:-1] + (self.N, self.N // 2 + 1), dtype=complex)
        out[..., iy, ix] = np.where(direct, modes, np.conj(modes))
        out[..., iy0c, 0] = np.conj(modes[..., col0])
        return out

    def from_half(self, half: np.ndarray) -> np.ndarray:
        """Gather mode vectors from rfft2 half arrays (Hermitian projection)."""
        iy, ix, direct, _, _ = self._half_index
        vals = half[..., iy, ix]
        return np.where(direct, vals, np.conj(vals))

    def to_physical(self, modes: np.ndarray) -> np.ndarray:
        """Real grid values ``(..., N, N)`` of mode vectors ``(..., M)``."""
        N = self.N
        return np.fft.irfft2(self.to_half(modes) * (N * N), s=(N, N))

    def from_physical(self, u: np.ndarray) -> np.ndarray:
        """Mode vectors of real grid values; content outside the box is dropped."""
        N = self.N
        return self.from_half(np.fft.rfft2(u) / (N * N))

    def to_full(self, modes: np.ndarray) -> np.ndarray:
        """Full ``(..., N, N)`` coefficient array in numpy fft2 ordering."""
        N = self.N
        out = np.zeros(modes.shape[:-1] + (N, N), dtype=complex)
        out[..., self.jy % N, self.jx % N] = modes
        out[..., (-self.jy) % N, (-self.jx) % N] = np.conj(modes)
        return out

    def from_full(self, coeffs: np.ndarray) -> np.ndarray:
        N = self.N
        return coeffs[..., self.jy % N, self.jx % N]

    # -- array-level primitives ------------------------------------------------
    def dot(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Unweighted L2 inner product of real fields given as mode vectors."""
        return 2 * self.area * np.real(np.sum(a * np.conj(b), axis=-1))

    def sq(self, a: np.ndarray, power: float = 0.0) -> np.ndarray:
        """Squared Sobolev norm ``sum |k|^(2*power) |c_k|^2`` scaled by Parseval."""
        w = self.lam**power if power else 1.0
        return 2 * self.area * np.sum(w * np.abs(a) ** 2, axis=-1)

    def jacobian(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Dealiased ``J(a, b) = a_x b_y - a_y b_x`` on mode vectors."""
        ik = 1j * np.stack([self.kx, self.ky])
        da = self.to_physical(ik * a[..., None, :])
        db = self.to_physical(ik * b[..., None, :])
        prod = da[..., 0, :, :] * db[..., 1, :, :] - da[..., 1, :, :] * db[..., 0, :, :]
        return self.from_physical(prod)


@dataclass(frozen=True)
class LayerWeights:
    """Layer heights and stratification constants with ``h1 F1 = h2 F2 = p``."""

    h1: float = 1.0
    h2: float = 1.0
    F1: float = 1.0
    F2: float = 1.0

    def __post_init__(self):
        for name in ("h1", "h2", "F1", "F2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if abs(self.h1 * self.F1 - self.h2 * self.F2) > 1e-12 * self.p:
            raise ValueError(
                f"h1*F1 = {self.h1 * self.F1} differs from h2*F2 = {self.h2 * self.F2}"
            )

    @property
    def p(self) -> float:
        return 0.5 * (self.h1 * self.F1 + self.h2 * self.F2)

    @property
    def h(self) -> np.ndarray:
        return np.array([self.h1, self.h2])

    def a0(self, lambda1: float) -> float:
        """Equivalence constant between the vorticity norm and ``||psi||``."""
        return 1 + 2 * max(self.F1, self.F2) / lambda1


class Operators:
    """Per-mode linear algebra and norms for one (grid, weights) pair.

    All methods work on mode arrays with leading batch dimensions.
    """

    def __init__(self, grid: Grid, w: LayerWeights):
        self.grid = grid
        self.w = w
        lam = grid.lam
        F1, F2 = w.F1, w.F2
        # (Delta + M) per mode: [[-lam - F1, F1], [F2, -lam - F2]]
        self.q_of_psi = np.empty((grid.n_modes, 2, 2))
        self.q_of_psi[:, 0, 0] = -lam - F1
        self.q_of_psi[:, 0, 1] = F1
        self.q_of_psi[:, 1, 0] = F2
        self.q_of_psi[:, 1, 1] = -lam - F2
        det = lam * (lam + F1 + F2)
        assert np.all(det > 0)
        self.psi_of_q = np.empty_like(self.q_of_psi)
        self.psi_of_q[:, 0, 0] = (-lam - F2) / det
        self.psi_of_q[:, 0, 1] = -F1 / det
        self.psi_of_q[:, 1, 0] = -F2 / det
        self.psi_of_q[:, 1, 1] = (-lam - F1) / det

    @staticmethod
    def apply(mat: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Apply per-mode 2x2 matrices ``(M, 2, 2)`` to fields ``(..., 2, M)``."""
        return np.stack(
            [
                mat[:, 0, 0] * x[..., 0, :] + mat[:, 0, 1] * x[..., 1, :],
                mat[:, 1, 0] * x[..., 0, :] + mat[:, 1, 1] * x[..., 1, :],
            ],
            axis=-2,
        )

    def psi(self, q: np.ndarray) -> np.ndarray:
        return self.apply(self.psi_of_q, q)

    def q(self, psi: np.ndarray) -> np.ndarray:
        return self.apply(self.q_of_psi, psi)

    def lap(self, x: np.ndarray) -> np.ndarray:
        return -self.grid.lam * x

    def inner(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Weighted L2 product ``h1 (a1, b1) + h2 (a2, b2)``."""
        d = self.grid.dot(a, b)
        return self.w.h1 * d[..., 0] + self.w.h2 * d[..., 1]

    def norm_sq(self, x: np.ndarray, k: float = 0.0) -> np.ndarray:
        s = self.grid.sq(x, k)
        return self.w.h1 * s[..., 0] + self.w.h2 * s[..., 1]

    def vort_minus1_sq(self, q: np.ndarray) -> np.ndarray:
        """``|||q|||_{-1}^2 = ||psi||^2 + p |psi1 - psi2|^2``."""
        psi = self.psi(q)
        return self.norm_sq(psi, 1) + self.w.p * self.grid.sq(psi[..., 0, :] - psi[..., 1, :])

    def vort_0_sq(self, q: np.ndarray) -> np.ndarray:
        """``|||q|||_0^2 = |Delta psi|^2 + p ||psi1 - psi2||^2``."""
        psi = self.psi(q)
        return self.norm_sq(psi, 2) + self.w.p * self.grid.sq(
            psi[..., 0, :] - psi[..., 1, :], 1
        )

    def bilinear(self, psi: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """``B(psi, xi)`` layerwise via one batched Jacobian."""
        lap = self.lap(xi)
        second = np.stack(
            [lap[..., 0, :] + self.w.F1 * xi[..., 1, :], lap[..., 1, :] + self.w.F2 * xi[..., 0, :]],
            axis=-2,
        )
        return self.grid.jacobian(psi, second)

    def advection(self, q: np.ndarray, psi: np.ndarray) -> np.ndarray:
        """``B(psi, psi)`` written as ``(J(psi1, q1), J(psi2, q2))``."""
        return self.grid.jacobian(psi, q)


# -- field types -----------------------------------------------------------------


def _check_same(a, b):
    if a.grid != b.grid:
        raise GridMismatchError(f"grid mismatch: {a.grid} vs {b.grid}")


@dataclass(frozen=True, eq=False)
class SpectralField:
    """One-layer real field stored on the active modes."""

    grid: Grid
    modes: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.modes, dtype=complex)
        if m.shape != (self.grid.n_modes,):
            raise ValueError(f"expected {self.grid.n_modes} modes, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "modes", m)

    @classmethod
    def zeros(cls, grid: Grid):
        return cls(grid, np.zeros(grid.n_modes, dtype=complex))

    @classmethod
    def from_physical(cls, grid: Grid, u: np.ndarray):
        return cls(grid, grid.from_physical(np.asarray(u, dtype=float)))

    def to_physical(self) -> np.ndarray:
        return self.grid.to_physical(self.modes)

    @property
    def coeffs(self) -> np.ndarray:
        """Full Hermitian ``(N, N)`` coefficient array."""
        return self.grid.to_full(self.modes)

    def __add__(self, other):
        _check_same(self, other)
        return type(self)(self.grid, self.modes + other.modes)

    def __sub__(self, other):
        _check_same(self, other)
        return type(self)(self.grid, self.modes - other.modes)

    def __mul__(self, c: float):
        return type(self)(self.grid, self.modes * c)

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(self.grid, -self.modes)


@dataclass(frozen=True, eq=False)
class SpectralField2L(SpectralField):
    """Two-layer field; ``modes`` has shape ``(2, M)``."""

    def __post_init__(self):
        m = np.asarray(self.modes, dtype=complex)
        if m.shape != (2, self.grid.n_modes):
            raise ValueError(f"expected (2, {self.grid.n_modes}) modes, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "modes", m)

    @classmethod
    def zeros(cls, grid: Grid):
        return cls(grid, np.zeros((2, grid.n_modes), dtype=complex))

    def layer(self, i: int) -> SpectralField:
        return SpectralField(self.grid, self.modes[i])


def random_field(grid: Grid, rng: np.random.Generator, slope: float = 0.0,
                 amplitude: float = 1.0, layers: int = 2):
    """Random real field with ``|c_k| ~ |k|^(-slope)`` and Gaussian phases."""
    shape = (layers, grid.n_modes) if layers == 2 else (grid.n_modes,)
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    modes = amplitude * z * (grid.lam / grid.lambda1) ** (-slope / 2)
    return SpectralField2L(grid, modes) if layers == 2 else SpectralField(grid, modes)


# -- public operations -------------------------------------------------------------


def streamfunction_from_vorticity(q: SpectralField2L, w: LayerWeights) -> SpectralField2L:
    """Solve ``(Delta + M) psi = q`` mode by mode."""
    return SpectralField2L(q.grid, Operators(q.grid, w).psi(q.modes))


def vorticity_from_streamfunction(psi: SpectralField2L, w: LayerWeights) -> SpectralField2L:
    return SpectralField2L(psi.grid, Operators(psi.grid, w).q(psi.modes))


def jacobian(a: SpectralField, b: SpectralField) -> SpectralField:
    """Pseudo-spectral ``J(a, b) = grad_perp(a) . grad(b)`` with 2/3 dealiasing."""
    _check_same(a, b)
    return SpectralField(a.grid, a.grid.jacobian(a.modes, b.modes))


def bilinear_B(psi: SpectralField2L, xi: SpectralField2L, w: LayerWeights) -> SpectralField2L:
    _check_same(psi, xi)
    return SpectralField2L(psi.grid, Operators(psi.grid, w).bilinear(psi.modes, xi.modes))


def inner_L2(a: SpectralField, b: SpectralField, w: LayerWeights | None = None) -> float:
    """L2 product; layer-weighted for two-layer fields."""
    _check_same(a, b)
    if isinstance(a, SpectralField2L):
        return float(Operators(a.grid, w or LayerWeights()).inner(a.modes, b.modes))
    return float(a.grid.dot(a.modes, b.modes))


def norm_Hk(psi: SpectralField, k: int, w: LayerWeights | None = None) -> float:
    """Weighted Sobolev norm ``||psi||_k`` for ``k`` in -2..4."""
    if k not in range(-2, 5):
        raise ValueError(f"Sobolev order must be in -2..4, got {k}")
    if isinstance(psi, SpectralField2L):
        return math.sqrt(Operators(psi.grid, w or LayerWeights()).norm_sq(psi.modes, k))
    return math.sqrt(psi.grid.sq(psi.modes, k))


def triple_norm_minus1(q: SpectralField2L, w: LayerWeights) -> float:
    return math.sqrt(Operators(q.grid, w).vort_minus1_sq(q.modes))


def triple_norm_0(q: SpectralField2L, w: LayerWeights) -> float:
    return math.sqrt(Operators(q.grid, w).vort_0_sq(q.modes))


def project_low(x: SpectralField, n: int):
    """Keep the ``n`` lowest modes in the fixed ordering, zero the rest."""
    if not 1 <= n <= x.grid.n_modes:
        raise ValueError(f"n must be in 1..{x.grid.n_modes}, got {n}")
    m = np.array(x.modes)
    m[..., n:] = 0
    return type(x)(x.grid, m)


def measure_k0(grid: Grid, w: LayerWeights, rng: np.random.Generator,
               trials: int = 1000, extra: list[np.ndarray] | None = None) -> float:
    """Empirical constant in ``|(B(psi, psi), xi)| <= k0 ||psi|| |Delta psi| |Delta xi|``.

    For each random ``psi`` the maximising ``xi`` is taken in closed form:
    ``sup_xi (B, xi) / |Delta xi| = |Delta^{-1} B(psi, psi)|``.  ``extra`` adds
    sample streamfunctions (e.g. trajectory states) to the random draws.
    """
    ops = Operators(grid, w)
    slopes = np.linspace(0.0, 3.0, 7)
    low = min(grid.n_modes, 40)
    samples = []
    for i in range(trials):
        if i % 2:
            samples.append(random_field(grid, rng, slope=slopes[i % len(slopes)]).modes)
        else:
            # few-mode triads realise larger ratios than broadband fields
            m = np.zeros((2, grid.n_modes), dtype=complex)
            idx = rng.integers(0, low, rng.integers(2, 4))
            m[:, idx] = rng.standard_normal((2, len(idx))) + 1j * rng.standard_normal((2, len(idx)))
            samples.append(m)
    if extra:
        samples.extend(extra)
    psi = np.stack(samples)
    best = 0.0
    for chunk in np.array_split(psi, max(1, len(psi) // 128)):
        b = ops.bilinear(chunk, chunk)
        num = np.sqrt(ops.norm_sq(b, -2))
        den = np.sqrt(ops.norm_sq(chunk, 1) * ops.norm_sq(chunk, 2))
        best = max(best, float(np.max(num / den)))
    return best
