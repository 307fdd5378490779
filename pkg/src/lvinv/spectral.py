"""Interval grid, Neumann cosine eigenbasis, projections and separated solutions."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import exprel

from .errors import GridMismatch, TooManyModes, ValidationError


@dataclass(frozen=True)
class Grid1D:
    """Equispaced nodes on [0, L] with trapezoid weights."""

    L: float
    N: int

    def __post_init__(self):
        if not self.L > 0:
            raise ValidationError(f"domain length must be positive, got {self.L}")
        if int(self.N) != self.N or self.N < 8:
            raise ValidationError(f"need an integer N >= 8 cells, got {self.N}")
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "N", int(self.N))

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.N + 1)

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.N + 1, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    def integrate(self, values):
        """Trapezoid rule along the last axis."""
        return np.asarray(values) @ self.weights


def laplacian(grid: Grid1D, w) -> np.ndarray:
    """Second difference with mirror ghost nodes (homogeneous Neumann), along the last axis."""
    w = np.asarray(w)
    out = np.empty_like(w)
    h2 = grid.dx**2
    out[..., 1:-1] = (w[..., :-2] - 2.0 * w[..., 1:-1] + w[..., 2:]) / h2
    out[..., 0] = 2.0 * (w[..., 1] - w[..., 0]) / h2
    out[..., -1] = 2.0 * (w[..., -2] - w[..., -1]) / h2
    return out


@dataclass(frozen=True)
class EigenMode:
    k: int
    mu: float
    phi: np.ndarray = field(repr=False)
    grid: Grid1D = field(repr=False)


def _mode_profile(grid, k, x=None):
    x = grid.nodes if x is None else x
    if k == 0:
        return np.full_like(np.asarray(x, dtype=float), 1.0 / math.sqrt(grid.L))
    return math.sqrt(2.0 / grid.L) * np.cos(k * math.pi * np.asarray(x) / grid.L)


def eigenvalue(k, L) -> float:
    return (k * math.pi / L) ** 2


def discrete_eigenvalue(k, grid: Grid1D) -> float:
    """Eigenvalue of ``-laplacian`` on the sampled cosine (exact for the stencil)."""
    return (2.0 / grid.dx * math.sin(k * math.pi * grid.dx / (2.0 * grid.L))) ** 2


def neumann_mode(grid: Grid1D, k: int) -> EigenMode:
    if k < 0 or k > grid.N // 2:
        raise TooManyModes(f"mode {k} not resolved on N={grid.N} (max {grid.N // 2})")
    return EigenMode(k, eigenvalue(k, grid.L), _mode_profile(grid, k), grid)


def neumann_eigenpairs(grid: Grid1D, K: int) -> list:
    """Modes k = 0..K of -d^2/dx^2 with Neumann conditions, unit L2 norm."""
    if K < 0 or K > grid.N // 2:
        raise TooManyModes(f"K={K} exceeds N/2={grid.N // 2}")
    return [neumann_mode(grid, k) for k in range(K + 1)]


@dataclass
class SpaceTimeField:
    """Samples on (steps+1 time levels) x (N+1 nodes), t_n = n T / steps."""

    grid: Grid1D
    T: float
    steps: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (self.steps + 1, self.grid.N + 1):
            raise GridMismatch(
                f"values shape {self.values.shape} != ({self.steps + 1}, {self.grid.N + 1})")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("field contains non-finite values")

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)

    @property
    def initial(self) -> np.ndarray:
        return self.values[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def same_layout(self, other) -> bool:
        return (self.grid == other.grid and self.steps == other.steps
                and math.isclose(self.T, other.T, rel_tol=1e-14))

    def to_csv(self, path, stride: int = 1):
        """Header ``t,x_0,...,x_N``; one row per time level (every ``stride``-th level)."""
        if np.iscomplexobj(self.values):
            raise ValidationError("complex fields are not serialisable to CSV")
        if stride < 1 or self.steps % stride:
            raise ValidationError(f"stride {stride} must divide steps = {self.steps}")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [repr(float(x)) for x in self.grid.nodes])
            for t, row in zip(self.times[::stride], self.values[::stride]):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        nodes = np.array([float(x) for x in rows[0][1:]])
        data = np.array([[float(x) for x in r] for r in rows[1:]])
        grid = Grid1D(nodes[-1], len(nodes) - 1)
        times = data[:, 0]
        return cls(grid, float(times[-1]), len(times) - 1, data[:, 1:])


def _check_length(values, grid):
    if np.shape(values)[-1] != grid.N + 1:
        raise GridMismatch(f"field has {np.shape(values)[-1]} nodes, grid has {grid.N + 1}")


def project(field_slice, mode: EigenMode):
    """Trapezoid inner product with the mode profile.

    A :class:`SpaceTimeField` is projected slice by slice (one value per time level).
    """
    if isinstance(field_slice, SpaceTimeField):
        if field_slice.grid != mode.grid:
            raise GridMismatch("field and mode live on different grids")
        values = field_slice.values
    else:
        values = np.asarray(field_slice)
    _check_length(values, mode.grid)
    return values @ (mode.grid.weights * mode.phi)


def projection_matrix(grid: Grid1D, modes) -> np.ndarray:
    """(N+1, n_modes) matrix; ``values @ P`` projects onto every mode at once."""
    return np.stack([grid.weights * m.phi for m in modes], axis=1)


def _exp_field(mode, rate, T, steps):
    t = np.linspace(0.0, T, steps + 1)
    return SpaceTimeField(mode.grid, T, steps, np.exp(rate * t)[:, None] * mode.phi[None, :])


def separated_solution(mode: EigenMode, d: float, c: float, T: float, steps: int) -> SpaceTimeField:
    """exp((c - d mu) t) phi(x): solves w_t - d w_xx - c w = 0 with Neumann data."""
    return _exp_field(mode, c - d * mode.mu, T, steps)


def adjoint_test_function(mode: EigenMode, d: float, c: float, T: float, steps: int) -> SpaceTimeField:
    """exp((d mu - c) t) phi(x): solves -w_t - d w_xx - c w = 0 with Neumann data."""
    return _exp_field(mode, d * mode.mu - c, T, steps)


class ComplexField(SpaceTimeField):
    """SpaceTimeField holding complex samples."""


def cgo_plane_wave(grid: Grid1D, xi: float, d: float, c: float, T: float, steps: int) -> ComplexField:
    """exp((xi^2 - c) t - i xi x / sqrt(d)); solves the adjoint equation in the interior only."""
    t = np.linspace(0.0, T, steps + 1)[:, None]
    x = grid.nodes[None, :]
    return ComplexField(grid, T, steps, np.exp((xi**2 - c) * t - 1j * xi * x / math.sqrt(d)))


# -- closed-form modal fields ------------------------------------------------

def _product_modes(i, j, L):
    """phi_i * phi_j as a list of (coefficient, mode) pairs."""
    if i == 0 and j == 0:
        return [(1.0 / math.sqrt(L), 0)]
    if i == 0 or j == 0:
        return [(1.0 / math.sqrt(L), i + j)]
    out = [(1.0 / math.sqrt(2.0 * L), i + j)]
    if i == j:
        out.append((1.0 / math.sqrt(L), 0))
    else:
        out.append((1.0 / math.sqrt(2.0 * L), abs(i - j)))
    return out


@dataclass(frozen=True)
class ModalField:
    """Finite sum  sum_j amp_j exp(rate_j t) phi_{k_j}(x)  on an interval of length L."""

    L: float
    terms: tuple = ()

    def __post_init__(self):
        merged = {}
        for amp, rate, k in self.terms:
            key = (float(rate), int(k))
            merged[key] = merged.get(key, 0.0) + float(amp)
        terms = tuple((a, r, k) for (r, k), a in sorted(merged.items()) if a != 0.0)
        object.__setattr__(self, "terms", terms)

    @classmethod
    def from_samples(cls, values, grid: Grid1D, K: int | None = None, rate=0.0, tol=1e-9):
        """Expand grid samples in modes 0..K; raises if the expansion is not exact to ``tol``."""
        K = grid.N // 2 if K is None else K
        modes = neumann_eigenpairs(grid, K)
        coeffs = np.asarray(values) @ projection_matrix(grid, modes)
        approx = coeffs @ np.stack([m.phi for m in modes])
        scale = max(1.0, float(np.max(np.abs(values))))
        if np.max(np.abs(approx - values)) > tol * scale:
            raise ValidationError(f"field is not a combination of modes 0..{K} (to {tol:g})")
        return cls(grid.L, tuple((c, rate, k) for k, c in enumerate(coeffs) if abs(c) > 1e-14 * scale))

    def __add__(self, other):
        return ModalField(self.L, self.terms + other.terms)

    def scale(self, s):
        return ModalField(self.L, tuple((s * a, r, k) for a, r, k in self.terms))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        out = []
        for a1, r1, k1 in self.terms:
            for a2, r2, k2 in other.terms:
                for c, k in _product_modes(k1, k2, self.L):
                    out.append((a1 * a2 * c, r1 + r2, k))
        return ModalField(self.L, tuple(out))

    __rmul__ = __mul__

    def evolve(self, d, c):
        """Free evolution of initial data under w_t = d w_xx + c w (rates are added)."""
        return ModalField(self.L, tuple((a, r + c - d * eigenvalue(k, self.L), k)
                                        for a, r, k in self.terms))

    def values(self, grid: Grid1D, times) -> np.ndarray:
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.zeros((times.size, grid.N + 1))
        for a, r, k in self.terms:
            out += a * np.exp(r * times)[:, None] * _mode_profile(grid, k)[None, :]
        return out

    def sample(self, grid: Grid1D, T: float, steps: int) -> SpaceTimeField:
        return SpaceTimeField(grid, T, steps, self.values(grid, np.linspace(0.0, T, steps + 1)))

    def coefficient(self, k, t) -> float:
        return sum(a * math.exp(r * t) for a, r, kk in self.terms if kk == k)


def duhamel_terminal(initial: ModalField, source: ModalField, d: float, c: float, T: float) -> dict:
    """Exact mode coefficients at time T of w_t = d w_xx + c w + source, w(0) = initial.

    Returns ``{k: coefficient}``; each source term contributes
    amp * exp((c - d mu_k) T) * (exp(a T) - 1) / a with a = rate - c + d mu_k.
    """
    out = {}
    for amp, rate, k in initial.terms:
        g = c - d * eigenvalue(k, initial.L)
        out[k] = out.get(k, 0.0) + amp * math.exp((rate + g) * T)
    for amp, rate, k in source.terms:
        g = c - d * eigenvalue(k, source.L)
        a = rate - g
        out[k] = out.get(k, 0.0) + amp * math.exp(g * T) * T * float(exprel(a * T))
    return out
