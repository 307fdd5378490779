"""IMEX time stepping of the coupled system and the boundary/terminal measurement map."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import NegativeStateWarning, NonFiniteState, ValidationError
from .spectral import Grid1D, SpaceTimeField
from .taylor_model import ModelPreset, RationalTaylorTerm, custom_model

NEGATIVE_TOL = 1e-8


@dataclass(frozen=True)
class SolverConfig:
    scheme: str = "backward_euler_imex"
    steps: int = 2000
    positivity_clip: bool = False

    def __post_init__(self):
        if self.scheme not in kernels.SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}; choose from {sorted(kernels.SCHEMES)}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValidationError(f"steps must be a positive integer, got {self.steps}")

    @property
    def scheme_id(self) -> int:
        return kernels.SCHEMES[self.scheme]


def _jacobian_bound(term: RationalTaylorTerm, u, v):
    """Pointwise |d_u term| + |d_v term|."""
    du = np.zeros_like(u)
    dv = np.zeros_like(u)
    for m, n, h, c in term.terms:
        den = 2.0 if h == 0 else 1.0 + u
        um = u**m
        vn = v**n
        if n:
            dv += c * n * um * v ** (n - 1) / den
        part = c * m * u ** (m - 1) * vn / den if m else 0.0
        if h == 1:
            part = part - c * um * vn / den**2
        du += part
    return np.abs(du) + np.abs(dv)


def reaction_lipschitz(model: ModelPreset, u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    with np.errstate(all="ignore"):
        lf = _jacobian_bound(model.F, u, v)
        lg = _jacobian_bound(model.G, u, v)
    return float(np.max(np.maximum(lf, lg)))


def solve_forward(model: ModelPreset, grid: Grid1D, f, g, T: float, config: SolverConfig = SolverConfig()):
    """March (u, v) from (f, g) to time T.

    Returns two :class:`SpaceTimeField` objects. A :class:`NegativeStateWarning`
    is issued when either species drops below -1e-8 anywhere (initial data
    included) and clipping is off.
    """
    f = np.broadcast_to(np.asarray(f, dtype=float), (grid.N + 1,)).copy()
    g = np.broadcast_to(np.asarray(g, dtype=float), (grid.N + 1,)).copy()
    if not T > 0:
        raise ValidationError(f"final time must be positive, got {T}")
    dt = T / config.steps
    lip = reaction_lipschitz(model, f, g)
    if not math.isfinite(lip) or lip * dt > 2.0:
        raise NonFiniteState(
            f"explicit reaction Lipschitz estimate {lip:.3g} exceeds 2/dt = {2.0 / dt:.3g}; "
            f"increase steps to at least {math.ceil(lip * T / 2.0)}")
    d1, d2 = model.diffusion
    U, V, status = kernels.march_nonlinear(
        f, g, model.F.as_array(), model.G.as_array(), d1, d2, grid.dx, dt,
        config.steps, config.scheme_id, config.positivity_clip)
    if status >= 0:
        raise NonFiniteState(
            f"non-finite state at step {status} (t = {status * dt:.4g}); "
            "the solution blew up or dt is too large")
    lo = min(U.min(), V.min())
    if lo < -NEGATIVE_TOL and not config.positivity_clip:
        warnings.warn(f"solution reached {lo:.3e} < 0", NegativeStateWarning, stacklevel=2)
    return SpaceTimeField(grid, T, config.steps, U), SpaceTimeField(grid, T, config.steps, V)


@dataclass
class MeasurementRecord:
    """Boundary traces over time plus terminal snapshots of both species.

    ``boundary_u[:, 0]`` is the trace at x = 0, ``boundary_u[:, 1]`` at x = L.
    ``order`` is 0 for raw data and k for an extracted k-th variation.
    """

    epsilon: float
    grid: Grid1D
    times: np.ndarray = field(repr=False)
    boundary_u: np.ndarray = field(repr=False)
    boundary_v: np.ndarray = field(repr=False)
    terminal_u: np.ndarray = field(repr=False)
    terminal_v: np.ndarray = field(repr=False)
    order: int = 0

    def __post_init__(self):
        nt = len(self.times)
        for name in ("boundary_u", "boundary_v"):
            if np.shape(getattr(self, name)) != (nt, 2):
                raise ValidationError(f"{name} must have shape ({nt}, 2)")
        for name in ("terminal_u", "terminal_v"):
            if np.shape(getattr(self, name)) != (self.grid.N + 1,):
                raise ValidationError(f"{name} must have {self.grid.N + 1} nodes")

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def arrays(self):
        return (self.boundary_u, self.boundary_v, self.terminal_u, self.terminal_v)

    def with_arrays(self, arrays, epsilon=None, order=None):
        bu, bv, tu, tv = arrays
        return replace(self, boundary_u=bu, boundary_v=bv, terminal_u=tu, terminal_v=tv,
                       epsilon=self.epsilon if epsilon is None else epsilon,
                       order=self.order if order is None else order)

    def distance(self, other) -> float:
        """Sup-norm over all boundary and terminal samples."""
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.arrays(), other.arrays()))

    def to_csv(self, path):
        """Long format: ``epsilon,order,series,coord,u,v``; series is left, right or terminal."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epsilon", "order", "series", "coord", "u", "v"])
            e, o = repr(float(self.epsilon)), str(self.order)
            for side, col in (("left", 0), ("right", 1)):
                for t, a, b in zip(self.times, self.boundary_u[:, col], self.boundary_v[:, col]):
                    w.writerow([e, o, side, repr(float(t)), repr(float(a)), repr(float(b))])
            for x, a, b in zip(self.grid.nodes, self.terminal_u, self.terminal_v):
                w.writerow([e, o, "terminal", repr(float(x)), repr(float(a)), repr(float(b))])

    @classmethod
    def from_csv(cls, path):
        rows = {"left": [], "right": [], "terminal": []}
        eps = order = None
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                eps, order = float(r["epsilon"]), int(r["order"])
                rows[r["series"]].append((float(r["coord"]), float(r["u"]), float(r["v"])))
        left, right, term = (np.array(rows[k]) for k in ("left", "right", "terminal"))
        grid = Grid1D(term[-1, 0], len(term) - 1)
        return cls(eps, grid, left[:, 0],
                   np.stack([left[:, 1], right[:, 1]], axis=1),
                   np.stack([left[:, 2], right[:, 2]], axis=1),
                   term[:, 1], term[:, 2], order)


def measure(u: SpaceTimeField, v: SpaceTimeField, epsilon: float = 0.0) -> MeasurementRecord:
    if not u.same_layout(v):
        raise ValidationError("u and v must share grid and time levels")
    return MeasurementRecord(
        float(epsilon), u.grid, u.times,
        u.values[:, [0, -1]].copy(), v.values[:, [0, -1]].copy(),
        u.terminal.copy(), v.terminal.copy())


def constant_record(grid: Grid1D, T: float, steps: int, base) -> MeasurementRecord:
    """Measurement of the constant equilibrium ``base`` (exact, no solve)."""
    nt = steps + 1
    u0, v0 = base
    return MeasurementRecord(0.0, grid, np.linspace(0.0, T, nt),
                             np.full((nt, 2), float(u0)), np.full((nt, 2), float(v0)),
                             np.full(grid.N + 1, float(u0)), np.full(grid.N + 1, float(v0)))


# -- convergence study -------------------------------------------------------

@dataclass
class ConvergenceResult:
    spatial_orders: list
    temporal_orders: list
    spatial_differences: list
    temporal_differences: list

    @property
    def spatial_order(self) -> float:
        return self.spatial_orders[-1]

    @property
    def temporal_order(self) -> float:
        return self.temporal_orders[-1]


def linear_test_model(c_u=0.5, c_v=-0.3, diffusion=(0.2, 0.1)) -> ModelPreset:
    """Heat equations with constant-coefficient linear reaction c w."""
    return custom_model([(1, 0, 0, 2.0 * c_u)], [(0, 1, 0, 2.0 * c_v)], [(0.0, 0.0)], diffusion)


def _richardson(solutions, stride):
    diffs = []
    for a, b in zip(solutions[:-1], solutions[1:]):
        diffs.append(float(np.max(np.abs(a - b[::stride]))))
    orders = [math.log2(d1 / d2) for d1, d2 in zip(diffs[:-1], diffs[1:])]
    return orders, diffs


def convergence_probe(model: ModelPreset | None = None, scheme="backward_euler_imex",
                      grid_levels=(128, 256, 512), step_levels=(1024, 2048, 4096),
                      L=math.pi, T=1.0, f=None, g=None) -> ConvergenceResult:
    """Observed orders from successive halvings (Richardson: log2 of difference ratios).

    Space: N runs over ``grid_levels`` at ``max(step_levels)`` steps; time: steps
    run over ``step_levels`` at ``max(grid_levels)`` cells.
    """
    if len(grid_levels) < 3 or len(step_levels) < 3:
        raise ValidationError("need at least 3 refinement levels")
    model = linear_test_model() if model is None else model
    f = f or (lambda x: 1.0 + 0.5 * np.cos(math.pi * x / L) + 0.3 * np.cos(2 * math.pi * x / L))
    g = g or (lambda x: 0.8 + 0.4 * np.cos(math.pi * x / L))

    def terminal(N, steps):
        grid = Grid1D(L, N)
        u, v = solve_forward(model, grid, f(grid.nodes), g(grid.nodes), T, SolverConfig(scheme, steps))
        return np.concatenate([u.terminal, v.terminal])

    def split(sol, N):
        return sol[: N + 1], sol[N + 1:]

    spatial = []
    for N in grid_levels:
        u, v = split(terminal(N, max(step_levels)), N)
        spatial.append(np.concatenate([u[:: N // grid_levels[0]], v[:: N // grid_levels[0]]]))
    s_orders, s_diffs = _richardson(spatial, 1)
    temporal = [terminal(max(grid_levels), s) for s in step_levels]
    t_orders, t_diffs = _richardson(temporal, 1)
    return ConvergenceResult(s_orders, t_orders, s_diffs, t_diffs)
