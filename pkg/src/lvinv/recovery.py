"""Order-by-order reconstruction of Taylor coefficients from measurement families.

For a variation field w of order k solving

    w_t - d w_xx - c w = S,    Neumann data,    w(0) = w_0,

testing against omega = exp((d mu - c) t) phi (an adjoint solution that meets
the Neumann condition) gives the scalar identity

    <w(T), phi> exp((d mu - c) T) - <w_0, phi> = int_0^T int_0^L S omega dx dt.

The source S is linear in the unknown order-k coefficients, with columns
k!/(m! n!) u1^m v1^n, plus a known part built from lower orders. Each
(experiment, mode) pair gives one row; the F and G blocks are solved
separately by least squares.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import (DegenerateData, GridMismatch, InconsistentTable, RankDeficient, SignLoss,
                     TooManyModes, ValidationError)
from .exact import as_modal, first_order_fields, second_order_terminal, synthesize
from .forward import SolverConfig, measure, solve_forward
from .spectral import EigenMode, Grid1D, ModalField, SpaceTimeField, neumann_mode
from .taylor_model import ModelPreset, RationalTaylorTerm, TaylorTable, evaluate
from .variation import (DEFAULT_EPSILONS, EpsilonFamily, VariationStack, assemble_initial,
                        measured_variation, series_coefficient, solve_variation_direct)

DEFAULT_MODES = (0, 1, 2, 3, 4)
ZERO_PROJECTION = 1e-12
RANK_RTOL = 1e-10
NULL_TOL = 1e-6


# -- experiment design -------------------------------------------------------

def _as_tuple(arrs):
    return tuple(np.asarray(a, dtype=float) for a in arrs)


@dataclass(frozen=True)
class Experiment:
    """Data family coefficients f_1..f_n and g_1..g_n for one experiment."""

    f: tuple
    g: tuple
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "f", _as_tuple(self.f))
        object.__setattr__(self, "g", _as_tuple(self.g))
        if not self.f or len(self.f) != len(self.g):
            raise ValidationError("experiment needs equally many f_i and g_i (at least one)")

    def coefficient(self, k):
        """(f_k, g_k), zero beyond the stored order."""
        if k <= len(self.f):
            return self.f[k - 1], self.g[k - 1]
        z = np.zeros_like(self.f[0])
        return z, z


@dataclass(frozen=True)
class ExperimentDesign:
    grid: Grid1D
    experiments: tuple
    modes: tuple = DEFAULT_MODES
    T: float = 1.0
    solver: SolverConfig = SolverConfig()
    epsilons: tuple = DEFAULT_EPSILONS

    def __post_init__(self):
        object.__setattr__(self, "experiments", tuple(self.experiments))
        object.__setattr__(self, "modes", tuple(int(k) for k in self.modes))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        if not self.experiments:
            raise ValidationError("design needs at least one experiment")
        if not self.modes:
            raise ValidationError("design needs at least one mode")
        if max(self.modes) > self.grid.N // 2 or min(self.modes) < 0:
            raise TooManyModes(f"modes {self.modes} not resolved on N={self.grid.N}")
        if not self.T > 0:
            raise ValidationError("T must be positive")
        for e in self.experiments:
            for a in e.f + e.g:
                if a.shape != (self.grid.N + 1,):
                    raise GridMismatch(f"experiment data has shape {a.shape}, grid has {self.grid.N + 1} nodes")

    @property
    def eigenmodes(self):
        return [neumann_mode(self.grid, k) for k in self.modes]

    def family(self, i: int, base, order: int = 1) -> EpsilonFamily:
        e = self.experiments[i]
        n = max(order, len(e.f))
        fs, gs = zip(*(e.coefficient(k) for k in range(1, n + 1)))
        return EpsilonFamily(base, fs, gs, self.epsilons)

    def check_overdetermined(self, k: int):
        rows = len(self.experiments) * len(self.modes)
        if rows < k + 1:
            raise ValidationError(f"order {k} has {k + 1} unknowns per block but the design gives {rows} rows")


def nonneg_mode(grid: Grid1D, k: int) -> np.ndarray:
    """phi_k shifted by its amplitude so that it is nonnegative (min 0)."""
    phi = neumann_mode(grid, k).phi
    return phi + float(np.max(np.abs(phi))) if k else phi


def default_design(grid: Grid1D, T: float = 1.0, solver: SolverConfig | None = None,
                   epsilons=DEFAULT_EPSILONS, modes=DEFAULT_MODES, excite_v: bool = True) -> ExperimentDesign:
    """Three experiments exciting pure-u, pure-v and mixed sources.

    ``excite_v=False`` sets every g_1 to zero (a deliberately poor design).
    """
    one = np.ones(grid.N + 1)
    phi0 = neumann_mode(grid, 0).phi
    exps = [
        Experiment((one,), (phi0,), "f1=1, g1=phi0"),
        Experiment((nonneg_mode(grid, 1),), (phi0 + 0.5 * neumann_mode(grid, 2).phi,),
                   "f1=phi1+, g1=phi0+phi2/2"),
        Experiment((one + nonneg_mode(grid, 2),), (nonneg_mode(grid, 1),), "f1=1+phi2+, g1=phi1+"),
    ]
    if not excite_v:
        exps = [Experiment(e.f, tuple(np.zeros_like(g) for g in e.g), e.label.split(",")[0] + ", g1=0")
                for e in exps]
    return ExperimentDesign(grid, tuple(exps), tuple(modes), T, solver or SolverConfig(), tuple(epsilons))


# -- projection identities ---------------------------------------------------

def _trapezoid_time(T, steps):
    w = np.full(steps + 1, T / steps)
    w[0] = w[-1] = 0.5 * T / steps
    return w


def _omega_time(mode: EigenMode, d, c, times):
    return np.exp((d * mode.mu - c) * times)


def source_integrals(S_values, modes, d, c, T, steps, grid):
    """int int S omega_k dx dt for each mode (trapezoid in x and t)."""
    S_values = np.asarray(S_values)
    P = np.stack([grid.weights * m.phi for m in modes], axis=1)
    proj = S_values @ P  # (steps+1, n_modes)
    times = np.linspace(0.0, T, steps + 1)
    wt = _trapezoid_time(T, steps)
    omega = np.stack([_omega_time(m, d, c, times) for m in modes], axis=1)
    return (wt[:, None] * proj * omega).sum(axis=0)


def duhamel_projection(w_T, w_0, S, mode: EigenMode, d: float, c: float, T: float, steps: int | None = None):
    """Residual of the tested identity <w_T,phi> e^{(d mu-c)T} - <w_0,phi> - int int S omega.

    ``S`` is a :class:`SpaceTimeField` or ``None`` for a zero source.
    """
    grid = mode.grid
    for name, a in (("w_T", w_T), ("w_0", w_0)):
        if np.shape(a) != (grid.N + 1,):
            raise GridMismatch(f"{name} has shape {np.shape(a)}, mode grid has {grid.N + 1} nodes")
    lhs = np.dot(grid.weights * mode.phi, w_T) * math.exp((d * mode.mu - c) * T) \
        - np.dot(grid.weights * mode.phi, w_0)
    if S is None:
        return float(lhs)
    if not isinstance(S, SpaceTimeField):
        raise ValidationError("source must be a SpaceTimeField")
    if S.grid != grid:
        raise GridMismatch("source and mode live on different grids")
    if not math.isclose(S.T, T, rel_tol=1e-14):
        raise GridMismatch(f"source ends at T={S.T}, identity uses T={T}")
    return float(lhs - source_integrals(S.values, [mode], d, c, T, S.steps, grid)[0])


@dataclass
class FirstOrderEstimate:
    value: float
    samples: list
    spread: float


def recover_first_order(terminals_v1, g1_list, d2: float, grid: Grid1D, T: float,
                        modes=DEFAULT_MODES) -> FirstOrderEstimate:
    """G_v = (1/T) ln(<v1(T),phi_k>/<g1,phi_k>) + d2 mu_k, averaged over informative pairs."""
    samples = []
    any_data = False
    for vT, g1 in zip(terminals_v1, g1_list):
        g1 = np.asarray(g1, dtype=float)
        scale = math.sqrt(float(grid.integrate(g1**2))) or 1.0
        for k in modes:
            mode = neumann_mode(grid, k)
            a = float(np.dot(grid.weights * mode.phi, g1))
            if abs(a) <= 1e-10 * scale:
                continue
            any_data = True
            b = float(np.dot(grid.weights * mode.phi, vT))
            if abs(b) < ZERO_PROJECTION:
                continue
            if b / a <= 0:
                raise SignLoss(f"mode {k}: projection ratio {b / a:.3g} <= 0 (noise exceeds signal)")
            samples.append(math.log(b / a) / T + d2 * mode.mu)
    if not any_data or not samples:
        raise DegenerateData("no mode has a non-zero projection of g_1 and v^(1)(T)")
    arr = np.array(samples)
    return FirstOrderEstimate(float(arr.mean()), samples, float(arr.std()))


@dataclass
class BlockSolution:
    names: list
    x: np.ndarray
    residual: float
    cond: float
    unidentifiable: list


def solve_block(A, b, names, damping: float = 0.0) -> BlockSolution:
    """Column-equilibrated least squares (column-pivoted QR) with identifiability analysis.

    A coefficient is unidentifiable when its column vanishes or its unit
    vector has a component in the numerical null space. ``residual`` is
    ||A x - b|| / ||b||; ``cond`` is the condition number after equilibration.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    norms = np.linalg.norm(A, axis=0)
    top = float(norms.max()) if norms.size else 0.0
    live = norms > max(top, 1e-300) * 1e-13
    unident = [n for n, ok in zip(names, live) if not ok]
    x = np.zeros(A.shape[1])
    cond = math.inf
    if live.any():
        As = A[:, live] / norms[live]
        U, s, Vt = np.linalg.svd(As, full_matrices=False)
        rank = int(np.sum(s > s[0] * RANK_RTOL))
        cond = float(s[0] / s[-1]) if s[-1] > 0 else math.inf
        live_names = [n for n, ok in zip(names, live) if ok]
        if rank < As.shape[1] or As.shape[0] < As.shape[1]:
            null = Vt[rank:] if rank < Vt.shape[0] else np.zeros((0, As.shape[1]))
            weight = np.sqrt((null**2).sum(axis=0)) if null.size else np.ones(As.shape[1])
            unident += [n for n, w in zip(live_names, weight) if w > NULL_TOL]
        if damping > 0:
            As_aug = np.vstack([As, math.sqrt(damping) * np.eye(As.shape[1])])
            b_aug = np.concatenate([b, np.zeros(As.shape[1])])
        else:
            As_aug, b_aug = As, b
        y = linalg.lstsq(As_aug, b_aug, lapack_driver="gelsy")[0]
        x[live] = y / norms[live]
    bn = float(np.linalg.norm(b))
    res = float(np.linalg.norm(A @ x - b))
    return BlockSolution(list(names), x, res / bn if bn > 0 else res, cond, unident)


@dataclass
class OrderEstimate:
    order: int
    F: dict
    G: dict
    residual_F: float
    residual_G: float
    cond_F: float
    cond_G: float
    rows: int


def _parts(stack: VariationStack, k):
    u = {i: stack.u(i).values / math.factorial(i) for i in range(1, k)}
    v = {i: stack.v(i).values / math.factorial(i) for i in range(1, k)}
    return u, v


def assemble_order_system(k, terminals, stacks, tableF, tableG, design: ExperimentDesign, diffusion):
    """Rows (A_F, b_F, A_G, b_G) of the order-k identities over experiments x modes."""
    if k < 2:
        raise ValidationError("order-k systems start at k = 2; use recover_first_order for k = 1")
    if len(terminals) != len(design.experiments) or len(stacks) != len(design.experiments):
        raise ValidationError("need one terminal pair and one stack per experiment")
    grid, T, steps = design.grid, design.T, design.solver.steps
    d1, d2 = diffusion
    cF, cG = tableF[(1, 0)], tableG[(0, 1)]
    modes = design.eigenmodes
    P = np.stack([grid.weights * m.phi for m in modes], axis=1)
    eF = np.array([math.exp((d1 * m.mu - cF) * T) for m in modes])
    eG = np.array([math.exp((d2 * m.mu - cG) * T) for m in modes])
    unknown = [(m, k - m) for m in range(k + 1)]
    fact = math.factorial(k)
    AF, bF, AG, bG = [], [], [], []
    for exp, (tu, tv), stack in zip(design.experiments, terminals, stacks):
        if stack.max_order < k - 1:
            raise ValidationError(f"stack holds orders up to {stack.max_order}, need {k - 1}")
        lay = stack.u(1)
        if lay.grid != grid or lay.steps != steps or not math.isclose(lay.T, T, rel_tol=1e-14):
            raise GridMismatch("variation stack layout differs from the design")
        u_parts, v_parts = _parts(stack, k)
        f_k, g_k = exp.coefficient(k)
        known_F = series_coefficient(k, tableF, u_parts, v_parts, range(2, k))
        known_G = series_coefficient(k, tableG, u_parts, v_parts, range(2, k))
        shape = lay.values.shape
        IF_known = source_integrals(np.broadcast_to(known_F, shape), modes, d1, cF, T, steps, grid)
        IG_known = source_integrals(np.broadcast_to(known_G, shape), modes, d2, cG, T, steps, grid)
        bF.append(np.asarray(tu) @ P * eF - fact * (f_k @ P) - IF_known)
        bG.append(np.asarray(tv) @ P * eG - fact * (g_k @ P) - IG_known)
        u1, v1 = stack.u(1).values, stack.v(1).values
        colsF, colsG = [], []
        for m, n in unknown:
            col = fact / (math.factorial(m) * math.factorial(n)) * u1**m * v1**n
            colsF.append(source_integrals(col, modes, d1, cF, T, steps, grid))
            colsG.append(source_integrals(col, modes, d2, cG, T, steps, grid))
        AF.append(np.stack(colsF, axis=1))
        AG.append(np.stack(colsG, axis=1))
    return np.vstack(AF), np.concatenate(bF), np.vstack(AG), np.concatenate(bG)


def recover_order_k(k, terminals, stacks, tableF: TaylorTable, tableG: TaylorTable,
                    design: ExperimentDesign, diffusion, damping: float = 0.0) -> OrderEstimate:
    """Least-squares estimates of all F_mn, G_mn with m + n = k.

    ``terminals`` holds (u^(k)(T), v^(k)(T)) per experiment, ``stacks`` the
    variation fields of orders 1..k-1, and the tables the coefficients of
    orders below k (order-k entries are ignored).
    """
    design.check_overdetermined(k)
    AF, bF, AG, bG = assemble_order_system(k, terminals, stacks, tableF, tableG, design, diffusion)
    names = [(m, k - m) for m in range(k + 1)]
    sF = solve_block(AF, bF, [f"F{m}{n}" for m, n in names], damping)
    sG = solve_block(AG, bG, [f"G{m}{n}" for m, n in names], damping)
    bad = sF.unidentifiable + sG.unidentifiable
    if bad:
        raise RankDeficient(f"order {k}: design cannot identify {', '.join(bad)}", unidentifiable=tuple(bad))
    return OrderEstimate(k, dict(zip(names, sF.x)), dict(zip(names, sG.x)),
                         sF.residual, sG.residual, sF.cond, sG.cond, AF.shape[0])


# -- reports -----------------------------------------------------------------

REPORT_COLUMNS = ["order", "target", "m", "n", "estimate", "truth", "abs_error", "residual", "cond"]


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


@dataclass
class CoefficientEstimate:
    order: int
    target: str
    m: int
    n: int
    estimate: float
    truth: float | None = None
    residual: float = math.nan
    cond: float = math.nan

    @property
    def abs_error(self):
        return None if self.truth is None else abs(self.estimate - self.truth)

    @property
    def rel_error(self):
        if self.truth is None:
            return None
        return self.abs_error / abs(self.truth) if self.truth != 0 else self.abs_error

    @property
    def name(self) -> str:
        return f"{self.target}{self.m}{self.n}"


@dataclass
class RecoveryReport:
    base: tuple
    entries: list = field(default_factory=list)
    tableF: TaylorTable | None = None
    tableG: TaylorTable | None = None
    notes: list = field(default_factory=list)
    measured: dict = field(default_factory=dict)

    @property
    def max_order(self) -> int:
        return max((e.order for e in self.entries), default=0)

    def get(self, name: str) -> CoefficientEstimate:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def order_entries(self, k):
        return [e for e in self.entries if e.order == k]

    def cond(self, k) -> float:
        vals = [e.cond for e in self.order_entries(k) if not math.isnan(e.cond)]
        return max(vals) if vals else math.nan

    def attach_truth(self, tableF: TaylorTable, tableG: TaylorTable):
        for e in self.entries:
            t = tableF if e.target == "F" else tableG
            if (e.m, e.n) in t.coeffs:
                e.truth = float(t[(e.m, e.n)])
        return self

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for e in self.entries:
                w.writerow([e.order, e.target, e.m, e.n, _fmt(float(e.estimate)),
                            _fmt(e.truth if e.truth is None else float(e.truth)),
                            _fmt(e.abs_error if e.abs_error is None else float(e.abs_error)),
                            _fmt(float(e.residual)), _fmt(float(e.cond))])

    def summary(self) -> str:
        lines = [f"base solution: {self.base}"]
        for k in sorted({e.order for e in self.entries}):
            lines.append(f"order {k}:")
            for e in self.order_entries(k):
                s = f"  {e.name:>4} = {e.estimate: .6g}"
                if e.truth is not None:
                    s += f"   truth {e.truth: .6g}   abs error {e.abs_error:.3g}"
                lines.append(s)
            c = self.cond(k)
            if not math.isnan(c):
                lines.append(f"  design condition number {c:.3g}")
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


def _order_entries(est: OrderEstimate):
    out = []
    for target, coeffs, res, cond in (("F", est.F, est.residual_F, est.cond_F),
                                      ("G", est.G, est.residual_G, est.cond_G)):
        for (m, n), val in sorted(coeffs.items(), key=lambda kv: -kv[0][0]):
            out.append(CoefficientEstimate(est.order, target, m, n, float(val), None, res, cond))
    return out


# -- pipelines ---------------------------------------------------------------

def generate_measurements(model: ModelPreset, design: ExperimentDesign, base, max_order: int = 1,
                          workers: int | None = None):
    """MeasurementRecords for every (experiment, eps); forward solves run concurrently."""
    if tuple(map(float, base)) not in model.base_solutions:
        raise ValidationError(f"{tuple(base)} is not a base solution of the model")
    jobs = []
    for i in range(len(design.experiments)):
        fam = design.family(i, base, max_order)
        for e in design.epsilons:
            jobs.append((i, e, assemble_initial(fam, e)))

    def run(job):
        i, e, (f, g) = job
        u, v = solve_forward(model, design.grid, f, g, design.T, design.solver)
        return measure(u, v, e)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        recs = list(pool.map(run, jobs))
    out = [[] for _ in design.experiments]
    for (i, _, _), r in zip(jobs, recs):
        out[i].append(r)
    return out


def require_diagonal(tableF: TaylorTable, tableG: TaylorTable):
    """The adjoint identities decouple only when F_v = G_u = 0 at the base."""
    if abs(tableF[(0, 1)]) > 1e-12 or abs(tableG[(1, 0)]) > 1e-12:
        raise ValidationError(
            f"recovery needs F_v = G_u = 0 at the base (got F_v = {tableF[(0, 1)]:.3g}, "
            f"G_u = {tableG[(1, 0)]:.3g})")


def _known_tables(base, max_order, G_v, known_Fu):
    tF = TaylorTable(base, max_order, {(1, 0): known_Fu})
    tG = TaylorTable(base, max_order, {(0, 1): G_v})
    return tF, tG


def _first_order_entries(fo: FirstOrderEstimate, known_Fu, relaxed):
    notes = []
    if relaxed:
        notes.append(f"F_u = {known_Fu:g} declared known (relaxed mode)")
    entry = CoefficientEstimate(1, "G", 0, 1, fo.value, None, fo.spread, math.nan)
    return [entry], notes


def recover_from_measurements(records, design: ExperimentDesign, base, diffusion, max_order: int,
                              known_Fu: float = 0.0, damping: float = 0.0) -> RecoveryReport:
    """Full order-by-order reconstruction using measurement records only.

    ``records[i]`` holds one MeasurementRecord per eps of ``design.epsilons``
    for experiment i. Lower-order variation fields are re-solved from the
    coefficients already recovered (they are known at that point).
    """
    base = (float(base[0]), float(base[1]))
    eps = design.epsilons
    measured = {k: [measured_variation(r, eps, base, k) for r in records] for k in range(1, max_order + 1)}
    fo = recover_first_order([m.terminal_v for m in measured[1]],
                             [e.g[0] for e in design.experiments], diffusion[1], design.grid, design.T,
                             design.modes)
    entries, notes = _first_order_entries(fo, known_Fu, known_Fu != 0.0)
    tF, tG = _known_tables(base, max_order, fo.value, known_Fu)
    terminals = {k: [(m.terminal_u, m.terminal_v) for m in measured[k]] for k in measured}
    tF, tG, more = _induction(terminals, design, base, diffusion, max_order, tF, tG, damping)
    return RecoveryReport(base, entries + more, tF, tG, notes, measured)


def _induction(terminals, design, base, diffusion, max_order, tF, tG, damping):
    entries = []
    stacks = [VariationStack() for _ in design.experiments]
    for k in range(2, max_order + 1):
        for i, st in enumerate(stacks):
            init = design.experiments[i].coefficient(k - 1)
            u, v = solve_variation_direct(k - 1, st, tF, tG, init, design.grid, design.T,
                                          design.solver, diffusion)
            st.add(k - 1, u, v, "direct")
        est = recover_order_k(k, terminals[k], stacks, tF, tG, design, diffusion, damping)
        tF, tG = tF.with_entries(est.F), tG.with_entries(est.G)
        entries += _order_entries(est)
    return tF, tG, entries


def recover_from_exact(model: ModelPreset, design: ExperimentDesign, base, max_order: int = 2,
                       known_Fu: float | None = None, damping: float = 0.0) -> RecoveryReport:
    """Reconstruction from closed-form variation data (orders 1 and 2, modal initial data)."""
    if max_order not in (1, 2):
        raise ValidationError("closed-form variation data are available for orders 1 and 2 only")
    base = (float(base[0]), float(base[1]))
    trueF, trueG = model.tables(base, 2)
    if known_Fu is None:
        known_Fu = trueF[(1, 0)]
    grid, T = design.grid, design.T
    zero = ModalField(grid.L)
    f1s, g1s, terms = [], [], {1: [], 2: []}
    for e in design.experiments:
        f1, g1 = as_modal(e.f[0], grid), as_modal(e.g[0], grid)
        f2, g2 = (as_modal(a, grid) for a in e.coefficient(2))
        u1, v1 = first_order_fields(f1, g1, trueF, trueG, model.diffusion)
        terms[1].append((u1.values(grid, [T])[0], v1.values(grid, [T])[0]))
        if max_order == 2:
            cu, cv = second_order_terminal(f1, g1, f2, g2, trueF, trueG, model.diffusion, T)
            terms[2].append((synthesize(cu, grid), synthesize(cv, grid)))
        f1s.append(f1)
        g1s.append(g1)
    fo = recover_first_order([t[1] for t in terms[1]], [e.g[0] for e in design.experiments],
                             model.diffusion[1], grid, T, design.modes)
    entries, notes = _first_order_entries(fo, known_Fu, known_Fu != 0.0)
    tF, tG = _known_tables(base, max_order, fo.value, known_Fu)
    if max_order == 2:
        stacks = []
        for f1, g1 in zip(f1s, g1s):
            u1, v1 = first_order_fields(f1, g1, tF, tG, model.diffusion)
            steps = design.solver.steps
            stacks.append(VariationStack().add(1, u1.sample(grid, T, steps), v1.sample(grid, T, steps), "exact"))
        est = recover_order_k(2, terms[2], stacks, tF, tG, design, model.diffusion, damping)
        tF, tG = tF.with_entries(est.F), tG.with_entries(est.G)
        entries += _order_entries(est)
    notes.append("variation data from closed-form fields")
    return RecoveryReport(base, entries, tF, tG, notes).attach_truth(trueF, trueG)


def reconstruct(model: ModelPreset, design: ExperimentDesign, base=None, max_order: int = 2,
                known_Fu: float | None = None, damping: float = 0.0, truth: bool = True) -> RecoveryReport:
    """Generate measurements from ``model`` and reconstruct its Taylor tables."""
    base = model.base_solutions[0] if base is None else base
    trueF, trueG = model.tables(base, max_order)
    require_diagonal(trueF, trueG)
    if known_Fu is None:
        known_Fu = trueF[(1, 0)] if model.relaxed else 0.0
    records = generate_measurements(model, design, base, max_order)
    report = recover_from_measurements(records, design, base, model.diffusion, max_order, known_Fu, damping)
    return report.attach_truth(trueF, trueG) if truth else report


# -- uniqueness falsifier ----------------------------------------------------

@dataclass
class FalsifierResult:
    distance: float
    noise_floor: float
    per_experiment: list

    @property
    def ratio(self) -> float:
        return self.distance / self.noise_floor

    @property
    def separated(self) -> bool:
        return self.ratio >= 10.0


ROUNDOFF_FACTOR = 64.0


def _family_records(model, design, base, eps):
    out = []
    for i in range(len(design.experiments)):
        f, g = assemble_initial(design.family(i, base), eps)
        u, v = solve_forward(model, design.grid, f, g, design.T, design.solver)
        out.append(measure(u, v, eps))
    return out


def falsify_uniqueness(model1: ModelPreset, model2: ModelPreset, design: ExperimentDesign,
                       eps: float = 0.05, base=None) -> FalsifierResult:
    """Measurement distance between two models on identical inputs, with a noise floor.

    The floor is the larger of the identical-configuration distance (a repeat
    run of ``model1``) and a roundoff floor of 64 machine epsilons times the
    data scale.
    """
    base = model1.base_solutions[0] if base is None else tuple(map(float, base))
    if base not in model2.base_solutions:
        raise ValidationError(f"base {base} is not shared by both models")
    if model1.diffusion != model2.diffusion:
        raise ValidationError("models must share diffusion coefficients")
    r1 = _family_records(model1, design, base, eps)
    r1b = _family_records(model1, design, base, eps)
    r2 = _family_records(model2, design, base, eps)
    per = [a.distance(b) for a, b in zip(r1, r2)]
    same = max(a.distance(b) for a, b in zip(r1, r1b))
    scale = max(max(float(np.max(np.abs(x))) for x in r.arrays()) for r in r1)
    floor = max(same, ROUNDOFF_FACTOR * np.finfo(float).eps * max(scale, 1.0))
    return FalsifierResult(max(per), floor, per)


def perturb_coefficient(model: ModelPreset, target: str, m: int, n: int, delta: float,
                        base=None) -> ModelPreset:
    """Copy of ``model`` whose Taylor coefficient target_mn at ``base`` is shifted by ``delta``.

    Adds delta/(m! n!) (p - u0)^m (q - v0)^n expanded into monomials, which
    leaves every other coefficient at ``base`` unchanged.
    """
    if target not in ("F", "G"):
        raise ValidationError("target must be 'F' or 'G'")
    base = model.base_solutions[0] if base is None else tuple(map(float, base))
    u0, v0 = base
    scale = delta / (math.factorial(m) * math.factorial(n))
    extra = {}
    for i in range(m + 1):
        for j in range(n + 1):
            c = scale * math.comb(m, i) * math.comb(n, j) * (-u0) ** (m - i) * (-v0) ** (n - j)
            if c != 0.0:
                extra[(i, j)] = 2.0 * c  # h = 0 carries a factor 1/2
    term = model.F if target == "F" else model.G
    merged = {(a, b, h): c for a, b, h, c in term.terms}
    for (i, j), c in extra.items():
        merged[(i, j, 0)] = merged.get((i, j, 0), 0.0) + c
    new = RationalTaylorTerm(tuple((a, b, h, c) for (a, b, h), c in merged.items() if c != 0.0))
    F, G = (new, model.G) if target == "F" else (model.F, new)
    bases = tuple(b for b in model.base_solutions
                  if abs(evaluate(F, *b)) <= 1e-12 and abs(evaluate(G, *b)) <= 1e-12)
    return ModelPreset(model.kind, dict(model.params), F, G, bases, model.diffusion, model.relaxed)


# -- structural fits ---------------------------------------------------------

@dataclass
class StructuralFit:
    kind: str
    params: dict
    residual: float


def _ratio_derivative(alpha, m, u=1.0):
    """d^m/du^m of u/(alpha+u) at u."""
    if m == 0:
        return u / (alpha + u)
    return -alpha * (-1) ** m * math.factorial(m) / (alpha + u) ** (m + 1)


def _check_consistency(kind, residual, recovery_residual, scale):
    limit = 10.0 * recovery_residual if recovery_residual is not None else 1e-8
    if residual > max(limit, 1e-12) * max(scale, 1.0):
        raise InconsistentTable(f"{kind} fit residual {residual:.3g} exceeds {limit:.3g} (relative)")


def fit_structural_params(kind: str, tableF: TaylorTable, tableG: TaylorTable,
                          recovery_residual: float | None = None) -> StructuralFit:
    """Structural parameters of a preset family from recovered Taylor tables.

    hydra at (0,0): p = -F11, lam = -F12/2, mu = G11/p (G12 = 2 mu lam checks).
    holling_tanner at (1,0): nonlinear least squares for (alpha, beta, gamma)
    over the mixed coefficients of -beta uv/(alpha+u) and gamma uv/(alpha+u);
    delta follows from G01. bazykin at (0,0): closed-form inversion with the
    G21 = -2 d A check.
    """
    if min(tableF.max_order, tableG.max_order) < 3:
        raise ValidationError("structural fits need tables through order 3")
    if kind == "hydra":
        p, lam = -tableF[(1, 1)], -tableF[(1, 2)] / 2.0
        if not p > 0:
            raise InconsistentTable(f"hydra: F11 = {tableF[(1, 1)]:.3g} gives non-positive predation rate")
        mu = tableG[(1, 1)] / p
        res = abs(tableG[(1, 2)] - 2.0 * mu * lam)
        _check_consistency(kind, res, recovery_residual, abs(tableG[(1, 2)]))
        return StructuralFit(kind, {"p": p, "lam": lam, "mu": mu}, res)
    if kind == "holling_tanner":
        obsF = np.array([tableF[(m, 1)] for m in range(3)])
        obsG = np.array([tableG[(m, 1)] for m in range(1, 3)])

        def resid(x):
            alpha, beta, gamma = x
            rf = [-beta * _ratio_derivative(alpha, m) for m in range(3)]
            rg = [gamma * _ratio_derivative(alpha, m) for m in range(1, 3)]
            return np.concatenate([np.array(rf) - obsF, np.array(rg) - obsG])

        x0 = np.array([1.0, max(-4.0 * obsF[1], 1e-3), max(4.0 * obsG[0], 1e-3)])
        sol = optimize.least_squares(resid, x0, bounds=([1e-6, 0.0, 0.0], [np.inf] * 3),
                                     xtol=1e-15, ftol=1e-15, gtol=1e-15)
        alpha, beta, gamma = (float(x) for x in sol.x)
        delta = gamma * _ratio_derivative(alpha, 0) - tableG[(0, 1)]
        res = float(np.linalg.norm(sol.fun))
        _check_consistency(kind, res, recovery_residual, float(np.linalg.norm(np.concatenate([obsF, obsG]))))
        return StructuralFit(kind, {"alpha": alpha, "beta": beta, "gamma": gamma, "delta": delta}, res)
    if kind == "bazykin":
        a = tableF[(1, 0)]
        if a == 0 or tableF[(2, 0)] == 0 or tableF[(1, 1)] == 0:
            raise InconsistentTable("bazykin: F10, F20 and F11 must be non-zero")
        K = -2.0 * a / tableF[(2, 0)]
        b = -tableF[(1, 1)]
        A = tableF[(2, 1)] / (2.0 * b)
        c, d, h = -tableG[(0, 1)], tableG[(1, 1)], -tableG[(0, 2)] / 2.0
        res = abs(tableG[(2, 1)] + 2.0 * d * A)
        _check_consistency(kind, res, recovery_residual, abs(tableG[(2, 1)]))
        return StructuralFit(kind, {"a": a, "K": K, "b": b, "A": A, "c": c, "d": d, "h": h}, res)
    raise ValidationError(f"no structural family for kind {kind!r}")
