"""High-order variation: epsilon families, FD extraction, sources and direct solves.

Convention: the order-k field is ``u^(k) = d^k u / d eps^k`` at eps = 0, so a
data family ``f = u0 + sum eps^i f_i`` gives initial data ``k! f_k`` at order k.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (GridMismatch, IllConditionedStencil, MissingLowerOrder, NegativeData,
                     NonFiniteState, ValidationError)
from .forward import MeasurementRecord, SolverConfig, constant_record, measure, solve_forward
from .spectral import Grid1D, SpaceTimeField
from .taylor_model import ModelPreset, TaylorTable

STENCIL_COND_MAX = 1e12
DEFAULT_MAX_ORDER = 4
NEG_TOL = 1e-15


BASE_LADDER = (1e-2, 2e-2, 4e-2)


def richardson_ladder(ladder=BASE_LADDER, levels: int = 1) -> tuple:
    """Union of ``ladder`` and its halvings ``ladder / 2^j`` for j = 1..levels.

    Interpolating through the union is the same as applying the basic
    one-sided stencil on ``ladder`` and eliminating ``levels`` leading error
    terms by Richardson extrapolation against the halved stencils.
    """
    if levels < 0:
        raise ValidationError("levels must be >= 0")
    pts = {float(e) / 2.0**j for e in ladder for j in range(levels + 1)}
    return tuple(sorted(pts))


DEFAULT_EPSILONS = richardson_ladder()


@dataclass(frozen=True)
class EpsilonFamily:
    """Initial data ``u0 + sum eps^i f_i`` and ``v0 + sum eps^i g_i`` sampled at ``epsilons``."""

    base: tuple
    f_list: tuple
    g_list: tuple
    epsilons: tuple = DEFAULT_EPSILONS

    def __post_init__(self):
        f_list = tuple(np.asarray(f, dtype=float) for f in self.f_list)
        g_list = tuple(np.asarray(g, dtype=float) for g in self.g_list)
        if len(f_list) != len(g_list) or not f_list:
            raise ValidationError("f_list and g_list must be non-empty and of equal length")
        shapes = {a.shape for a in f_list + g_list}
        if len(shapes) != 1:
            raise GridMismatch(f"inconsistent data shapes {sorted(shapes)}")
        eps = tuple(float(e) for e in self.epsilons)
        if any(not e > 0 for e in eps) or len(set(eps)) != len(eps):
            raise ValidationError("epsilons must be distinct and strictly positive")
        object.__setattr__(self, "f_list", f_list)
        object.__setattr__(self, "g_list", g_list)
        object.__setattr__(self, "epsilons", eps)
        object.__setattr__(self, "base", (float(self.base[0]), float(self.base[1])))
        u0, v0 = self.base
        if u0 == 0.0 and np.min(f_list[0]) < 0:
            raise NegativeData("u0 = 0 requires f_1 >= 0 pointwise")
        if v0 == 0.0 and np.min(g_list[0]) < 0:
            raise NegativeData("v0 = 0 requires g_1 >= 0 pointwise")
        for e in eps:
            assemble_initial(self, e)

    @property
    def order(self) -> int:
        return len(self.f_list)


def _series(c0, terms, eps):
    out = np.full_like(terms[0], c0)
    for i, t in enumerate(terms, start=1):
        out = out + eps**i * t
    return out


def assemble_initial(family: EpsilonFamily, eps: float):
    """(f, g) = (u0 + sum eps^i f_i, v0 + sum eps^i g_i); raises NegativeData if either dips below 0."""
    if eps < 0:
        raise ValidationError("eps must be >= 0")
    u0, v0 = family.base
    f = _series(u0, family.f_list, eps)
    g = _series(v0, family.g_list, eps)
    for name, arr in (("f", f), ("g", g)):
        lo = float(np.min(arr))
        if lo < -NEG_TOL:
            i = int(np.argmin(arr))
            raise NegativeData(f"assembled {name} = {lo:.3e} < 0 at node {i} for eps = {eps:g}")
    return f, g


# -- finite-difference extraction -------------------------------------------

def stencil_weights(epsilons, order: int) -> np.ndarray:
    """Weights w with  sum_i w_i (y(eps_i) - y(0)) ~ y^(order)(0).

    Interpolates y - y(0) by a polynomial without constant term through all
    samples (equivalently, one-sided stencils plus Richardson elimination of
    the leading error terms) and differentiates it.
    """
    eps = np.asarray(epsilons, dtype=float)
    if order < 1:
        raise ValidationError("order must be >= 1")
    if len(eps) < order:
        raise ValidationError(f"order {order} needs at least {order} non-zero eps samples, got {len(eps)}")
    if np.any(eps <= 0) or len(np.unique(eps)) != len(eps):
        raise ValidationError("eps samples must be distinct and positive")
    scale = eps.max()
    z = eps / scale
    M = len(z)
    V = z[:, None] ** np.arange(1, M + 1)[None, :]
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > STENCIL_COND_MAX:
        raise IllConditionedStencil(f"eps Vandermonde condition number {cond:.3g} exceeds {STENCIL_COND_MAX:g}")
    Vinv = np.linalg.inv(V)
    return math.factorial(order) / scale**order * Vinv[order - 1]


def _to_arrays(x):
    if isinstance(x, MeasurementRecord):
        return list(x.arrays())
    if isinstance(x, SpaceTimeField):
        return [x.values]
    if isinstance(x, (tuple, list)):
        out = []
        for item in x:
            out.extend(_to_arrays(item))
        return out
    return [np.asarray(x, dtype=float)]


def _from_arrays(template, arrays, order):
    if isinstance(template, MeasurementRecord):
        return template.with_arrays(arrays[:4], epsilon=0.0, order=order), arrays[4:]
    if isinstance(template, SpaceTimeField):
        return SpaceTimeField(template.grid, template.T, template.steps, arrays[0]), arrays[1:]
    if isinstance(template, (tuple, list)):
        out = []
        for item in template:
            val, arrays = _from_arrays(item, arrays, order)
            out.append(val)
        return tuple(out), arrays
    return arrays[0], arrays[1:]


def extract_variation_fd(epsilons, samples, base, order: int):
    """k-th eps-derivative at eps = 0 from samples at ``epsilons`` and the exact base.

    ``samples`` may hold arrays, :class:`SpaceTimeField` objects, tuples of
    these, or :class:`MeasurementRecord` objects; the result has the same
    structure. ``base`` is the eps = 0 value in the same structure, or a
    scalar / pair of scalars for constant states.
    """
    if len(samples) != len(epsilons):
        raise ValidationError("one sample per eps value is required")
    w = stencil_weights(epsilons, order)
    per_sample = [_to_arrays(s) for s in samples]
    n = len(per_sample[0])
    if np.ndim(base) == 0 and not isinstance(base, (MeasurementRecord, SpaceTimeField, tuple, list)):
        base_arrays = [float(base)] * n
    elif isinstance(base, (tuple, list)) and all(np.ndim(b) == 0 for b in base) and len(base) * 2 == n:
        # (u0, v0) against a MeasurementRecord: boundary_u, boundary_v, terminal_u, terminal_v
        base_arrays = [float(base[0]), float(base[1])] * 2
    elif isinstance(base, (tuple, list)) and all(np.ndim(b) == 0 for b in base) and len(base) == n:
        base_arrays = [float(b) for b in base]
    else:
        base_arrays = _to_arrays(base)
    out = []
    for j in range(n):
        acc = np.zeros_like(per_sample[0][j], dtype=float)
        for wi, arrs in zip(w, per_sample):
            acc = acc + wi * (arrs[j] - base_arrays[j])
        out.append(acc)
    result, _ = _from_arrays(samples[0], out, order)
    return result


# -- stacks and sources ------------------------------------------------------

@dataclass
class VariationStack:
    """Variation fields u^(k), v^(k) for k = 1..max_order with provenance tags."""

    fields: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def add(self, k: int, u: SpaceTimeField, v: SpaceTimeField, provenance: str = "direct"):
        if k != self.max_order + 1:
            raise ValidationError(f"orders must be added contiguously; expected {self.max_order + 1}, got {k}")
        if not u.same_layout(v) or (self.fields and not u.same_layout(self.fields[1][0])):
            raise GridMismatch("variation fields must share grid and time levels")
        if provenance not in ("fd", "direct", "exact"):
            raise ValidationError(f"unknown provenance {provenance!r}")
        self.fields[k] = (u, v)
        self.provenance[k] = provenance
        return self

    @property
    def max_order(self) -> int:
        return max(self.fields, default=0)

    def u(self, k) -> SpaceTimeField:
        return self.fields[k][0]

    def v(self, k) -> SpaceTimeField:
        return self.fields[k][1]

    def truncated(self, k) -> "VariationStack":
        return VariationStack({i: self.fields[i] for i in range(1, k + 1)},
                              {i: self.provenance[i] for i in range(1, k + 1)})


def _powers(parts, k):
    """parts[i] = a_i (i = 1..k-1). Returns P[m][j] = eps^j coefficient of (sum a_i eps^i)^m."""
    P = [{0: 1.0}]
    for m in range(1, k + 1):
        prev, cur = P[-1], {}
        for j, val in prev.items():
            for i, a in parts.items():
                if j + i > k:
                    continue
                cur[j + i] = cur.get(j + i, 0.0) + val * a
        P.append(cur)
    return P


def series_coefficient(k: int, table: TaylorTable, u_parts: dict, v_parts: dict,
                       include_orders=None):
    """k! times the eps^k coefficient of sum_{m+n>=2} T_mn/(m! n!) (sum u_i eps^i)^m (sum v_i eps^i)^n.

    ``u_parts[i]`` holds u^(i)/i!. Only table entries whose total order is in
    ``include_orders`` (default: 2..k) contribute.
    """
    orders = range(2, k + 1) if include_orders is None else include_orders
    Pu, Pv = _powers(u_parts, k), _powers(v_parts, k)
    acc = 0.0
    for tot in orders:
        if tot > table.max_order:
            raise ValidationError(f"table of order {table.max_order} cannot supply order-{tot} terms")
        for m in range(tot + 1):
            n = tot - m
            c = table[(m, n)]
            if c == 0.0:
                continue
            inner = 0.0
            for j, pu in Pu[m].items():
                pv = Pv[n].get(k - j)
                if pv is not None:
                    inner = inner + pu * pv
            if np.ndim(inner) or inner != 0.0:
                acc = acc + c / (math.factorial(m) * math.factorial(n)) * inner
    return math.factorial(k) * acc


def _parts(stack, k):
    missing = [i for i in range(1, k) if i not in stack.fields]
    if missing:
        raise MissingLowerOrder(f"order-{k} source needs variation orders {missing}")
    u_parts = {i: stack.u(i).values / math.factorial(i) for i in range(1, k)}
    v_parts = {i: stack.v(i).values / math.factorial(i) for i in range(1, k)}
    return u_parts, v_parts


def variation_source(k: int, stack: VariationStack, tableF: TaylorTable, tableG: TaylorTable,
                     include_orders=None):
    """Sources (S_F, S_G) of the order-k variation system; linear terms stay on the left."""
    if k < 1:
        raise ValidationError("order must be >= 1")
    ref = stack.fields.get(1)
    if k == 1:
        if ref is None:
            raise MissingLowerOrder("order-1 source needs a layout reference; stack is empty")
        z = np.zeros_like(ref[0].values)
        return (SpaceTimeField(ref[0].grid, ref[0].T, ref[0].steps, z),
                SpaceTimeField(ref[0].grid, ref[0].T, ref[0].steps, z.copy()))
    u_parts, v_parts = _parts(stack, k)
    SF = series_coefficient(k, tableF, u_parts, v_parts, include_orders)
    SG = series_coefficient(k, tableG, u_parts, v_parts, include_orders)
    shape = ref[0].values.shape
    SF = np.broadcast_to(SF, shape).astype(float)
    SG = np.broadcast_to(SG, shape).astype(float)
    u = ref[0]
    return SpaceTimeField(u.grid, u.T, u.steps, SF), SpaceTimeField(u.grid, u.T, u.steps, SG)


def jacobian(tableF: TaylorTable, tableG: TaylorTable) -> np.ndarray:
    return np.array([[tableF[(1, 0)], tableF[(0, 1)]], [tableG[(1, 0)], tableG[(0, 1)]]])


def _solve_linear(u_init, v_init, J, SF, SG, grid, T, config, diffusion):
    d1, d2 = diffusion
    dt = T / config.steps
    lip = float(np.max(np.abs(J).sum(axis=1)))
    if lip * dt > 2.0:
        raise NonFiniteState(f"linear reaction bound {lip:.3g} exceeds 2/dt = {2.0 / dt:.3g}")
    U, V, status = kernels.march_linear(
        np.asarray(u_init, dtype=float), np.asarray(v_init, dtype=float), J,
        None if SF is None else np.ascontiguousarray(SF), None if SG is None else np.ascontiguousarray(SG),
        d1, d2, grid.dx, dt, config.steps, config.scheme_id)
    if status >= 0:
        raise NonFiniteState(f"non-finite variation field at step {status}")
    return SpaceTimeField(grid, T, config.steps, U), SpaceTimeField(grid, T, config.steps, V)


def solve_variation_direct(k: int, stack: VariationStack, tableF: TaylorTable, tableG: TaylorTable,
                           initial, grid: Grid1D, T: float, config: SolverConfig, diffusion):
    """Solve the order-k variation system for (u^(k), v^(k)).

    ``initial`` is (f_k, g_k); the initial data used is (k! f_k, k! g_k). The
    linear part is the first-order Jacobian of (F, G) at the base; the source
    comes from :func:`variation_source` (zero at k = 1).
    """
    f_k, g_k = (np.broadcast_to(np.asarray(a, dtype=float), (grid.N + 1,)) for a in initial)
    fact = math.factorial(k)
    J = jacobian(tableF, tableG)
    if k == 1:
        SF = SG = None
    else:
        S_F, S_G = variation_source(k, stack, tableF, tableG)
        if S_F.grid != grid or S_F.steps != config.steps:
            raise GridMismatch("stack layout does not match the requested grid and steps")
        SF, SG = S_F.values, S_G.values
    return _solve_linear(fact * f_k, fact * g_k, J, SF, SG, grid, T, config, diffusion)


def solve_linearized_first_order(f_l, g_l, tableF: TaylorTable, tableG: TaylorTable,
                                 grid: Grid1D, T: float, config: SolverConfig, diffusion):
    """First-order linearization in the direction eps_l (multi-parameter entry point).

    Same linear system as order-1 variation; both entry points share the solver.
    """
    f_l = np.broadcast_to(np.asarray(f_l, dtype=float), (grid.N + 1,))
    g_l = np.broadcast_to(np.asarray(g_l, dtype=float), (grid.N + 1,))
    return _solve_linear(f_l, g_l, jacobian(tableF, tableG), None, None, grid, T, config, diffusion)


# -- stacks from a model -----------------------------------------------------

def forward_ladder(model: ModelPreset, grid: Grid1D, family: EpsilonFamily, T: float,
                   config: SolverConfig, workers: int | None = None):
    """Forward solutions at every eps of the family (solves run concurrently)."""
    inits = [assemble_initial(family, e) for e in family.epsilons]

    def run(fg):
        return solve_forward(model, grid, fg[0], fg[1], T, config)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, inits))


def check_order_cap(max_order, cap=DEFAULT_MAX_ORDER):
    if max_order > cap:
        warnings.warn(f"variation order {max_order} exceeds the default cap {cap}; "
                      "stencil noise grows like eps^-k times the solver error", RuntimeWarning, stacklevel=3)


def stack_fd(model: ModelPreset, grid: Grid1D, family: EpsilonFamily, T: float,
             config: SolverConfig, max_order: int, solutions=None) -> VariationStack:
    """FD-extracted full variation fields up to ``max_order``."""
    check_order_cap(max_order)
    sols = solutions if solutions is not None else forward_ladder(model, grid, family, T, config)
    stack = VariationStack()
    for k in range(1, max_order + 1):
        u, v = extract_variation_fd(family.epsilons, sols, family.base, k)
        stack.add(k, u, v, "fd")
    return stack


def stack_direct(tableF: TaylorTable, tableG: TaylorTable, grid: Grid1D, family: EpsilonFamily,
                 T: float, config: SolverConfig, diffusion, max_order: int) -> VariationStack:
    """Directly solved variation fields up to ``max_order`` (orders > len(f_list) get zero data)."""
    check_order_cap(max_order)
    stack = VariationStack()
    zero = np.zeros(grid.N + 1)
    for k in range(1, max_order + 1):
        init = (family.f_list[k - 1], family.g_list[k - 1]) if k <= family.order else (zero, zero)
        u, v = solve_variation_direct(k, stack, tableF, tableG, init, grid, T, config, diffusion)
        stack.add(k, u, v, "direct")
    return stack


def measurement_ladder(solutions, epsilons):
    return [measure(u, v, e) for (u, v), e in zip(solutions, epsilons)]


def measured_variation(records, epsilons, base, order: int) -> MeasurementRecord:
    """FD-extracted order-k boundary/terminal data from measurement records."""
    r0 = records[0]
    ref = constant_record(r0.grid, r0.T, len(r0.times) - 1, base)
    return extract_variation_fd(epsilons, records, ref, order)


def relative_sup_error(a, b) -> float:
    """max|a - b| / max|b| (absolute when b vanishes)."""
    a = a.values if isinstance(a, SpaceTimeField) else np.asarray(a)
    b = b.values if isinstance(b, SpaceTimeField) else np.asarray(b)
    scale = float(np.max(np.abs(b)))
    err = float(np.max(np.abs(a - b)))
    return err / scale if scale > 0 else err


def agreement(fd: VariationStack, direct: VariationStack) -> dict:
    """Per-order relative sup-norm discrepancy {k: (err_u, err_v)}."""
    out = {}
    for k in sorted(set(fd.fields) & set(direct.fields)):
        out[k] = (relative_sup_error(fd.u(k), direct.u(k)), relative_sup_error(fd.v(k), direct.v(k)))
    return out
