"""Closed-form variation data for initial data built from finitely many cosine modes.

With F_v = G_u = 0 at the base the first-order system decouples, so

    u^(1) = sum a_k exp((F_u - d1 mu_k) t) phi_k,   v^(1) likewise with (d2, G_v),

and the second-order sources are finite exponential-cosine sums. Their terminal
mode coefficients follow from the exact Duhamel integral. These are the
"exact variation fields" used to test recovery independently of the time
stepper and of the quadrature in :mod:`lvinv.recovery`.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import ValidationError
from .spectral import Grid1D, ModalField, duhamel_terminal, neumann_mode
from .taylor_model import TaylorTable

COUPLING_TOL = 1e-14


def _check_diagonal(tableF: TaylorTable, tableG: TaylorTable):
    if abs(tableF[(0, 1)]) > COUPLING_TOL or abs(tableG[(1, 0)]) > COUPLING_TOL:
        raise ValidationError("closed-form variation fields need F_v = G_u = 0 at the base")


def as_modal(values, grid: Grid1D) -> ModalField:
    """Exact modal expansion of sampled initial data (raises unless it is a finite cosine sum)."""
    return ModalField.from_samples(np.asarray(values, dtype=float), grid)


def first_order_fields(f1: ModalField, g1: ModalField, tableF: TaylorTable, tableG: TaylorTable,
                       diffusion):
    _check_diagonal(tableF, tableG)
    d1, d2 = diffusion
    return f1.evolve(d1, tableF[(1, 0)]), g1.evolve(d2, tableG[(0, 1)])


def second_order_source(u1: ModalField, v1: ModalField, table: TaylorTable) -> ModalField:
    """sum_{m+n=2} T_mn * 2/(m! n!) * u1^m v1^n."""
    return (u1 * u1).scale(table[(2, 0)]) + (u1 * v1).scale(2.0 * table[(1, 1)]) \
        + (v1 * v1).scale(table[(0, 2)])


def second_order_terminal(f1: ModalField, g1: ModalField, f2: ModalField, g2: ModalField,
                          tableF: TaylorTable, tableG: TaylorTable, diffusion, T: float):
    """Mode coefficients {k: c} of u^(2)(T) and v^(2)(T)."""
    u1, v1 = first_order_fields(f1, g1, tableF, tableG, diffusion)
    d1, d2 = diffusion
    cu = duhamel_terminal(f2.scale(2.0), second_order_source(u1, v1, tableF), d1, tableF[(1, 0)], T)
    cv = duhamel_terminal(g2.scale(2.0), second_order_source(u1, v1, tableG), d2, tableG[(0, 1)], T)
    return cu, cv


def synthesize(coeffs: dict, grid: Grid1D) -> np.ndarray:
    out = np.zeros(grid.N + 1)
    for k, c in coeffs.items():
        out += c * neumann_mode(grid, k).phi
    return out


def time_integral(a: float, T: float) -> float:
    """int_0^T exp(a t) dt."""
    return T if a == 0.0 else math.expm1(a * T) / a
