"""Interaction terms in rational-Taylor form, their Taylor tables, and presets.

An interaction term is a finite sum

    F(p, q) = sum_k coeff_k * p**m_k * q**n_k / (1 + p**h_k),   h_k in {0, 1}

Note that ``h = 0`` gives the constant denominator ``1 + p**0 = 2``; the
:meth:`RationalTaylorTerm.from_parts` helper takes plain polynomial
coefficients and does the doubling for you.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import DenominatorZero, InvalidParam, ValidationError

DENOM_EPS = 1e-14
ZERO_TOL = 1e-12


@dataclass(frozen=True)
class RationalTaylorTerm:
    terms: tuple = ()

    def __post_init__(self):
        clean = []
        seen = set()
        for t in self.terms:
            if len(t) != 4:
                raise ValidationError(f"term {t!r} must be (m, n, h, coeff)")
            m, n, h, c = t
            if int(m) != m or int(n) != n or m < 0 or n < 0:
                raise ValidationError(f"exponents must be non-negative integers, got {t!r}")
            if h not in (0, 1):
                raise ValidationError(f"denominator exponent h must be 0 or 1, got {h!r}")
            key = (int(m), int(n), int(h))
            if key in seen:
                raise ValidationError(f"duplicate (m, n, h) triple {key}")
            seen.add(key)
            clean.append((*key, float(c)))
        object.__setattr__(self, "terms", tuple(sorted(clean)))

    @classmethod
    def from_parts(cls, poly: Mapping | None = None, rational: Mapping | None = None):
        """Build from ``{(m, n): c}`` maps for ``c p^m q^n`` and ``c p^m q^n / (1 + p)``."""
        terms = [(m, n, 0, 2.0 * c) for (m, n), c in (poly or {}).items() if c != 0.0]
        terms += [(m, n, 1, c) for (m, n), c in (rational or {}).items() if c != 0.0]
        return cls(tuple(terms))

    def as_array(self) -> np.ndarray:
        """(n_terms, 4) float array ``[m, n, h, coeff]`` consumed by the kernels."""
        if not self.terms:
            return np.zeros((0, 4))
        return np.array(self.terms, dtype=float)

    def __call__(self, u, v):
        return evaluate(self, u, v)


@dataclass(frozen=True)
class TaylorTable:
    """Partial derivatives d^m_u d^n_v of a term at ``base``, 1 <= m+n <= max_order."""

    base: tuple
    max_order: int
    coeffs: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.max_order < 1:
            raise ValidationError("max_order must be >= 1")
        full = {}
        for k in range(1, self.max_order + 1):
            for m in range(k + 1):
                full[(m, k - m)] = float(self.coeffs.get((m, k - m), 0.0))
        extra = set(self.coeffs) - set(full)
        if extra:
            raise ValidationError(f"entries {sorted(extra)} exceed max_order {self.max_order}")
        object.__setattr__(self, "base", (float(self.base[0]), float(self.base[1])))
        object.__setattr__(self, "coeffs", full)

    @classmethod
    def zeros(cls, base, max_order):
        return cls(base, max_order, {})

    def __getitem__(self, mn):
        return self.coeffs[tuple(mn)]

    def order(self, k) -> dict:
        return {(m, k - m): self.coeffs[(m, k - m)] for m in range(k + 1)}

    def with_entries(self, entries: Mapping, max_order: int | None = None) -> "TaylorTable":
        mo = max(self.max_order, max_order or 0, *(m + n for m, n in entries)) if entries else self.max_order
        merged = dict(self.coeffs)
        merged.update({tuple(k): float(v) for k, v in entries.items()})
        return TaylorTable(self.base, mo, merged)

    def truncated(self, max_order) -> "TaylorTable":
        keep = {k: v for k, v in self.coeffs.items() if sum(k) <= max_order}
        return TaylorTable(self.base, max_order, keep)

    def expand(self, du, dv):
        """Truncated Taylor polynomial about ``base`` (constant term excluded)."""
        total = 0.0
        for (m, n), c in self.coeffs.items():
            total = total + c * du**m * dv**n / (math.factorial(m) * math.factorial(n))
        return total


@dataclass(frozen=True)
class AdmissibilityReport:
    cls: str
    condition_b_ok: bool
    condition_c_ok: bool
    condition_d_ok: bool
    violations: tuple = ()
    notes: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def _denominator(u, h):
    d = 1.0 + np.power(u, h)
    if np.any(np.abs(d) < DENOM_EPS):
        raise DenominatorZero(f"1 + u^{h} vanishes at u = {u!r}")
    return d


def evaluate(term: RationalTaylorTerm, u, v):
    """Value of ``term`` at (u, v); works elementwise on arrays."""
    scalar = np.ndim(u) == 0 and np.ndim(v) == 0
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    out = np.zeros(np.broadcast(u, v).shape)
    for m, n, h, c in term.terms:
        out = out + c * u**m * v**n / _denominator(u, h)
    return float(out) if scalar else out


def _falling(n, k):
    """n (n-1) ... (n-k+1)."""
    out = 1
    for i in range(k):
        out *= n - i
    return out


def _monomial_derivative(n, k, x0):
    if k > n:
        return 0.0
    return _falling(n, k) * x0 ** (n - k)


def _p_factor_derivative(m, h, j, p0):
    """d^j/dp^j of p^m / (1 + p^h) at p0 (Leibniz rule)."""
    if h == 0:
        return 0.5 * _monomial_derivative(m, j, p0)
    one_p = 1.0 + p0
    if abs(one_p) < DENOM_EPS:
        raise DenominatorZero(f"1 + p vanishes at p = {p0!r}")
    total = 0.0
    for i in range(j + 1):
        dr = (-1) ** (j - i) * math.factorial(j - i) / one_p ** (j - i + 1)
        total += math.comb(j, i) * _monomial_derivative(m, i, p0) * dr
    return total


def taylor_at(term: RationalTaylorTerm, base, max_order: int) -> TaylorTable:
    """Exact partial derivatives of ``term`` at ``base`` up to total order ``max_order``."""
    if max_order < 1:
        raise ValidationError("max_order must be >= 1")
    u0, v0 = float(base[0]), float(base[1])
    coeffs = {}
    for k in range(1, max_order + 1):
        for j in range(k + 1):
            l = k - j
            s = 0.0
            for m, n, h, c in term.terms:
                dq = _monomial_derivative(n, l, v0)
                if dq == 0.0:
                    continue
                s += c * _p_factor_derivative(m, h, j, u0) * dq
            coeffs[(j, l)] = s
    return TaylorTable((u0, v0), max_order, coeffs)


def check_admissible(term: RationalTaylorTerm, cls: str, base, relaxed: bool = False,
                     trace_order: int = 4) -> AdmissibilityReport:
    """Check the admissibility conditions of class ``"A"`` (for F) or ``"B"`` (for G).

    Condition (c) is enforced on the first-order coefficients at ``base``:
    F_u = F_v = 0 for class A, G_u = 0 for class B. With ``relaxed=True`` a
    non-zero F_u is accepted as declared-known data and only noted. Higher
    coefficients on the traces ``u = u0`` / ``v = v0`` that would violate a
    for-all reading of (c) are listed in ``notes``.
    """
    cls = cls.upper()
    if cls not in ("A", "B"):
        raise ValidationError(f"class must be 'A' or 'B', got {cls!r}")
    violations, notes = [], []
    value = evaluate(term, base[0], base[1])
    b_ok = abs(value) <= ZERO_TOL
    if not b_ok:
        violations.append(f"(b) value at base {tuple(base)} is {value:.6g}, expected 0")

    table = taylor_at(term, base, trace_order)
    name = "F" if cls == "A" else "G"

    def clean(x):
        return 0.0 if abs(x) < ZERO_TOL else x

    first = [(1, 0), (0, 1)] if cls == "A" else [(1, 0)]
    for mn in first:
        c = clean(table[mn])
        if c == 0.0:
            continue
        msg = f"(c) first-order coefficient {name}_{mn[0]}{mn[1]} = {c:.6g} is non-zero at base"
        if relaxed and cls == "A" and mn == (1, 0):
            notes.append(msg + " (declared known in relaxed mode)")
        else:
            violations.append(msg)
    c_ok = not any(s.startswith("(c)") for s in violations)

    trace = set()
    for (m, n) in table.coeffs:
        if m + n < 2:
            continue
        if n == 1 and cls == "A":
            trace.add((m, n))
        if m == 1:
            trace.add((m, n))
    for mn in sorted(trace):
        c = clean(table[mn])
        if c != 0.0:
            notes.append(f"trace coefficient {name}_{mn[0]}{mn[1]} = {c:.6g} (allowed pointwise)")
    return AdmissibilityReport(cls, b_ok, c_ok, True, tuple(violations), tuple(notes))


# -- presets ---------------------------------------------------------------

@dataclass(frozen=True)
class ModelPreset:
    kind: str
    params: Mapping
    F: RationalTaylorTerm
    G: RationalTaylorTerm
    base_solutions: tuple
    diffusion: tuple = (0.1, 0.1)
    relaxed: bool = False

    def __post_init__(self):
        d1, d2 = self.diffusion
        if not (d1 > 0 and d2 > 0):
            raise InvalidParam(f"diffusion coefficients must be positive, got {self.diffusion}")
        object.__setattr__(self, "diffusion", (float(d1), float(d2)))
        bases = tuple((float(a), float(b)) for a, b in self.base_solutions)
        object.__setattr__(self, "base_solutions", bases)
        for u0, v0 in bases:
            if u0 < 0 or v0 < 0:
                raise InvalidParam(f"base solution {(u0, v0)} is negative")
            fu, gv = evaluate(self.F, u0, v0), evaluate(self.G, u0, v0)
            if abs(fu) > ZERO_TOL or abs(gv) > ZERO_TOL:
                raise InvalidParam(f"{(u0, v0)} is not an equilibrium: F={fu:.3g}, G={gv:.3g}")

    def tables(self, base=None, max_order=3):
        base = self.base_solutions[0] if base is None else base
        return taylor_at(self.F, base, max_order), taylor_at(self.G, base, max_order)


PRESET_DEFAULTS = {
    "hydra": {"a": 1.0, "b": 1.0, "e": 1.0, "p": 1.0, "lam": 0.5, "mu": 2.0, "m": 0.3},
    "holling_tanner": {"alpha": 1.0, "beta": 2.0, "gamma": 1.0, "delta": 0.3},
    "bazykin": {"a": 1.0, "K": 2.0, "b": 0.5, "A": 1.0, "c": 0.5, "d": 0.8, "h": 0.2},
}

_ALIASES = {"lambda": "lam", "λ": "lam", "μ": "mu", "α": "alpha", "β": "beta",
            "γ": "gamma", "δ": "delta"}


def _merge_params(kind, params):
    out = dict(PRESET_DEFAULTS[kind])
    for k, v in (params or {}).items():
        k = _ALIASES.get(k, k)
        if k not in out:
            raise InvalidParam(f"unknown parameter {k!r} for preset {kind!r}")
        out[k] = float(v)
    return out


def _require_positive(params, names, kind):
    for name in names:
        if not params[name] > 0:
            raise InvalidParam(f"{kind}: parameter {name} must be > 0, got {params[name]}")


def preset(kind: str, params: Mapping | None = None, diffusion=(0.1, 0.1)) -> ModelPreset:
    """Full right-hand sides (growth + interaction) of the three application models."""
    if kind not in PRESET_DEFAULTS:
        raise InvalidParam(f"unknown preset {kind!r}; choose from {sorted(PRESET_DEFAULTS)}")
    P = _merge_params(kind, params)
    if kind == "hydra":
        _require_positive(P, ["a", "b", "e", "p", "mu", "m"], kind)
        if P["lam"] < 0:
            raise InvalidParam("hydra: cooperation strength lam must be >= 0")
        a, b, e, p, lam, mu, m = (P[k] for k in ("a", "b", "e", "p", "lam", "mu", "m"))
        F = RationalTaylorTerm.from_parts({(1, 0): a - b, (2, 0): -e, (1, 1): -p, (1, 2): -lam})
        G = RationalTaylorTerm.from_parts({(0, 1): -m, (1, 1): mu * p, (1, 2): mu * lam})
        bases = [(0.0, 0.0)]
        if a > b:
            bases.append(((a - b) / e, 0.0))
        return ModelPreset(kind, P, F, G, tuple(bases), diffusion, relaxed=(a != b))
    if kind == "holling_tanner":
        _require_positive(P, ["alpha", "beta", "gamma", "delta"], kind)
        if P["alpha"] != 1.0:
            raise InvalidParam("holling_tanner: only alpha = 1 is representable with (1 + p) denominators")
        beta, gamma, delta = P["beta"], P["gamma"], P["delta"]
        F = RationalTaylorTerm.from_parts({(1, 0): 1.0, (2, 0): -1.0}, {(1, 1): -beta})
        G = RationalTaylorTerm.from_parts({(0, 1): -delta, (0, 2): -1.0}, {(1, 1): gamma})
        return ModelPreset(kind, P, F, G, ((1.0, 0.0), (0.0, 0.0)), diffusion, relaxed=True)
    # bazykin
    _require_positive(P, ["a", "K", "b", "A", "c", "d", "h"], kind)
    if P["A"] != 1.0:
        raise InvalidParam("bazykin: only A = 1 is representable with (1 + p) denominators")
    a, K, b, c, d, h = (P[k] for k in ("a", "K", "b", "c", "d", "h"))
    F = RationalTaylorTerm.from_parts({(1, 0): a, (2, 0): -a / K}, {(1, 1): -b})
    G = RationalTaylorTerm.from_parts({(0, 1): -c, (0, 2): -h}, {(1, 1): d})
    return ModelPreset(kind, P, F, G, ((0.0, 0.0), (K, 0.0)), diffusion, relaxed=True)


def custom_model(terms_F: Iterable, terms_G: Iterable, base_solutions, diffusion=(0.1, 0.1),
                 relaxed=False, params=None) -> ModelPreset:
    F = RationalTaylorTerm(tuple(tuple(t) for t in terms_F))
    G = RationalTaylorTerm(tuple(tuple(t) for t in terms_G))
    return ModelPreset("custom", dict(params or {}), F, G, tuple(base_solutions), diffusion, relaxed)


def load_model(section: Mapping) -> ModelPreset:
    """Build a model from a ``[model]`` config section.

    Keys: ``kind`` (preset name or ``"custom"``), ``params``, ``diffusion``,
    ``terms_F`` / ``terms_G`` as ``[[m, n, h, coeff], ...]``, ``base`` (list of
    ``[u0, v0]``) and ``relaxed``. Explicit term lists override the preset's.
    """
    kind = section.get("kind", "custom")
    diffusion = tuple(section.get("diffusion", (0.1, 0.1)))
    if kind == "custom" or "terms_F" in section or "terms_G" in section:
        if "terms_F" not in section or "terms_G" not in section:
            raise ValidationError("explicit models need both terms_F and terms_G")
        bases = section.get("base", [[0.0, 0.0]])
        if bases and not isinstance(bases[0], (list, tuple)):
            bases = [bases]
        return custom_model(section["terms_F"], section["terms_G"], bases, diffusion,
                            bool(section.get("relaxed", False)), section.get("params"))
    model = preset(kind, section.get("params"), diffusion)
    if "relaxed" in section:
        model = ModelPreset(model.kind, model.params, model.F, model.G, model.base_solutions,
                            model.diffusion, bool(section["relaxed"]))
    return model
