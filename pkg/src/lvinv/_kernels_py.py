"""Pure-Python (NumPy/LAPACK) IMEX time-marching kernels.

Discretisation shared with the compiled kernels:

* nodes x_i = i dx, mirror ghost nodes for the homogeneous Neumann condition;
* ``scheme = 0`` backward Euler IMEX:
  (I - dt d D) w^{n+1} = w^n + dt R^n
* ``scheme = 1`` Crank-Nicolson / Adams-Bashforth-2 IMEX:
  (I - dt d D / 2) w^{n+1} = (I + dt d D / 2) w^n + dt (3 R^n - R^{n-1}) / 2,
  with R^{-1} = R^0 on the first step.

The reaction R is evaluated explicitly from the current state: either a
rational term list ``[m, n, h, coeff]`` or an affine map ``jac @ w + S^n``.
Each kernel returns ``(U, V, status)``; status is -1 on success or the first
step index at which a non-finite value appeared (the march stops there).
"""
import numpy as np
from scipy.linalg import lapack

BACKEND = "python"


def _factor(s, n1):
    dl = np.full(n1 - 1, -s)
    du = np.full(n1 - 1, -s)
    dl[-1] = -2.0 * s
    du[0] = -2.0 * s
    d = np.full(n1, 1.0 + 2.0 * s)
    lu = lapack.dgttrf(dl, d, du)
    if lu[-1] != 0:
        raise np.linalg.LinAlgError("tridiagonal factorisation failed")
    return lu[:-1]


def _solve(lu, rhs):
    dl, d, du, du2, ipiv = lu
    x, info = lapack.dgttrs(dl, d, du, du2, ipiv, rhs)
    return x


def _second_diff(w):
    out = np.empty_like(w)
    out[1:-1] = w[:-2] - 2.0 * w[1:-1] + w[2:]
    out[0] = 2.0 * (w[1] - w[0])
    out[-1] = 2.0 * (w[-2] - w[-1])
    return out


def _react(terms, p, q):
    acc = np.zeros_like(p)
    for m, n, h, c in terms:
        den = 2.0 if h == 0.0 else 1.0 + p
        acc += c * p ** int(m) * q ** int(n) / den
    return acc


def _march(u_init, v_init, reaction, d1, d2, dx, dt, steps, scheme, clip):
    n1 = len(u_init)
    U = np.empty((steps + 1, n1))
    V = np.empty((steps + 1, n1))
    U[0] = u_init
    V[0] = v_init
    theta = 1.0 if scheme == 0 else 0.5
    su, sv = theta * dt * d1 / dx**2, theta * dt * d2 / dx**2
    eu, ev = (1.0 - theta) * dt * d1 / dx**2, (1.0 - theta) * dt * d2 / dx**2
    lu_u, lu_v = _factor(su, n1), _factor(sv, n1)
    Ru_old = Rv_old = None
    with np.errstate(all="ignore"):
        for n in range(steps):
            u, v = U[n], V[n]
            Ru, Rv = reaction(n, u, v)
            if scheme == 1:
                if Ru_old is None:
                    Ru_old, Rv_old = Ru, Rv
                rhs_u = u + eu * _second_diff(u) + dt * (1.5 * Ru - 0.5 * Ru_old)
                rhs_v = v + ev * _second_diff(v) + dt * (1.5 * Rv - 0.5 * Rv_old)
                Ru_old, Rv_old = Ru, Rv
            else:
                rhs_u = u + dt * Ru
                rhs_v = v + dt * Rv
            U[n + 1] = _solve(lu_u, rhs_u)
            V[n + 1] = _solve(lu_v, rhs_v)
            if clip:
                np.maximum(U[n + 1], 0.0, out=U[n + 1])
                np.maximum(V[n + 1], 0.0, out=V[n + 1])
            if not (np.all(np.isfinite(U[n + 1])) and np.all(np.isfinite(V[n + 1]))):
                return U, V, n + 1
    return U, V, -1


def march_nonlinear(u_init, v_init, terms_F, terms_G, d1, d2, dx, dt, steps, scheme, clip=False):
    tF = np.asarray(terms_F, dtype=float).reshape(-1, 4)
    tG = np.asarray(terms_G, dtype=float).reshape(-1, 4)

    def reaction(n, u, v):
        return _react(tF, u, v), _react(tG, u, v)

    return _march(u_init, v_init, reaction, d1, d2, dx, dt, steps, scheme, clip)


def march_linear(u_init, v_init, jac, src_u, src_v, d1, d2, dx, dt, steps, scheme):
    J = np.asarray(jac, dtype=float).reshape(2, 2)

    def reaction(n, u, v):
        ru = J[0, 0] * u + J[0, 1] * v
        rv = J[1, 0] * u + J[1, 1] * v
        if src_u is not None:
            ru = ru + src_u[n]
            rv = rv + src_v[n]
        return ru, rv

    return _march(u_init, v_init, reaction, d1, d2, dx, dt, steps, scheme, False)
