import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lvinv import kernels
from lvinv.errors import NegativeStateWarning, NonFiniteState, ValidationError
from lvinv.forward import (MeasurementRecord, SolverConfig, constant_record, convergence_probe,
                           linear_test_model, measure, solve_forward)
from lvinv.spectral import Grid1D, discrete_eigenvalue, neumann_mode
from lvinv.taylor_model import custom_model, preset

signed_data = pytest.mark.filterwarnings("ignore::lvinv.errors.NegativeStateWarning")

heat = custom_model([], [], [(0.0, 0.0)], (1.0, 1.0))


def test_solver_config_validation():
    with pytest.raises(ValidationError):
        SolverConfig("rk4", 10)
    with pytest.raises(ValidationError):
        SolverConfig(steps=0)
    assert SolverConfig("crank_nicolson_imex").scheme_id == 1


@signed_data
def test_heat_kernel_oracle():
    g = Grid1D(math.pi, 256)
    phi1 = neumann_mode(g, 1).phi
    u, v = solve_forward(heat, g, phi1, np.zeros_like(phi1), 1.0, SolverConfig(steps=1000))
    assert np.max(np.abs(u.terminal - math.exp(-1.0) * phi1)) <= 5e-3
    assert np.all(v.values == 0.0)


@pytest.mark.parametrize("kind", ["hydra", "holling_tanner", "bazykin"])
@pytest.mark.parametrize("scheme", ["backward_euler_imex", "crank_nicolson_imex"])
def test_equilibria_are_fixed_points(kind, scheme):
    m = preset(kind)
    g = Grid1D(math.pi, 64)
    for u0, v0 in m.base_solutions:
        u, v = solve_forward(m, g, u0, v0, 1.0, SolverConfig(scheme, 2000))
        assert np.max(np.abs(u.values - u0)) <= 1e-10
        assert np.max(np.abs(v.values - v0)) <= 1e-10


def test_bazykin_bump_stays_nonnegative():
    g = Grid1D(math.pi, 256)
    x = g.nodes
    f = 0.8 * np.exp(-((x - 1.0) / 0.3) ** 2)
    h = 0.5 * np.exp(-((x - 2.0) / 0.4) ** 2)
    with warnings.catch_warnings():
        warnings.simplefilter("error", NegativeStateWarning)
        u, v = solve_forward(preset("bazykin"), g, f, h, 1.0, SolverConfig(steps=2000))
    assert min(u.values.min(), v.values.min()) >= -1e-10


@pytest.mark.parametrize("scheme", ["backward_euler_imex", "crank_nicolson_imex"])
def test_mass_conservation_without_reaction(scheme):
    g = Grid1D(2.0, 128)
    x = g.nodes
    f = 1.0 + np.exp(-((x - 0.4) / 0.2) ** 2)
    u, _ = solve_forward(heat, g, f, f, 1.0, SolverConfig(scheme, 500))
    mass = g.integrate(u.values)
    assert np.max(np.abs(mass - mass[0])) <= 1e-10 * abs(mass[0])


def test_measure_constant_and_csv_roundtrip(tmp_path):
    g = Grid1D(1.0, 16)
    m = preset("holling_tanner")
    u, v = solve_forward(m, g, 1.0, 0.0, 0.5, SolverConfig(steps=20))
    rec = measure(u, v, 0.125)
    assert np.allclose(rec.boundary_u, 1.0) and np.allclose(rec.boundary_v, 0.0)
    assert np.allclose(rec.terminal_u, 1.0) and np.allclose(rec.terminal_v, 0.0)
    assert rec.distance(constant_record(g, 0.5, 20, (1.0, 0.0))) <= 1e-12
    p = tmp_path / "m.csv"
    rec.to_csv(p)
    back = MeasurementRecord.from_csv(p)
    assert back.epsilon == 0.125
    assert back.distance(rec) == 0.0 and np.array_equal(back.times, rec.times)
    assert b"\r\n" not in p.read_bytes()


@signed_data
def test_measure_separated_solution():
    g = Grid1D(math.pi, 256)
    d = 0.5
    phi1 = neumann_mode(g, 1).phi
    model = custom_model([], [], [(0.0, 0.0)], (d, d))
    u, v = solve_forward(model, g, phi1, phi1, 1.0, SolverConfig("crank_nicolson_imex", 2000))
    rec = measure(u, v)
    exact = math.exp(-d * 1.0) * phi1
    assert np.max(np.abs(rec.terminal_u - exact)) < 1e-4
    assert np.max(np.abs(rec.boundary_u[:, 0] - np.exp(-d * u.times) * phi1[0])) < 1e-4


def test_measure_layout_mismatch():
    g = Grid1D(1.0, 16)
    u, _ = solve_forward(heat, g, 1.0, 1.0, 1.0, SolverConfig(steps=10))
    _, v = solve_forward(heat, g, 1.0, 1.0, 1.0, SolverConfig(steps=20))
    with pytest.raises(ValidationError):
        measure(u, v)


def test_stability_guard_message():
    g = Grid1D(1.0, 16)
    fast = custom_model([(1, 0, 0, -2000.0)], [(0, 1, 0, -1.0)], [(0.0, 0.0)])
    with pytest.raises(NonFiniteState, match="increase steps"):
        solve_forward(fast, g, 1.0, 1.0, 1.0, SolverConfig(steps=10))


def test_blowup_detected():
    g = Grid1D(1.0, 16)
    blow = custom_model([(2, 0, 0, 2.0)], [(0, 1, 0, -1.0)], [(0.0, 0.0)])
    with pytest.raises(NonFiniteState):
        solve_forward(blow, g, 5.0, 0.0, 2.0, SolverConfig(steps=400))


def test_negative_state_warning_and_clip():
    g = Grid1D(1.0, 16)
    drain = custom_model([(0, 1, 0, -2.0)], [(0, 1, 0, 0.0)], [(0.0, 0.0)])
    with pytest.warns(NegativeStateWarning):
        solve_forward(drain, g, 0.1, 1.0, 1.0, SolverConfig(steps=100))
    with warnings.catch_warnings():
        warnings.simplefilter("error", NegativeStateWarning)
        u, _ = solve_forward(drain, g, 0.1, 1.0, 1.0, SolverConfig(steps=100, positivity_clip=True))
    assert u.values.min() >= 0.0


def test_convergence_orders():
    be = convergence_probe(scheme="backward_euler_imex")
    assert be.temporal_order == pytest.approx(1.0, abs=0.15)
    assert be.spatial_order == pytest.approx(2.0, abs=0.2)
    cn = convergence_probe(scheme="crank_nicolson_imex")
    assert cn.temporal_order == pytest.approx(2.0, abs=0.3)


@signed_data
@pytest.mark.parametrize("scheme,order", [("backward_euler_imex", 1), ("crank_nicolson_imex", 2)])
def test_separated_linear_solution_converges_at_scheme_order(scheme, order):
    c = -0.4
    model = linear_test_model(c_u=c, c_v=c, diffusion=(0.3, 0.3))
    errs = []
    for steps in (200, 400, 800):
        g = Grid1D(math.pi, 512)
        phi = neumann_mode(g, 2).phi
        u, _ = solve_forward(model, g, phi, phi, 1.0, SolverConfig(scheme, steps))
        # semi-discrete exact solution isolates the time-stepping error
        errs.append(np.max(np.abs(u.terminal - math.exp(c - 0.3 * discrete_eigenvalue(2, g)) * phi)))
    observed = math.log2(errs[1] / errs[2])
    assert observed > order - 0.2


def test_determinism():
    g = Grid1D(math.pi, 64)
    m = preset("bazykin")
    a = solve_forward(m, g, 0.5, 0.3, 1.0, SolverConfig(steps=200))
    b = solve_forward(m, g, 0.5, 0.3, 1.0, SolverConfig(steps=200))
    assert np.array_equal(a[0].values, b[0].values) and np.array_equal(a[1].values, b[1].values)


# -- backend parity ----------------------------------------------------------

backends = kernels.available_backends()
needs_cython = pytest.mark.skipif("cython" not in backends, reason="compiled extension not built")


@needs_cython
@given(st.integers(0, 2**31 - 1), st.sampled_from([0, 1]), st.booleans())
def test_backend_parity_nonlinear(seed, scheme, clip):
    rng = np.random.default_rng(seed)
    n = 33
    f, g = rng.uniform(0, 1, n), rng.uniform(0, 1, n)
    m = preset("bazykin")
    args = (f, g, m.F.as_array(), m.G.as_array(), 0.1, 0.2, 1.0 / 32, 0.01, 50, scheme, clip)
    U1, V1, s1 = backends["python"].march_nonlinear(*args)
    U2, V2, s2 = backends["cython"].march_nonlinear(*args)
    assert s1 == s2
    assert np.allclose(U1, U2, rtol=1e-12, atol=1e-14) and np.allclose(V1, V2, rtol=1e-12, atol=1e-14)


@needs_cython
@given(st.integers(0, 2**31 - 1), st.sampled_from([0, 1]))
def test_backend_parity_linear(seed, scheme):
    rng = np.random.default_rng(seed)
    n, steps = 17, 30
    J = rng.normal(size=(2, 2))
    su, sv = rng.normal(size=(steps + 1, n)), rng.normal(size=(steps + 1, n))
    args = (rng.normal(size=n), rng.normal(size=n), J, su, sv, 0.3, 0.1, 1.0 / 16, 0.01, steps, scheme)
    U1, V1, _ = backends["python"].march_linear(*args)
    U2, V2, _ = backends["cython"].march_linear(*args)
    assert np.allclose(U1, U2, rtol=1e-12, atol=1e-12) and np.allclose(V1, V2, rtol=1e-12, atol=1e-12)


def test_backend_selection_env(monkeypatch):
    import importlib
    monkeypatch.setenv("LVINV_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == backends["python"].BACKEND
    finally:
        monkeypatch.delenv("LVINV_PURE_PYTHON")
        importlib.reload(kernels)
