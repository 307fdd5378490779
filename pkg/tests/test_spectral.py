import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lvinv.errors import GridMismatch, TooManyModes, ValidationError
from lvinv.spectral import (Grid1D, ModalField, SpaceTimeField, adjoint_test_function, cgo_plane_wave,
                            discrete_eigenvalue, duhamel_terminal, eigenvalue, laplacian, neumann_eigenpairs,
                            neumann_mode, project, projection_matrix, separated_solution)


def test_grid_invariants():
    g = Grid1D(2.5, 40)
    assert np.all(np.diff(g.nodes) > 0)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 2.5
    assert g.weights.sum() == pytest.approx(2.5, abs=1e-12)
    with pytest.raises(ValidationError):
        Grid1D(1.0, 4)
    with pytest.raises(ValidationError):
        Grid1D(-1.0, 16)


def test_eigenvalues_on_pi():
    modes = neumann_eigenpairs(Grid1D(math.pi, 64), 2)
    assert [m.mu for m in modes] == pytest.approx([0.0, 1.0, 4.0])


def test_constant_mode_value():
    g = Grid1D(3.0, 32)
    assert np.allclose(neumann_mode(g, 0).phi, 1.0 / math.sqrt(3.0))


def test_gram_matrix_identity():
    g = Grid1D(2.0, 256)
    P = projection_matrix(g, neumann_eigenpairs(g, 5))
    phis = np.stack([m.phi for m in neumann_eigenpairs(g, 5)])
    assert np.allclose(phis @ P, np.eye(6), atol=1e-10)


def test_too_many_modes():
    with pytest.raises(TooManyModes):
        neumann_eigenpairs(Grid1D(1.0, 16), 9)


def test_project_examples():
    g = Grid1D(1.0, 256)
    m1, m2 = neumann_mode(g, 1), neumann_mode(g, 2)
    assert project(m2.phi, m2) == pytest.approx(1.0, abs=1e-10)
    assert project(m1.phi, m2) == pytest.approx(0.0, abs=1e-10)
    assert project(3.0 * np.cos(2 * math.pi * g.nodes), m2) == pytest.approx(3.0 / math.sqrt(2.0), abs=1e-6)
    with pytest.raises(GridMismatch):
        project(np.ones(10), m1)


@given(st.floats(0.5, 10.0), st.sampled_from([16, 64, 256]), st.integers(0, 8))
def test_eigenvalue_accuracy(L, N, k):
    g = Grid1D(L, N)
    m = neumann_mode(g, k)
    rq = float(np.dot(g.weights * m.phi, -laplacian(g, m.phi)) / np.dot(g.weights * m.phi, m.phi))
    assert rq == pytest.approx(discrete_eigenvalue(k, g), rel=1e-9, abs=1e-9)
    bound = 2 * (k * math.pi * g.dx / L) ** 2 / 12 * 10
    if k:
        assert abs(rq - m.mu) / m.mu <= bound
    else:
        assert abs(rq) < 1e-9


def test_interior_eigen_residual_second_order():
    errs = []
    for N in (64, 128, 256):
        g = Grid1D(math.pi, N)
        m = neumann_mode(g, 3)
        errs.append(np.max(np.abs(-laplacian(g, m.phi) - m.mu * m.phi)[1:-1]))
    assert math.log2(errs[0] / errs[1]) > 1.9 and math.log2(errs[1] / errs[2]) > 1.9


def test_parseval():
    g = Grid1D(2.0, 256)
    x = g.nodes
    f = np.exp(-((x - 0.7) / 0.5) ** 2) + 0.3 * np.cos(math.pi * x)
    coeffs = f @ projection_matrix(g, neumann_eigenpairs(g, 24))
    assert (coeffs**2).sum() >= 0.999 * g.integrate(f**2)


def test_separated_solution_examples():
    g = Grid1D(math.pi, 64)
    const = separated_solution(neumann_mode(g, 0), 1.0, 0.0, 1.0, 10)
    assert np.allclose(const.values, const.values[0, 0])
    s = separated_solution(neumann_mode(g, 1), 1.0, 0.0, 1.0, 10)
    assert s.values[-1, 0] == pytest.approx(math.exp(-1.0) * neumann_mode(g, 1).phi[0], rel=1e-14)


def _backward_euler_residual(w: SpaceTimeField, d, c):
    v = w.values
    r = (v[1:] - v[:-1]) / w.dt - d * laplacian(w.grid, v[1:]) - c * v[1:]
    return float(np.max(np.abs(r)))


def test_separated_solution_discrete_residual_shrinks():
    res = []
    for N, steps in ((32, 100), (64, 400), (128, 1600)):
        g = Grid1D(math.pi, N)
        w = separated_solution(neumann_mode(g, 2), 0.5, -0.2, 1.0, steps)
        res.append(_backward_euler_residual(w, 0.5, -0.2))
    assert res[1] < res[0] / 3 and res[2] < res[1] / 3


def test_adjoint_growth_rate_and_residual():
    g = Grid1D(math.pi, 128)
    w = adjoint_test_function(neumann_mode(g, 1), 1.0, -0.3, 1.0, 100)
    rate = math.log(w.values[-1, 0] / w.values[0, 0])
    assert rate == pytest.approx(1.3, rel=1e-12)
    assert np.allclose(adjoint_test_function(neumann_mode(g, 0), 1.0, 0.0, 1.0, 5).values,
                       1.0 / math.sqrt(math.pi))
    res = []
    for N, steps in ((32, 100), (64, 400), (128, 1600)):
        g = Grid1D(math.pi, N)
        w = adjoint_test_function(neumann_mode(g, 2), 0.5, 0.1, 1.0, steps).values
        dt = 1.0 / steps
        r = -(w[1:] - w[:-1]) / dt - 0.5 * laplacian(g, w[:-1]) - 0.1 * w[:-1]
        res.append(float(np.max(np.abs(r))))
    assert res[1] < res[0] / 3 and res[2] < res[1] / 3


@given(st.integers(0, 6), st.floats(0.05, 2.0), st.floats(-1.0, 1.0), st.floats(0.2, 2.0))
def test_adjoint_is_time_reversed_separated(k, d, c, T):
    g = Grid1D(math.pi, 32)
    m = neumann_mode(g, k)
    a = adjoint_test_function(m, d, c, T, 50).values
    s = separated_solution(m, d, c, T, 50).values
    scale = math.exp((d * m.mu - c) * T)
    assert np.allclose(a, scale * s[::-1], rtol=1e-12, atol=1e-300)


def test_cgo_plane_wave():
    g = Grid1D(math.pi, 128)
    one = cgo_plane_wave(g, 0.0, 1.0, 0.0, 1.0, 10)
    assert np.allclose(one.values, 1.0)
    w = cgo_plane_wave(g, 1.5, 0.4, 0.2, 1.0, 200)
    t = w.times
    assert np.allclose(np.abs(w.values), np.exp((1.5**2 - 0.2) * t)[:, None], rtol=1e-12)
    res = []
    for N, steps in ((32, 100), (64, 400), (128, 1600)):
        g = Grid1D(math.pi, N)
        v = cgo_plane_wave(g, 1.5, 0.4, 0.2, 1.0, steps).values
        r = -(v[1:] - v[:-1]) * steps - 0.4 * laplacian(g, v[:-1]) - 0.2 * v[:-1]
        res.append(float(np.max(np.abs(r[:, 1:-1]))))
    assert res[1] < res[0] / 3 and res[2] < res[1] / 3


def test_field_csv_roundtrip(tmp_path):
    g = Grid1D(1.0, 8)
    f = SpaceTimeField(g, 2.0, 4, np.arange(45, dtype=float).reshape(5, 9) / 7.0)
    p = tmp_path / "f.csv"
    f.to_csv(p)
    text = p.read_bytes()
    assert b"\r\n" not in text
    header = text.decode().splitlines()[0].split(",")
    assert len(header) == g.N + 2
    back = SpaceTimeField.from_csv(p)
    assert np.array_equal(back.values, f.values) and back.T == f.T
    f.to_csv(p, stride=2)
    assert len(p.read_text().splitlines()) == 1 + 3
    with pytest.raises(ValidationError):
        f.to_csv(p, stride=3)


def test_field_shape_checked():
    with pytest.raises(GridMismatch):
        SpaceTimeField(Grid1D(1.0, 8), 1.0, 3, np.zeros((3, 9)))
    with pytest.raises(ValidationError):
        SpaceTimeField(Grid1D(1.0, 8), 1.0, 1, np.full((2, 9), np.nan))


def test_modal_product_matches_pointwise():
    g = Grid1D(2.0, 64)
    a = ModalField(2.0, ((1.0, 0.0, 0), (0.5, -0.1, 2)))
    b = ModalField(2.0, ((0.3, 0.2, 1), (2.0, 0.0, 2)))
    t = [0.0, 0.4, 1.0]
    assert np.allclose((a * b).values(g, t), a.values(g, t) * b.values(g, t), atol=1e-13)
    f = ModalField.from_samples(a.values(g, [0.0])[0], g)
    assert np.allclose(f.values(g, [0.0]), a.values(g, [0.0]))
    with pytest.raises(ValidationError):
        ModalField.from_samples(np.exp(g.nodes), g, K=4)


def test_duhamel_terminal_closed_form():
    # w_t = d w_xx + c w + amp e^{r t} phi_1, w(0) = 0
    L, d, c, r, T = math.pi, 0.3, -0.2, 0.5, 1.2
    src = ModalField(L, ((2.0, r, 1),))
    out = duhamel_terminal(ModalField(L), src, d, c, T)
    g = c - d * eigenvalue(1, L)
    ref = 2.0 * (math.exp(r * T) - math.exp(g * T)) / (r - g)
    assert out[1] == pytest.approx(ref, rel=1e-13)
