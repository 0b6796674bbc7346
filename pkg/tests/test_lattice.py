import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracmap.constants import FracParams
from fracmap.errors import ConfigError, PreconditionError, ResourceError
from fracmap.lattice import (
    PRESETS,
    box_complement_integral,
    build_lattice,
    check_unit,
    exterior_shells,
    kernel_table,
    preset_field,
    preset_function,
    unit_defect,
)


def test_node_layout_and_omega():
    lat = build_lattice(FracParams(2, 0.5, 2), 0.25, 1.0, 2.0, shape="box")
    assert lat.N == 17**2
    assert lat.n_omega == 9**2
    assert lat.omega_idx.size + lat.ext_idx.size == lat.N
    ball = build_lattice(FracParams(2, 0.5, 2), 0.25, 1.0, 2.0, shape="ball")
    assert ball.n_omega < lat.n_omega
    assert np.all(np.linalg.norm(ball.coords[ball.omega_idx], axis=1) <= 1.0 + 1e-12)


def test_far_weights_are_point_kernel():
    n, s, h = 2, 0.3, 0.1
    w, mu = kernel_table(n, s, h, 6, 2, 4)
    c = 6
    for off in [(5, 0), (3, 4), (6, 6)]:
        r = h * np.hypot(*off)
        assert w[c + off[0], c + off[1]] == pytest.approx(h**4 * r ** (-(n + 2 * s)), rel=1e-14)
        assert mu[c + off[0], c + off[1]] == pytest.approx(h**4 * r**-n, rel=1e-14)
    assert w[c, c] == 0.0


def test_kernel_table_symmetric():
    w, _ = kernel_table(2, 0.7, 0.2, 5, 2, 4)
    assert np.array_equal(w, w[::-1, ::-1])
    assert np.allclose(w, w.T, rtol=1e-14, atol=0)


def test_near_weights_converge_in_subsamples():
    # cell averages of the kernel: refining the midpoint rule changes little
    w4, _ = kernel_table(1, 0.25, 1.0, 3, 2, 4)
    w64, _ = kernel_table(1, 0.25, 1.0, 3, 2, 64)
    assert np.allclose(w4, w64, rtol=2e-2)


def test_lattice_weights_symmetric_on_omega():
    lat = build_lattice(FracParams(2, 0.4, 1), 0.25, 1.0, 1.5)
    W = lat.w[:, lat.omega_idx]
    assert np.array_equal(W, W.T)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_box_complement_1d_against_shells(s):
    x = np.array([[0.0], [0.3], [-0.7]])
    exact = box_complement_integral(x, 1.0, 1, s)
    pts, vols = exterior_shells(1, 1.0, q=64, n_shells=60)
    approx = np.sum(np.abs(x - pts.T) ** (-(1 + 2 * s)) * vols, axis=1)
    assert np.allclose(approx, exact, rtol=2e-2)


def test_box_complement_2d_disc_limit():
    # at the centre of the square the integral lies between the inscribed and circumscribed discs
    s = 0.5
    v = box_complement_integral(np.zeros((1, 2)), 1.0, 2, s)[0]
    disc = lambda R: 2 * np.pi * R ** (-2 * s) / (2 * s)
    assert disc(np.sqrt(2)) < v < disc(1.0)


def test_constant_exterior_tail_matches_function_tail():
    p = FracParams(2, 0.5, 2)
    a = build_lattice(p, 0.25, 0.5, 1.0, tail_mode="constant-exterior", exterior=[1.0, 0.0])
    b = build_lattice(p, 0.25, 0.5, 1.0, tail_mode="exterior-function", exterior=preset_function("constant", 2, 2))
    assert np.allclose(a.tail.tau, b.tail.tau, rtol=1e-12)
    assert np.allclose(a.tail.m, b.tail.m, rtol=1e-12)


@pytest.mark.parametrize("name", [p for p in PRESETS if p != "gaussian"])
def test_presets_are_unit(name):
    lat = build_lattice(FracParams(2, 0.5, 2), 0.25, 1.0, 1.5)
    u = preset_field(lat, name)
    assert u.shape == (lat.N, 2)
    assert unit_defect(u) < 1e-14


def test_random_preset_seeded():
    lat = build_lattice(FracParams(1, 0.5, 3), 1 / 16, 1.0, 1.5)
    a = preset_field(lat, "random-perturbation", seed=3)
    b = preset_field(lat, "random-perturbation", seed=3)
    c = preset_field(lat, "random-perturbation", seed=4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_hedgehog_needs_dimensions():
    with pytest.raises(ConfigError):
        preset_function("hedgehog", 1, 1)
    with pytest.raises(ConfigError):
        preset_function("hedgehog", 3, 2)
    with pytest.raises(ConfigError):
        preset_function("nope", 2, 2)


def test_build_errors():
    p = FracParams(1, 0.5, 1)
    with pytest.raises(ConfigError):
        build_lattice(p, 0.1, 1.0, 1.05)  # L_ext not a multiple of h
    with pytest.raises(ConfigError):
        build_lattice(p, 0.25, 1.0, 1.0)  # no exterior collar
    with pytest.raises(ConfigError):
        build_lattice(p, 0.25, 1.0, 2.0, tail_mode="exterior-function")
    with pytest.raises(ConfigError):
        build_lattice(p, 0.25, 1.0, 2.0, shape="hexagon")
    with pytest.raises(ResourceError):
        build_lattice(FracParams(2, 0.5, 1), 1 / 16, 1.0, 2.0, max_pairs=1000)


def test_check_unit():
    with pytest.raises(PreconditionError):
        check_unit(np.array([[1.0, 0.0], [0.5, 0.0]]))


@settings(max_examples=25, deadline=None)
@given(k=st.integers(-8, 8), j=st.integers(-8, 8))
def test_nearest_node_roundtrip(k, j):
    lat = build_lattice(FracParams(2, 0.5, 1), 0.25, 1.0, 2.0)
    idx = lat.nearest_node([k * 0.25, j * 0.25])
    assert np.allclose(lat.coords[idx], [k * 0.25, j * 0.25])
