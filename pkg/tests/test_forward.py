import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pnpadmm.errors import DimensionError
from pnpadmm.forward import (QisObservation, SuperResModel, deblur_problem, deblur_prox,
                             interp_problem, interp_prox, polyphase_zeroth, qis_counts,
                             qis_lookup_build, qis_mle, qis_objective, qis_problem, qis_prox,
                             qis_roots, qis_simulate, qis_stationarity_residual,
                             superres_adjoint, superres_forward, superres_problem, superres_prox)
from pnpadmm.imagecore import circ_conv, delta_kernel, downsample, upsample


# -- dense oracles -----------------------------------------------------------

def conv_matrix(h, shape):
    """Dense matrix of circular convolution with `h`, built column by column."""
    n = shape[0] * shape[1]
    M = np.empty((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        M[:, j] = circ_conv(e.reshape(shape), h).ravel()
    return M


def decimation_matrix(shape, K):
    idx = np.arange(shape[0] * shape[1]).reshape(shape)[::K, ::K].ravel()
    S = np.zeros((idx.size, shape[0] * shape[1]))
    S[np.arange(idx.size), idx] = 1.0
    return S


def dense_prox(G, y, rho, xt):
    n = G.shape[1]
    return np.linalg.solve(G.T @ G + rho * np.eye(n), G.T @ y.ravel() + rho * xt.ravel())


def rel_err(a, b):
    return np.linalg.norm(np.ravel(a) - np.ravel(b)) / np.linalg.norm(np.ravel(b))


def scalar_root(k0, K, alpha, rho, xt, lo=1e-14, hi=50.0):
    """Plain scalar bisection on the stationarity residual (decreasing in x)."""
    f = lambda x: K * np.exp(-alpha * x / K) * (alpha + rho * (x - xt)) - alpha * k0 \
        - rho * K * (x - xt)
    while f(hi) > 0:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) > 0 else (lo, mid)
    return 0.5 * (lo + hi)


# -- deblurring --------------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_deblur_prox_matches_dense_solve(seed):
    rng = np.random.default_rng(seed)
    y, xt, h = rng.random((8, 8)), rng.random((8, 8)), rng.random((3, 3))
    expected = dense_prox(conv_matrix(h, (8, 8)), y, 0.7, xt)
    assert rel_err(deblur_prox(y, h, 0.7, xt), expected) <= 1e-8


def test_deblur_prox_special_cases():
    rng = np.random.default_rng(9)
    y, xt = rng.random((6, 6)), rng.random((6, 6))
    np.testing.assert_allclose(deblur_prox(y, delta_kernel(), 0.3, xt), (y + 0.3 * xt) / 1.3,
                               atol=1e-14)
    h = rng.random((3, 3))
    assert np.max(np.abs(deblur_prox(y, h, 1e8, xt) - xt)) <= 1e-6
    with pytest.raises(ValueError):
        deblur_prox(y, h, 0.0, xt)
    with pytest.raises(DimensionError):
        deblur_prox(y, h, 1.0, xt[:4])


# -- interpolation -----------------------------------------------------------

@pytest.mark.parametrize("seed", range(5))
def test_interp_prox_matches_dense_solve(seed):
    rng = np.random.default_rng(seed)
    y, xt = rng.random((8, 8)), rng.random((8, 8))
    mask = (rng.random((8, 8)) < 0.4).astype(float)
    S = np.diag(mask.ravel())
    expected = dense_prox(S, mask * y, 0.5, xt)
    np.testing.assert_allclose(interp_prox(y, mask, 0.5, xt).ravel(), expected, atol=1e-10)


def test_interp_prox_special_cases():
    rng = np.random.default_rng(1)
    y, xt = rng.random((4, 4)), rng.random((4, 4))
    np.testing.assert_allclose(interp_prox(y, np.ones((4, 4)), 2.0, xt), (y + 2 * xt) / 3)
    np.testing.assert_array_equal(interp_prox(y, np.zeros((4, 4)), 2.0, xt), xt)
    with pytest.raises(ValueError):
        interp_prox(y, np.full((4, 4), 0.5), 1.0, xt)
    with pytest.raises(ValueError):
        interp_prox(y, np.ones((4, 4)), -1.0, xt)


# -- super-resolution --------------------------------------------------------

def test_polyphase_zeroth_basic_cases():
    np.testing.assert_allclose(polyphase_zeroth(delta_kernel(), 2, (8, 8)),
                               np.pad([[1.0]], ((0, 3), (0, 3))), atol=1e-15)
    h = np.random.default_rng(0).random((3, 3))
    auto = circ_conv(np.pad(h, ((0, 5), (0, 5))), h[::-1, ::-1], anchor=(0, 0))
    auto = np.roll(auto, (-2, -2), axis=(0, 1))  # move the zero lag to (0, 0)
    np.testing.assert_allclose(polyphase_zeroth(h, 1, (8, 8)), auto, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 4]), st.sampled_from([1, 3, 5]))
def test_polyphase_zeroth_is_even(seed, K, size):
    h = np.random.default_rng(seed).random((size, size))
    h0 = polyphase_zeroth(h, K, (16, 16))
    np.testing.assert_allclose(h0, np.roll(h0[::-1, ::-1], (1, 1), axis=(0, 1)), atol=1e-13)


@pytest.mark.parametrize("K", [1, 2, 4])
def test_block_diagram_identity(K):
    rng = np.random.default_rng(K)
    h = rng.random((5, 5))
    shape = (16, 16)
    h0 = polyphase_zeroth(h, K, shape)
    H = conv_matrix(h, shape)
    for _ in range(5):
        w = rng.random((16 // K, 16 // K))
        lhs = downsample((H @ H.T @ upsample(w, K).ravel()).reshape(shape), K)
        np.testing.assert_allclose(lhs, circ_conv(w, h0, anchor=(0, 0)), atol=1e-10)


def test_superres_operators_are_adjoint():
    rng = np.random.default_rng(3)
    model = SuperResModel.build(rng.random((5, 5)), 2, (12, 12))
    x, y = rng.random((12, 12)), rng.random((6, 6))
    assert np.vdot(superres_forward(model, x), y) == pytest.approx(
        np.vdot(x, superres_adjoint(model, y)), rel=1e-12)


def test_lowres_spectrum_diagonalizes_GGt():
    rng = np.random.default_rng(4)
    h = rng.random((3, 3))
    model = SuperResModel.build(h, 2, (8, 8))
    G = decimation_matrix((8, 8), 2) @ conv_matrix(h, (8, 8))
    GGt = G @ G.T
    eig = np.sort(np.linalg.eigvalsh(GGt))
    np.testing.assert_allclose(np.sort(model.lowres_spectrum.ravel()), eig, atol=1e-12)
    assert model.lowres_spectrum.min() >= -1e-12


@pytest.mark.parametrize("seed", range(4))
def test_superres_prox_matches_dense_solve(seed):
    rng = np.random.default_rng(seed)
    h = rng.random((3, 3))
    model = SuperResModel.build(h, 2, (16, 16))
    G = decimation_matrix((16, 16), 2) @ conv_matrix(h, (16, 16))
    assert G.shape == (64, 256)
    y, xt = rng.random((8, 8)), rng.random((16, 16))
    assert rel_err(superres_prox(model, y, 0.3, xt), dense_prox(G, y, 0.3, xt)) <= 1e-8


def test_superres_prox_reductions():
    rng = np.random.default_rng(5)
    h = rng.random((3, 3))
    y, xt = rng.random((8, 8)), rng.random((8, 8))
    model = SuperResModel.build(h, 1, (8, 8))
    np.testing.assert_allclose(superres_prox(model, y, 0.4, xt), deblur_prox(y, h, 0.4, xt),
                               atol=1e-10)
    model2 = SuperResModel.build(h, 2, (8, 8))
    assert np.max(np.abs(superres_prox(model2, y[:4, :4], 1e8, xt) - xt)) <= 1e-6
    with pytest.raises(DimensionError):
        superres_prox(model2, y, 1.0, xt)
    with pytest.raises(DimensionError):
        SuperResModel.build(h, 3, (8, 8))


def test_woodbury_matches_direct_inverse():
    rng = np.random.default_rng(6)
    h = rng.random((3, 3))
    G = decimation_matrix((8, 8), 2) @ conv_matrix(h, (8, 8))
    y, xt, rho = rng.random(16), rng.random(64), 0.8
    b = G.T @ y + rho * xt
    direct = np.linalg.solve(G.T @ G + rho * np.eye(64), b)
    smw = b / rho - G.T @ np.linalg.solve(rho * np.eye(16) + G @ G.T, G @ b) / rho
    np.testing.assert_allclose(smw, direct, atol=1e-10)


# -- prox inequality for every model -----------------------------------------

def _prox_cases():
    rng = np.random.default_rng(7)
    y, xt = rng.random((8, 8)), rng.random((8, 8))
    h = rng.random((3, 3))
    mask = (rng.random((8, 8)) < 0.5).astype(float)
    model = SuperResModel.build(h, 2, (8, 8))
    k1 = rng.integers(0, 5, (8, 8))
    obs = QisObservation(K=4, alpha=4.0, k1=k1, k0=4 - k1)
    return [("deblur", deblur_problem(y, h), xt), ("interp", interp_problem(y, mask), xt),
            ("superres", superres_problem(model, y[:4, :4]), xt), ("qis", qis_problem(obs), xt)]


@pytest.mark.parametrize("name,problem,xt", _prox_cases(), ids=lambda v: v if isinstance(v, str)
                         else "")
def test_prox_inequality(name, problem, xt):
    rho = 0.6
    p = problem.prox(rho, xt)
    best = problem.objective(p) + 0.5 * rho * np.sum((p - xt) ** 2)
    rng = np.random.default_rng(8)
    for _ in range(100):
        z = rng.random(xt.shape) if name == "qis" else xt + rng.standard_normal(xt.shape)
        assert best <= problem.objective(z) + 0.5 * rho * np.sum((z - xt) ** 2) + 1e-10


# -- QIS simulation and counting ---------------------------------------------

def test_qis_dark_scene_has_no_ones():
    assert not qis_simulate(np.zeros((4, 4)), 9, 9.0, seed=0).any()


def test_qis_firing_rate():
    K, c = 16, 0.3
    bits = qis_simulate(np.full((64, 64), c), K, float(K), seed=1)
    p = 1 - np.exp(-c)  # alpha * c / K with alpha = K
    se = np.sqrt(p * (1 - p) / bits.size)
    assert abs(bits.mean() - p) <= 3 * se


def test_qis_rate_follows_block_average():
    # the expected firing probability depends on alpha * x / K per jot
    x = np.array([[0.1, 0.9]])
    bits = qis_simulate(np.repeat(x, 2000, axis=0), 4, 8.0, seed=2)
    np.testing.assert_allclose(bits.mean(axis=(0, 2)), 1 - np.exp(-8.0 * x[0] / 4), atol=0.01)


def test_qis_simulation_is_seeded():
    x = np.random.default_rng(0).random((8, 8))
    a = qis_simulate(x, 4, 4.0, seed=11)
    np.testing.assert_array_equal(a, qis_simulate(x, 4, 4.0, seed=11))
    assert not np.array_equal(a, qis_simulate(x, 4, 4.0, seed=12))
    with pytest.raises(ValueError):
        qis_simulate(x, 0, 4.0, 0)
    with pytest.raises(ValueError):
        qis_simulate(x, 4, -1.0, 0)
    with pytest.raises(ValueError):
        qis_simulate(x + 1, 4, 4.0, 0)


def test_qis_counts():
    k1, k0 = qis_counts(np.zeros((3, 3, 4), dtype=np.uint8), 4)
    assert np.all(k1 == 0) and np.all(k0 == 4)
    k1, k0 = qis_counts(np.ones((3, 3, 4), dtype=np.uint8), 4)
    assert np.all(k1 == 4) and np.all(k0 == 0)
    rng = np.random.default_rng(1)
    flat = rng.integers(0, 2, 2 * 3 * 5)
    k1, k0 = qis_counts(flat, 5, shape=(2, 3))
    for j in range(6):
        assert k1.ravel()[j] == sum(flat[5 * j:5 * j + 5])
    np.testing.assert_array_equal(k1 + k0, 5)
    with pytest.raises(DimensionError):
        qis_counts(flat, 4, shape=(2, 3))
    with pytest.raises(ValueError):
        qis_counts(np.full((2, 2, 3), 2), 3)


def test_qis_observation_validation():
    with pytest.raises(ValueError):
        QisObservation(K=4, alpha=4.0, k1=np.array([1]), k0=np.array([2]))
    with pytest.raises(ValueError):
        QisObservation(K=4, alpha=4.0, k1=np.array([1]), k0=np.array([3]), q=2)


# -- QIS prox ----------------------------------------------------------------

def test_qis_prox_no_ones_closed_form():
    xt = np.linspace(-1, 3, 12).reshape(3, 4)
    obs = QisObservation(K=4, alpha=4.0, k1=np.zeros((3, 4), int), k0=np.full((3, 4), 4))
    np.testing.assert_allclose(qis_prox(obs, 10.0, xt), np.clip(xt - 0.4, 0, 1), atol=1e-15)


def test_qis_roots_against_scalar_bisection():
    rng = np.random.default_rng(2)
    K, alpha = 9, 9.0
    for _ in range(30):
        k1 = int(rng.integers(1, K + 1))
        rho = 10 ** rng.uniform(-3, 3)
        xt = rng.uniform(-1, 2)
        got = qis_roots(np.array([k1]), K, alpha, rho, np.array([xt]))[0]
        assert got == pytest.approx(scalar_root(K - k1, K, alpha, rho, xt), abs=1e-10)


def test_qis_prox_residual_and_grid_search():
    rng = np.random.default_rng(3)
    K, alpha = 16, 16.0
    k1 = rng.integers(0, K + 1, 200)
    xt = rng.uniform(0, 1, 200)
    rho = 2.0
    obs = QisObservation(K=K, alpha=alpha, k1=k1, k0=K - k1)
    x = qis_prox(obs, rho, xt)
    interior = (k1 > 0) & (x > 0) & (x < 1)
    res = qis_stationarity_residual(x, K - k1, K, alpha, rho, xt)
    assert np.max(np.abs(res[interior])) <= 1e-9
    grid = np.arange(0, 1 + 5e-5, 1e-4)
    for j in range(200):
        vals = qis_objective(grid, k1[j], K - k1[j], K, alpha, rho, xt[j])
        mine = qis_objective(x[j], k1[j], K - k1[j], K, alpha, rho, xt[j])
        assert mine <= vals.min() + 1e-8
        assert mine <= qis_objective(xt[j], k1[j], K - k1[j], K, alpha, rho, xt[j]) + 1e-12


def test_qis_lookup_table():
    K, alpha, rho = 4, 4.0, 0.5
    lut = qis_lookup_build(alpha, K, rho, grid_step=1e-3)
    assert lut.grid[0] == pytest.approx(max(-alpha / rho - 1, -1.0))
    assert lut.grid[-1] >= 2.0 - 1e-12
    np.testing.assert_allclose(lut.table[K], lut.grid - alpha / rho, atol=1e-14)
    rng = np.random.default_rng(4)
    for _ in range(20):
        k0 = int(rng.integers(0, K))
        i = int(rng.integers(0, lut.grid.size))
        assert lut.table[k0, i] == pytest.approx(scalar_root(k0, K, alpha, rho, lut.grid[i]),
                                                 abs=1e-9)
        res = qis_stationarity_residual(lut.table[k0, i], k0, K, alpha, rho, lut.grid[i])
        assert abs(res) <= 1e-9


def test_qis_lookup_interpolation_error():
    K, alpha, rho = 4, 4.0, 1.0
    lut = qis_lookup_build(alpha, K, rho, grid_step=1e-3)
    rng = np.random.default_rng(5)
    k0 = rng.integers(0, K + 1, 500)
    xt = rng.uniform(-0.5, 1.5, 500)
    direct = qis_roots(K - k0, K, alpha, rho, xt)
    assert np.max(np.abs(lut.query(k0, xt) - direct)) <= 1e-4
    assert np.isnan(lut.query(np.array([0]), np.array([5.0])))[0]


def test_qis_prox_lookup_path():
    K, alpha, rho = 4, 4.0, 1.0
    rng = np.random.default_rng(6)
    k1 = rng.integers(0, K + 1, (6, 6))
    obs = QisObservation(K=K, alpha=alpha, k1=k1, k0=K - k1)
    xt = rng.uniform(-3, 3, (6, 6))  # some queries fall off the grid
    lut = qis_lookup_build(alpha, K, rho)
    np.testing.assert_allclose(qis_prox(obs, rho, xt, lookup=lut), qis_prox(obs, rho, xt),
                               atol=1e-4)
    with pytest.raises(ValueError):
        qis_prox(obs, 2.0, xt, lookup=lut)


def test_qis_mle():
    K, alpha = 9, 9.0
    k1 = np.arange(K + 1)
    obs = QisObservation(K=K, alpha=alpha, k1=k1, k0=K - k1)
    x = qis_mle(obs)
    assert x[0] == 0.0 and x[-1] == 1.0
    grid = np.arange(0, 1 + 5e-6, 1e-5)
    for j in range(1, K):
        nll = qis_objective(grid, k1[j], K - k1[j], K, alpha)
        assert x[j] == pytest.approx(grid[np.argmin(nll)], abs=2e-5)
