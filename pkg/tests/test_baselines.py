import itertools

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapdoa.baselines import (
    brute_force_dml,
    gridless_refine,
    music,
    music_spectrum,
    root_music,
    root_music_polynomial,
    sparrow_lambda,
    sparrow_objective,
    sparrow_solve,
    sparrow_update,
)
from mapdoa.errors import EnumerationTooLarge, RankDeficient, SubspaceDegenerate
from mapdoa.model import (
    ArrayGeometry,
    Scenario,
    SnapshotSet,
    SteeringDictionary,
    generate_snapshots,
    make_rng,
    preprocess,
    steering_matrix,
)
from mapdoa.objective import concentrated_dml, concentrated_map


def noisy_data(geo, mus, snr_db=10.0, N=8, seed=0):
    sc = Scenario.from_snr(np.asarray(mus, float), snr_db, N)
    data, _ = generate_snapshots(sc, geo, make_rng(seed))
    return data


def noiseless(geo, mus, N=4, seed=0):
    r = np.random.default_rng(seed)
    X = r.standard_normal((len(mus), N)) + 1j * r.standard_normal((len(mus), N))
    return preprocess(steering_matrix(geo, mus) @ X)


def test_dml_single_atom_is_beamformer_peak():
    d = SteeringDictionary.ula(6, 40)
    for seed in range(5):
        data = noisy_data(d.geometry, [0.4], snr_db=0.0, seed=seed)
        power = np.linalg.norm(d.A.conj().T @ data.Y, axis=1) ** 2
        npt.assert_array_equal(brute_force_dml(data, d, 1), d.grid[[np.argmax(power)]])


def test_dml_noiseless_recovery():
    d = SteeringDictionary.ula(4, 12)
    truth = d.grid[[2, 7]]
    data = noiseless(d.geometry, truth)
    est = brute_force_dml(data, d, 2)
    npt.assert_array_equal(est, truth)
    assert concentrated_dml(est, data, d.geometry) <= 1e-9


def test_dml_matches_direct_enumeration():
    d = SteeringDictionary.ula(5, 16)
    data = noisy_data(d.geometry, [-1.0, 0.9], snr_db=0.0, N=3, seed=3)
    costs = {S: concentrated_dml(d.grid[list(S)], data, d.geometry)
             for S in itertools.combinations(range(16), 2)}
    best = min(costs, key=costs.get)
    npt.assert_array_equal(brute_force_dml(data, d, 2), d.grid[list(best)])


def test_dml_enumeration_limit():
    d = SteeringDictionary.ula(8, 100)
    data = noisy_data(d.geometry, [0.1])
    with pytest.raises(EnumerationTooLarge):
        brute_force_dml(data, d, 3, limit=1000)


def test_sparrow_lambda_values():
    npt.assert_allclose(sparrow_lambda(1.0, 8), 4.0787, atol=5e-5)
    npt.assert_allclose(sparrow_lambda(0.01, 8), 0.40787, atol=5e-6)
    npt.assert_allclose(sparrow_lambda(1.0, np.e), np.sqrt(np.e))
    with pytest.raises(ValueError):
        sparrow_lambda(0.0, 8)


def test_sparrow_zero_covariance():
    d = SteeringDictionary.ula(4, 20)
    Z = SnapshotSet(np.zeros((4, 2), complex), np.zeros((4, 4), complex), np.zeros((4, 2), complex))
    st_ = sparrow_solve(Z, d, 1.0)
    npt.assert_array_equal(st_.s, 0.0)
    assert st_.converged


def test_sparrow_large_lambda():
    d = SteeringDictionary.ula(8, 40)
    data = noisy_data(d.geometry, [-0.5, 0.7], snr_db=0.0, seed=2)
    # unit-power data: scale R to unit trace per sensor
    scale = np.sqrt(np.trace(data.R).real / 8)
    unit = preprocess(data.Y / scale)
    assert np.max(sparrow_solve(unit, d, 1e6).s) <= 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_sparrow_monotone_and_nonnegative(seed):
    d = SteeringDictionary.ula(6, 30)
    data = noisy_data(d.geometry, [-1.2, 0.3, 2.0], snr_db=float(seed * 5 - 5), seed=seed)
    st_ = sparrow_solve(data, d, sparrow_lambda(1.0, 6), L=3)
    assert np.all(st_.s >= 0)
    assert np.all(np.diff(st_.trace) <= 1e-12 * np.abs(np.array(st_.trace[:-1])))
    npt.assert_allclose(st_.trace[-1], sparrow_objective(st_.s, data.R, d.A, st_.lam), rtol=1e-10)


def test_sparrow_recovers_separated_sources():
    d = SteeringDictionary.ula(8, 100)
    truth = d.grid[[20, 55, 80]]
    data = noisy_data(d.geometry, truth, snr_db=20.0, N=50, seed=4)
    st_ = sparrow_solve(data, d, sparrow_lambda(0.01, 8), L=3)
    assert not st_.short
    npt.assert_allclose(st_.frequencies, truth, atol=2 * np.pi / 100 + 1e-12)


def test_sparrow_short_flag():
    d = SteeringDictionary.ula(4, 20)
    data = noisy_data(d.geometry, [0.3], snr_db=30.0, seed=1)
    st_ = sparrow_solve(data, d, sparrow_lambda(1e-3, 4), L=5)
    assert st_.short and st_.frequencies.size < 5


@pytest.mark.parametrize("seed", range(6))
def test_sparrow_scalar_update_grid_oracle(seed):
    r = np.random.default_rng(seed)
    M, K = 4, 10
    d = SteeringDictionary.ula(M, K)
    Y = r.standard_normal((M, 3)) + 1j * r.standard_normal((M, 3))
    R = Y @ Y.conj().T / 3
    lam = float(r.uniform(0.2, 2.0))
    s = r.uniform(0, 1, K) * r.integers(0, 2, K)
    k = int(r.integers(K))
    U = np.linalg.inv((d.A * s) @ d.A.conj().T + lam * np.eye(M))
    new = s[k] + sparrow_update(U, d.A[:, k], R, s[k])
    hi = max(2.0 * new, 1.0)
    grid = np.linspace(0.0, hi, 10_000)

    def obj(v):
        t = s.copy()
        t[k] = v
        return sparrow_objective(t, R, d.A, lam)

    vals = np.array([obj(v) for v in grid])
    assert abs(grid[np.argmin(vals)] - new) <= hi / 9999 + 1e-12
    assert obj(new) <= vals.min() + 1e-12


def test_sparrow_trace_identity():
    r = np.random.default_rng(7)
    d = SteeringDictionary.ula(5, 12)
    Y = r.standard_normal((5, 6)) + 1j * r.standard_normal((5, 6))
    data = preprocess(Y)
    s = r.uniform(0, 2, 12)
    lam = 0.7
    B = (d.A * s) @ d.A.conj().T + lam * np.eye(5)
    Binv = np.linalg.inv(B)
    lhs = np.trace(Binv @ data.R).real
    rhs = (lam / 6) * np.trace(Y.conj().T @ Binv @ Y).real / lam
    npt.assert_allclose(lhs, rhs, rtol=1e-8)
    npt.assert_allclose(sparrow_objective(s, data.R, d.A, lam), lhs + s.sum(), rtol=1e-10)


def test_music_noiseless_single_source():
    d = SteeringDictionary.ula(8, 100)
    mu = d.grid[63]
    for N in (1, 5):
        data = noiseless(d.geometry, [mu], N=N)
        npt.assert_array_equal(music(data, d, 1), [mu])
        npt.assert_allclose(root_music(data, d.geometry, 1), [mu], atol=1e-8)


def test_music_two_sources():
    d = SteeringDictionary.ula(8, 100)
    truth = d.grid[[10, 60]]
    data = noiseless(d.geometry, truth, N=10)
    npt.assert_array_equal(music(data, d, 2), truth)
    npt.assert_allclose(root_music(data, d.geometry, 2), truth, atol=1e-7)


def test_music_spectrum_positive():
    d = SteeringDictionary.ula(6, 50)
    data = noisy_data(d.geometry, [0.2, 1.0], seed=5)
    assert np.all(music_spectrum(data, d, 2) > 0)


def test_root_music_degree():
    g = ArrayGeometry.ula(8)
    data = noisy_data(g, [0.1, 0.5, 1.2], seed=1)
    coeffs = root_music_polynomial(data, 3)
    assert coeffs.size - 1 == 14
    # conjugate-reciprocal symmetry of the coefficients
    npt.assert_allclose(coeffs, coeffs[::-1].conj(), atol=1e-12)


def test_subspace_errors():
    g = ArrayGeometry.ula(4)
    data = noisy_data(g, [0.1])
    with pytest.raises(SubspaceDegenerate):
        root_music(data, g, 4)
    with pytest.raises(ValueError):
        root_music(data, ArrayGeometry(np.array([0.0, 1.0, 3.0, 4.0])), 1)


def test_refine_fixed_point():
    g = ArrayGeometry.ula(8)
    data = noisy_data(g, [-0.3, 1.1], snr_db=10.0, seed=3)
    d = SteeringDictionary.ula(8, 100)
    start = brute_force_dml(data, d, 2)
    once = gridless_refine(start, data, g)
    twice = gridless_refine(once, data, g)
    npt.assert_allclose(twice, once, atol=1e-8)


def test_refine_reduces_grid_error():
    """Off-grid truth at high SNR: refinement lands closer than the grid cell."""
    d = SteeringDictionary.ula(8, 100)
    g = d.geometry
    truth = d.grid[[30, 70]] + 0.4 * 2 * np.pi / 100
    before, after = [], []
    for seed in range(10):
        data = noisy_data(g, truth, snr_db=30.0, seed=seed)
        est = brute_force_dml(data, d, 2)
        ref = gridless_refine(est, data, g)
        before.append(np.max(np.abs(est - truth)))
        after.append(np.max(np.abs(ref - truth)))
    assert np.mean(after) < 0.25 * np.mean(before)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["dml", "map"]))
def test_refine_never_increases(seed, kind):
    r = np.random.default_rng(seed)
    g = ArrayGeometry.ula(6)
    L = int(r.integers(1, 4))
    data = noisy_data(g, np.sort(r.uniform(-3, 3, L)), snr_db=5.0, seed=seed)
    start = np.sort(r.uniform(-np.pi, np.pi, L))
    rho = 0.3

    def cost(m):
        if kind == "map":
            return concentrated_map(m, data, g, rho)
        try:
            return concentrated_dml(m, data, g)
        except RankDeficient:
            return np.inf

    out = gridless_refine(start, data, g, objective=kind, rho=rho)
    assert np.all(out >= -np.pi) and np.all(out < np.pi)
    assert cost(out) <= cost(start)


def test_refine_validation():
    g = ArrayGeometry.ula(4)
    data = noisy_data(g, [0.1])
    with pytest.raises(ValueError):
        gridless_refine([0.1], data, g, objective="map")
    with pytest.raises(ValueError):
        gridless_refine([0.1], data, g, objective="ml")
    assert gridless_refine([], data, g).size == 0
