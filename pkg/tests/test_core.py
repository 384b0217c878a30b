import numpy as np
import numpy.polynomial.polynomial as npoly
import pytest
from hypothesis import given, strategies as st

from bcphs.core import (PortSplitError, StructureError, SystemSpec, SampledDensity,
                        build_Q, derive_io_from_trace_selection, hamiltonian, io_from_ports,
                        ports_from_traces, selection_matrix, sigma, sigma_residuals,
                        traces_from_ports, traces_matrix, validate_io, validate_system)
from bcphs.models import BEAM_U_SELECTION, BEAM_Y_SELECTION, beam_spec

SQ2 = np.sqrt(2.0)


def random_spec(seed, N=None, n=None):
    """Valid system with random structure matrices and a constant SPD density."""
    rng = np.random.default_rng(seed)
    N = N or int(rng.integers(1, 4))
    if n is None:
        n = int(rng.choice([2, 4])) if N % 2 == 0 else int(rng.integers(1, 4))
    G = rng.normal(size=(n, n))
    P = [-(G @ G.T) * 0.1 + (G - G.T) * 0.5]
    for k in range(1, N + 1):
        M = rng.normal(size=(n, n))
        P.append(M + M.T if k % 2 else M - M.T)
    while np.linalg.svd(P[N], compute_uv=False).min() < 0.1:
        M = rng.normal(size=(n, n))
        P[N] = M + M.T if N % 2 else M - M.T
    R = rng.normal(size=(n, n))
    return SystemSpec(tuple(P), (0.0, float(rng.uniform(0.5, 2.0))), R @ R.T + n * np.eye(n))


seeds = st.integers(0, 2 ** 31 - 1)


# -- validation -------------------------------------------------------------

def test_beam_validates():
    spec, _ = beam_spec()
    rep = validate_system(spec)
    assert rep.ok
    margins = {c.name: c for c in rep.checks}
    assert "max eigenvalue of P0 + P0^T = 0.000e+00" in margins["P0 dissipative"].detail
    assert np.allclose(np.linalg.eigvalsh(spec.P[0] + spec.P[0].T), [-0.4, 0.0])


def test_singular_top_matrix_fails():
    spec, _ = beam_spec()
    bad = SystemSpec((spec.P[0], spec.P[1], np.zeros((2, 2))), spec.interval,
                     spec.hamiltonian_density)
    rep = validate_system(bad)
    assert not rep.ok
    assert any("P_N singular" in c.detail for c in rep.failed())


def test_lossless_wave_validates():
    spec = SystemSpec((np.zeros((2, 2)), np.array([[0.0, 1.0], [1.0, 0.0]])))
    assert validate_system(spec).ok


def test_dimension_mismatch_is_structural():
    with pytest.raises(StructureError):
        SystemSpec((np.zeros((2, 2)), np.zeros((3, 3))))
    with pytest.raises(StructureError):
        SystemSpec((np.zeros((2, 2)), np.eye(2)), (1.0, 0.0))


def test_indefinite_density_fails():
    spec = SystemSpec((np.zeros((1, 1)), np.ones((1, 1))), (0, 1), np.array([[-1.0]]))
    assert not validate_system(spec).ok


def test_sampled_density_interpolates():
    grid = np.linspace(0, 1, 5)
    samples = np.array([np.diag([1 + z, 2.0]) for z in grid])
    d = SampledDensity(grid, samples)
    assert np.allclose(d(0.125)[0], np.diag([1.125, 2.0]))
    with pytest.raises(StructureError):
        SampledDensity(grid[::-1], samples)


def test_io_gain_mode():
    _, io = beam_spec()
    assert validate_io(io).ok
    zero = io.with_gain(np.zeros((2, 2)))
    assert not validate_io(zero).ok
    assert validate_io(zero, mode="open_loop").ok


# -- Q and port maps ------------------------------------------------------------

def test_build_Q_beam_column_form():
    spec, _ = beam_spec()
    expected = np.array([[0, 0, 0, 1], [0, 0, -1, 0], [0, -1, 0, 0], [1, 0, 0, 0]], float)
    assert np.array_equal(build_Q(spec, sign_index="column"), expected)
    # the default pairing flips the sign of the P_2 blocks
    assert np.array_equal(build_Q(spec), -expected)


def test_build_Q_first_order_is_P1():
    spec = SystemSpec((np.zeros((2, 2)), np.array([[0.0, 1.0], [1.0, 0.0]])))
    assert np.array_equal(build_Q(spec), spec.P[1])
    assert np.array_equal(build_Q(spec, sign_index="column"), spec.P[1])


@given(seeds)
def test_Q_nonsingular(seed):
    spec = random_spec(seed)
    assert np.linalg.svd(build_Q(spec), compute_uv=False).min() > 0


def _boundary_power_oracle(spec, coeffs):
    """Exact ``int e^T sum_{k>=1} P_k d^k e`` for a polynomial effort, plus its traces."""
    n, N = spec.state_dim, spec.order
    a, b = spec.interval
    total = np.zeros(1)
    for i in range(n):
        for k in range(1, N + 1):
            for j in range(n):
                if spec.P[k][i, j] == 0:
                    continue
                prod = npoly.polymul(coeffs[i], npoly.polyder(coeffs[j], k))
                total = npoly.polyadd(total, spec.P[k][i, j] * prod)
    integ = npoly.polyint(total)
    power = npoly.polyval(b, integ) - npoly.polyval(a, integ)

    def stack(z):
        return np.array([npoly.polyval(z, npoly.polyder(coeffs[c], k)) if k else npoly.polyval(z, coeffs[c])
                         for k in range(N) for c in range(n)])
    return power, stack(a), stack(b)


@given(seeds)
def test_port_pairing_equals_boundary_power(seed):
    spec = random_spec(seed)
    rng = np.random.default_rng(seed + 1)
    coeffs = [rng.normal(size=2 * spec.order + 2) for _ in range(spec.state_dim)]
    power, pa, pb = _boundary_power_oracle(spec, coeffs)
    pv = ports_from_traces(spec, pa, pb)
    assert pv.f @ pv.e == pytest.approx(power, rel=1e-9, abs=1e-9)


def test_column_sign_reverses_second_order_pairing():
    spec = random_spec(3, N=2, n=2)
    rng = np.random.default_rng(0)
    coeffs = [rng.normal(size=6) for _ in range(2)]
    power, pa, pb = _boundary_power_oracle(spec, coeffs)
    Qc = build_Q(spec, sign_index="column")
    f = Qc @ (pb - pa) / SQ2
    e = (pb + pa) / SQ2
    assert abs(f @ e - power) > 1e-3 * max(1.0, abs(power))


def test_ports_equal_traces():
    spec, _ = beam_spec()
    v = np.array([1.0, 2.0, 3.0, 4.0])
    pv = ports_from_traces(spec, v, v)
    assert np.allclose(pv.f, 0) and np.allclose(pv.e, SQ2 * v)
    pv = ports_from_traces(spec, v, -v)
    assert np.allclose(pv.e, 0) and np.allclose(pv.f, -SQ2 * build_Q(spec) @ v)
    pa, pb = traces_from_ports(spec, np.r_[np.zeros(4), SQ2 * v])
    assert np.allclose(pa, v) and np.allclose(pb, v)


def test_zero_ports_zero_traces():
    spec = SystemSpec((np.zeros((2, 2)), np.array([[0.0, 1.0], [1.0, 0.0]])))
    pa, pb = traces_from_ports(spec, np.zeros(4))
    assert not pa.any() and not pb.any()


@given(seeds)
def test_trace_port_round_trip(seed):
    spec = random_spec(seed)
    rng = np.random.default_rng(seed)
    pa, pb = rng.normal(size=(2, spec.port_dim))
    back = traces_from_ports(spec, ports_from_traces(spec, pa, pb))
    assert np.allclose(back[0], pa, atol=1e-10) and np.allclose(back[1], pb, atol=1e-10)
    assert np.allclose(traces_matrix(spec) @ np.r_[ports_from_traces(spec, pa, pb).stacked],
                       np.r_[pa, pb], atol=1e-10)


def _beam_profile_traces():
    # x = (0, zeta - 0.9) with EI = 1: e1 = 0, e2 = zeta - 0.9
    pa = np.array([0.0, -0.9, 0.0, 1.0])
    pb = np.array([0.0, 0.1, 0.0, 1.0])
    return pa, pb


def test_beam_ports_by_hand():
    spec, _ = beam_spec()
    pa, pb = _beam_profile_traces()
    pv = ports_from_traces(spec, pa, pb)
    # Q (pb - pa) with pb - pa = (0, 1, 0, 0) picks column 2 of Q
    assert np.allclose(pv.f, build_Q(spec)[:, 1] / SQ2)
    assert np.allclose(pv.e, np.array([0.0, -0.8, 0.0, 2.0]) / SQ2)


def test_beam_io_on_tip_load_profile():
    spec, io = beam_spec()
    pa, pb = _beam_profile_traces()
    u, y, y_m = io_from_ports(io, ports_from_traces(spec, pa, pb))
    assert np.allclose(u, [0, 0, 0.1, 1.0], atol=1e-14)
    assert np.allclose(y, [1.0, 0.9, 0, 0], atol=1e-14)
    assert np.allclose(y_m, [0, 0], atol=1e-14)


def test_zero_ports_zero_io():
    _, io = beam_spec()
    u, y, y_m = io_from_ports(io, np.zeros(8))
    assert not u.any() and not y.any() and not y_m.any()


# -- Sigma identities -----------------------------------------------------------

def test_beam_selection_sigma_identities():
    _, io = beam_spec()
    for r in sigma_residuals(io.W_B, io.W_C).values():
        assert r < 1e-12


def test_swapped_selection_is_dual():
    spec, _ = beam_spec()
    io = derive_io_from_trace_selection(spec, BEAM_Y_SELECTION, BEAM_U_SELECTION)
    S = sigma(4)
    assert np.linalg.norm(io.W_C @ S @ io.W_B.T - np.eye(4)) < 1e-12


def test_repeated_trace_rejected():
    spec, _ = beam_spec()
    bad = (BEAM_U_SELECTION[0],) + BEAM_U_SELECTION[:3]
    with pytest.raises(PortSplitError, match="rank"):
        derive_io_from_trace_selection(spec, bad, BEAM_Y_SELECTION)


def test_non_conjugate_selection_rejected():
    spec, _ = beam_spec()
    flipped = tuple((e, k, c, -s) for e, k, c, s in BEAM_Y_SELECTION)
    with pytest.raises(PortSplitError, match="not a valid port split"):
        derive_io_from_trace_selection(spec, BEAM_U_SELECTION, flipped)


@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0, 2), st.floats(0.1, 5))
def test_derived_io_satisfies_sigma(rho, EI, d, c):
    from bcphs.models import BeamParams, wave_spec
    for _, io in (beam_spec(BeamParams(rho, EI, d)), wave_spec(c)):
        assert all(r < 1e-10 for r in sigma_residuals(io.W_B, io.W_C).values())


# -- Hamiltonian ----------------------------------------------------------------

def test_hamiltonian_values():
    spec, _ = beam_spec()
    grid = np.linspace(0, 1, 2001)
    x = np.stack([0 * grid, grid - 0.9], axis=1)
    assert hamiltonian(spec, 0 * x, grid) == 0.0
    assert hamiltonian(spec, x, grid) == pytest.approx(0.730 / 6, rel=1e-6)
    assert hamiltonian(spec, 2 * x, grid) == pytest.approx(4 * hamiltonian(spec, x, grid), rel=1e-14)
    with pytest.raises(StructureError):
        hamiltonian(spec, x[:-1], grid)


@given(seeds, st.floats(-5, 5))
def test_hamiltonian_quadratic(seed, alpha):
    spec = random_spec(seed)
    rng = np.random.default_rng(seed)
    grid = np.linspace(*spec.interval, 33)
    x = rng.normal(size=(33, spec.state_dim))
    h = hamiltonian(spec, x, grid)
    assert h >= 0
    assert hamiltonian(spec, alpha * x, grid) == pytest.approx(alpha ** 2 * h, rel=1e-12, abs=1e-300)
