import numpy as np
import pytest
from hypothesis import given, strategies as st

from bcphs.core import StructureError, SystemSpec, io_from_ports, sigma_residuals, validate_system
from bcphs.models import (MEASUREMENTS, BeamParams, MeasurementPreset, beam_spec,
                          detect_partitioned_structure, preset, wave_spec)


def test_unitary_beam():
    spec, io = beam_spec(BeamParams(d=0.2))
    assert spec.order == 2 and spec.state_dim == 2
    assert np.array_equal(spec.P[0], [[-0.2, 0], [0, 0]])
    assert np.array_equal(spec.P[2], [[0, -1], [1, 0]])
    assert validate_system(spec).ok
    part = detect_partitioned_structure(spec)
    assert part is not None
    assert np.allclose(part.Q1, 0) and np.allclose(part.Q2, 1)


def test_lossless_beam():
    spec, _ = beam_spec(BeamParams(d=0.0))
    assert not spec.P[0].any()
    assert validate_system(spec).ok


def test_varying_density_bounds():
    spec, _ = beam_spec(BeamParams(rho=lambda z: 1 + z), coercivity_eps=1e-6)
    assert np.allclose(spec.density(np.array([0.0, 1.0])),
                       [np.diag([1.0, 1.0]), np.diag([0.5, 1.0])])
    m, M = spec.coercivity_bounds
    assert m == pytest.approx(0.5 * (1 - 1e-6), rel=1e-12)
    assert M == pytest.approx(1 + 1e-6, rel=1e-12)


def test_bad_params():
    with pytest.raises(ValueError):
        BeamParams(d=-1.0)
    with pytest.raises(ValueError):
        BeamParams(rho=lambda z: z - 0.5)
    with pytest.raises(ValueError):
        MeasurementPreset("x", (1, 1), (1.0, 1.0))
    with pytest.raises(ValueError):
        MeasurementPreset("x", (1, 2), (1.0, 0.0))


def test_measurement_presets():
    _, io3 = preset("beam-3m")
    _, io2 = preset("beam-2m")
    assert io3.C_m.shape == (3, 4) and io2.C_m.shape == (2, 4)
    assert np.array_equal(io2.C_m, np.eye(4)[[2, 3]])
    assert np.array_equal(io2.L, np.diag([0.1, 1.0]))
    for p in MEASUREMENTS.values():
        assert all(g > 0 for g in p.gains)
    with pytest.raises(StructureError):
        preset("plate")


def test_wave():
    spec, io = wave_spec(2.0)
    assert spec.order == 1
    assert np.allclose(spec.density(0.3)[0], np.diag([1.0, 4.0]))
    assert all(r < 1e-12 for r in sigma_residuals(io.W_B, io.W_C).values())
    u, y, y_m = io_from_ports(io, np.zeros(4))
    assert not u.any() and not y.any() and not y_m.any()
    with pytest.raises(ValueError):
        wave_spec(0.0)


def test_partition_detection_negative():
    spec, _ = beam_spec()
    # off-diagonal density
    coupled = SystemSpec(spec.P, spec.interval, np.array([[1.0, 0.3], [0.3, 1.0]]))
    assert detect_partitioned_structure(coupled) is None
    # Q2 = 0 is not invertible; P_2 = 0 here but the order stays 2
    flat = SystemSpec((spec.P[0], spec.P[1], np.zeros((2, 2))), spec.interval)
    assert detect_partitioned_structure(flat) is None
    # swapping the two state blocks is still partitioned, with Q2 = -1
    perm = np.array([[0, 1], [1, 0]])
    swapped = SystemSpec(tuple(perm @ p @ perm for p in spec.P), spec.interval,
                         lambda z: np.array([perm @ h @ perm for h in spec.density(z)]))
    part = detect_partitioned_structure(swapped)
    assert part is not None and np.allclose(part.Q2, -1)
    wave, _ = wave_spec()
    assert detect_partitioned_structure(wave) is None


@given(st.floats(0.05, 20), st.floats(0.05, 20), st.floats(0, 5))
def test_beam_always_valid_and_partitioned(rho, EI, d):
    spec, io = beam_spec(BeamParams(rho, EI, d))
    assert validate_system(spec).ok
    assert detect_partitioned_structure(spec) is not None
    assert all(r < 1e-10 for r in sigma_residuals(io.W_B, io.W_C).values())
