"""Ready-made systems: the Euler-Bernoulli beam and a 1D wave equation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (IoConfig, SystemSpec, coercivity_from_samples, default_tol,
                   derive_io_from_trace_selection, validate_system, InvariantError,
                   StructureError)

# Beam traces are (e1, e2, e1', e2') at each end: e1 = velocity, e2 = bending moment.
BEAM_U_SELECTION = (("a", 0, 0, 1.0), ("a", 1, 0, 1.0), ("b", 0, 1, 1.0), ("b", 1, 1, 1.0))
BEAM_Y_SELECTION = (("a", 1, 1, 1.0), ("a", 0, 1, -1.0), ("b", 1, 0, 1.0), ("b", 0, 0, -1.0))

# Wave traces are (e1, e2): e1 = velocity, e2 = force.
WAVE_U_SELECTION = (("a", 0, 0, 1.0), ("b", 0, 1, 1.0))
WAVE_Y_SELECTION = (("a", 0, 1, -1.0), ("b", 0, 0, 1.0))


def _as_field(v) -> Callable:
    if callable(v):
        return lambda z: np.broadcast_to(np.asarray(v(np.asarray(z, dtype=float)), dtype=float),
                                         np.shape(z)).astype(float)
    value = float(v)
    return lambda z: np.full(np.shape(z), value)


@dataclass(frozen=True)
class BeamParams:
    """Physical parameters of a beam on ``[0, 1]``.

    ``rho`` and ``EI`` are constants or vectorised callables of position.
    ``w0``/``v0`` are the initial deflection and velocity, used only for
    reporting and for building initial states.
    """

    rho: object = 1.0
    EI: object = 1.0
    d: float = 0.2
    w0: Callable | None = None
    v0: Callable | None = None

    def __post_init__(self):
        if self.d < 0:
            raise ValueError(f"damping must be non-negative, got {self.d}")
        grid = np.linspace(0.0, 1.0, 201)
        for name in ("rho", "EI"):
            vals = _as_field(getattr(self, name))(grid)
            if np.any(vals <= 0):
                raise ValueError(f"{name} must be strictly positive on [0, 1]")

    def rho_at(self, z):
        return _as_field(self.rho)(z)

    def EI_at(self, z):
        return _as_field(self.EI)(z)


@dataclass(frozen=True)
class MeasurementPreset:
    tag: str
    rows: tuple
    gains: tuple

    def __post_init__(self):
        if len(set(self.rows)) != len(self.rows):
            raise ValueError("measurement rows must be distinct")
        if len(self.gains) != len(self.rows) or any(g <= 0 for g in self.gains):
            raise ValueError("need one strictly positive gain per measured row")

    def C_m(self, port_dim: int) -> np.ndarray:
        return np.eye(port_dim)[list(self.rows)]

    def L(self) -> np.ndarray:
        return np.diag(self.gains)


# y = (e2'(0), -e2(0), e1'(1), -e1(1)); rows are 0-based.
THREE_BOUNDARY = MeasurementPreset("three_boundary", (1, 2, 3), (1.0, 0.1, 1.0))
TWO_BOUNDARY = MeasurementPreset("two_boundary", (2, 3), (0.1, 1.0))
MEASUREMENTS = {p.tag: p for p in (THREE_BOUNDARY, TWO_BOUNDARY)}

# Observer gains (l1, l2) of the two-measurement beam, by damping regime.
REGIME_DESIGNS = {
    1: (0.03, 0.30),
    2: (0.10, 1.00),
    3: (0.20, 2.00),
}


class _BeamDensity:
    def __init__(self, params: BeamParams):
        self.params = params

    def __call__(self, zeta):
        z = np.atleast_1d(np.asarray(zeta, dtype=float))
        out = np.zeros((z.size, 2, 2))
        out[:, 0, 0] = 1.0 / self.params.rho_at(z)
        out[:, 1, 1] = self.params.EI_at(z)
        return out


def beam_spec(params: BeamParams | None = None, measurement: str | MeasurementPreset | None = "two_boundary",
              gains=None, coercivity_eps: float = 1e-6) -> tuple:
    """Euler-Bernoulli beam, clamped at 0 and free at 1, as ``(SystemSpec, IoConfig)``.

    State ``x = (rho dw/dt, d2w/dzeta2)``; inputs are the velocity and its slope at
    the clamped end and the moment and its slope at the free end.
    """
    params = params or BeamParams()
    P0 = np.array([[-params.d, 0.0], [0.0, 0.0]])
    P1 = np.zeros((2, 2))
    P2 = np.array([[0.0, -1.0], [1.0, 0.0]])
    dens = _BeamDensity(params)
    spec = SystemSpec((P0, P1, P2), (0.0, 1.0), dens)
    spec = SystemSpec(spec.P, spec.interval, dens, coercivity_from_samples(spec, coercivity_eps))
    report = validate_system(spec)
    if not report.ok:
        raise InvariantError("beam parameters violate system conditions: "
                             + "; ".join(c.detail for c in report.failed()))
    C_m = L = None
    if measurement is not None:
        preset = MEASUREMENTS[measurement] if isinstance(measurement, str) else measurement
        C_m = preset.C_m(spec.port_dim)
        L = preset.L() if gains is None else np.atleast_2d(np.diag(gains) if np.ndim(gains) == 1 else gains)
    io = derive_io_from_trace_selection(spec, BEAM_U_SELECTION, BEAM_Y_SELECTION, C_m=C_m, L=L)
    return spec, io


def wave_spec(c: float = 1.0, interval=(0.0, 1.0), C_m=None, L=None) -> tuple:
    """Lossless wave equation with velocity imposed at ``a`` and force imposed at ``b``.

    Defaults to measuring both outputs with unit gain.
    """
    if c <= 0:
        raise ValueError(f"wave speed must be positive, got {c}")
    P0 = np.zeros((2, 2))
    P1 = np.array([[0.0, 1.0], [1.0, 0.0]])
    spec = SystemSpec((P0, P1), interval, np.diag([1.0, c * c]))
    C_m = np.eye(2) if C_m is None else C_m
    L = np.eye(np.shape(C_m)[0]) if L is None else L
    io = derive_io_from_trace_selection(spec, WAVE_U_SELECTION, WAVE_Y_SELECTION, C_m=C_m, L=L)
    return spec, io


@dataclass(frozen=True)
class PartitionedStructure:
    """Blocks of a two-field order-2 system: ``P_1 = [[0, Q1], [Q1, 0]]``,
    ``P_2 = [[0, -Q2], [Q2, 0]]`` and ``H = diag(H1, H2)``."""

    Q1: np.ndarray
    Q2: np.ndarray
    H1: Callable
    H2: Callable


def _block_diagonal(spec: SystemSpec, m: int, tol: float) -> bool:
    grid = np.linspace(*spec.interval, 101)
    Hs = spec.density(grid)
    return float(np.abs(Hs[:, :m, m:]).max(initial=0.0)) <= tol and \
        float(np.abs(Hs[:, m:, :m]).max(initial=0.0)) <= tol


def _split_density(spec: SystemSpec, m: int) -> tuple:
    def H1(z):
        return spec.density(z)[:, :m, :m]

    def H2(z):
        return spec.density(z)[:, m:, m:]
    return H1, H2


def detect_partitioned_structure(spec: SystemSpec, tol: float | None = None):
    """Return :class:`PartitionedStructure` if the system splits into two fields, else ``None``."""
    tol = default_tol() if tol is None else tol
    n = spec.state_dim
    if spec.order != 2 or n % 2:
        return None
    m = n // 2
    P1, P2 = spec.P[1], spec.P[2]
    Q1 = P1[:m, m:]
    Q2 = P2[m:, :m]
    if np.abs(P1[:m, :m]).max() > tol or np.abs(P1[m:, m:]).max() > tol:
        return None
    if np.abs(P1[m:, :m] - Q1).max() > tol or np.abs(Q1 - Q1.T).max() > tol:
        return None
    if np.abs(P2[:m, :m]).max() > tol or np.abs(P2[m:, m:]).max() > tol:
        return None
    if np.abs(P2[:m, m:] + Q2).max() > tol or np.abs(Q2 - Q2.T).max() > tol:
        return None
    if np.linalg.svd(Q2, compute_uv=False).min() <= tol:
        return None
    if not _block_diagonal(spec, m, tol):
        return None
    H1, H2 = _split_density(spec, m)
    return PartitionedStructure(Q1.copy(), Q2.copy(), H1, H2)


def detect_first_order_pairing(spec: SystemSpec, tol: float | None = None):
    """For ``N = 1``: return ``Q`` if ``P_1 = [[0, Q], [Q^T, 0]]`` and ``H`` is block diagonal."""
    tol = default_tol() if tol is None else tol
    n = spec.state_dim
    if spec.order != 1 or n % 2:
        return None
    m = n // 2
    P1 = spec.P[1]
    if np.abs(P1[:m, :m]).max() > tol or np.abs(P1[m:, m:]).max() > tol:
        return None
    Q = P1[:m, m:]
    if np.abs(P1[m:, :m] - Q.T).max() > tol:
        return None
    if not _block_diagonal(spec, m, tol):
        return None
    return Q.copy()


def preset(name: str, **kwargs) -> tuple:
    """Look up a named model: ``beam-3m``, ``beam-2m`` or ``wave``."""
    if name == "beam-3m":
        return beam_spec(kwargs.pop("params", None), "three_boundary", **kwargs)
    if name == "beam-2m":
        return beam_spec(kwargs.pop("params", None), "two_boundary", **kwargs)
    if name == "wave":
        return wave_spec(**kwargs)
    raise StructureError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")


PRESETS = ("beam-3m", "beam-2m", "wave")
