"""Boundary-controlled port-Hamiltonian systems and their boundary-port algebra.

A system of order ``N`` on ``[a, b]`` with state dimension ``n`` is

    dx/dt = sum_k P_k d^k/dzeta^k (H(zeta) x),  k = 0..N

and exchanges power through the traces of the effort ``e = H x`` and its
first ``N - 1`` derivatives at both ends.  Trace stacks are ordered as
``phi = (e, e', ..., e^(N-1))`` (``N*n`` entries) and the full trace vector as
``(phi_a; phi_b)``.  Port vectors are ``(f; e)`` with ``N*n`` entries each.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

DEFAULT_TOL = 1e-9
SQRT2 = np.sqrt(2.0)


def default_tol() -> float:
    """Global absolute tolerance, overridable through ``PHS_OBSERVE_TOL``."""
    raw = os.environ.get("PHS_OBSERVE_TOL")
    return float(raw) if raw else DEFAULT_TOL


class StructureError(ValueError):
    """Inputs are dimensionally inconsistent or lack a required structure."""


class InvariantError(ValueError):
    """A mathematical invariant of a well-formed object is violated."""


class PortSplitError(InvariantError):
    """A trace selection does not define a power-conjugate input/output split."""


def _frozen(a, ndim=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise StructureError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Hamiltonian density
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampledDensity:
    """Hamiltonian density given by samples on a grid, linearly interpolated."""

    grid: np.ndarray
    samples: np.ndarray

    def __post_init__(self):
        grid = _frozen(self.grid, 1)
        samples = _frozen(self.samples, 3)
        if samples.shape[0] != grid.size or samples.shape[1] != samples.shape[2]:
            raise StructureError(
                f"samples of shape {samples.shape} do not match grid of size {grid.size}")
        if np.any(np.diff(grid) <= 0):
            raise StructureError("density grid must be strictly increasing")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "samples", samples)

    def __call__(self, zeta):
        zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
        n = self.samples.shape[1]
        flat = self.samples.reshape(self.grid.size, n * n)
        out = np.empty((zeta.size, n * n))
        for j in range(n * n):
            out[:, j] = np.interp(zeta, self.grid, flat[:, j])
        return out.reshape(zeta.size, n, n)


@dataclass(frozen=True)
class ConstantDensity:
    """Spatially constant Hamiltonian density."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix, 2))

    def __call__(self, zeta):
        zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
        return np.broadcast_to(self.matrix, (zeta.size,) + self.matrix.shape).copy()


# ---------------------------------------------------------------------------
# System description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SystemSpec:
    """Continuous BC-PHS: the matrices ``P_0..P_N``, the interval and ``H(zeta)``.

    ``hamiltonian_density`` maps an array of positions to an array of shape
    ``(len(zeta), n, n)``.  Plain matrices are wrapped in :class:`ConstantDensity`.
    """

    P: tuple
    interval: tuple = (0.0, 1.0)
    hamiltonian_density: Callable = None
    coercivity_bounds: tuple | None = None

    def __post_init__(self):
        P = tuple(_frozen(p, 2) for p in self.P)
        if len(P) < 2:
            raise StructureError("need at least P_0 and P_1 (order N >= 1)")
        n = P[0].shape[0]
        for k, p in enumerate(P):
            if p.shape != (n, n):
                raise StructureError(f"P_{k} has shape {p.shape}, expected ({n}, {n})")
        a, b = (float(v) for v in self.interval)
        if not a < b:
            raise StructureError(f"interval must satisfy a < b, got ({a}, {b})")
        dens = self.hamiltonian_density
        if dens is None:
            dens = ConstantDensity(np.eye(n))
        elif not callable(dens):
            dens = ConstantDensity(dens)
        probe = dens(np.array([a, b]))
        if probe.shape != (2, n, n):
            raise StructureError(f"density returns shape {probe.shape[1:]}, expected ({n}, {n})")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "interval", (a, b))
        object.__setattr__(self, "hamiltonian_density", dens)
        if self.coercivity_bounds is not None:
            m, M = (float(v) for v in self.coercivity_bounds)
            object.__setattr__(self, "coercivity_bounds", (m, M))

    @property
    def order(self) -> int:
        return len(self.P) - 1

    @property
    def state_dim(self) -> int:
        return self.P[0].shape[0]

    @property
    def port_dim(self) -> int:
        """``N * n``, the length of ``f``, ``e``, ``u``, ``y`` and of one trace stack."""
        return self.order * self.state_dim

    def density(self, zeta) -> np.ndarray:
        return np.asarray(self.hamiltonian_density(zeta), dtype=float)


@dataclass(frozen=True)
class PortVector:
    f: np.ndarray
    e: np.ndarray
    phi_a: np.ndarray
    phi_b: np.ndarray

    def __post_init__(self):
        for name in ("f", "e", "phi_a", "phi_b"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 1))

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([self.f, self.e])


@dataclass(frozen=True)
class IoConfig:
    """Boundary input/output wiring plus the measured outputs and observer gain.

    ``C_m`` is ``q x Nn`` (it selects from ``y``, which has ``N*n`` entries) and
    ``L`` is ``q x q``.  Both may be omitted for plain plant simulation.
    """

    W_B: np.ndarray
    W_C: np.ndarray
    C_m: np.ndarray | None = None
    L: np.ndarray | None = None

    def __post_init__(self):
        W_B = _frozen(self.W_B, 2)
        W_C = _frozen(self.W_C, 2)
        if W_B.shape != W_C.shape or W_B.shape[1] != 2 * W_B.shape[0]:
            raise StructureError(f"W_B {W_B.shape} and W_C {W_C.shape} must both be Nn x 2Nn")
        object.__setattr__(self, "W_B", W_B)
        object.__setattr__(self, "W_C", W_C)
        if self.C_m is not None:
            C_m = _frozen(np.atleast_2d(self.C_m), 2)
            if C_m.shape[1] != W_B.shape[0] or C_m.shape[0] > W_B.shape[0]:
                raise StructureError(f"C_m has shape {C_m.shape}, expected q x {W_B.shape[0]}")
            object.__setattr__(self, "C_m", C_m)
        if self.L is not None:
            L = _frozen(np.atleast_2d(self.L), 2)
            q = self.C_m.shape[0] if self.C_m is not None else None
            if L.shape[0] != L.shape[1] or (q is not None and L.shape[0] != q):
                raise StructureError(f"L has shape {L.shape}, expected {q} x {q}")
            object.__setattr__(self, "L", L)

    @property
    def port_dim(self) -> int:
        return self.W_B.shape[0]

    def with_measurement(self, C_m, L) -> "IoConfig":
        return replace(self, C_m=C_m, L=L)

    def with_gain(self, L) -> "IoConfig":
        return replace(self, L=L)

    def injection_matrix(self) -> np.ndarray:
        """``C_m^T L C_m``: the observer input correction per unit output error."""
        if self.C_m is None or self.L is None:
            return np.zeros((self.port_dim, self.port_dim))
        return self.C_m.T @ self.L @ self.C_m


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"name": c.name, "passed": c.passed, "margin": c.margin, "detail": c.detail}
                for c in self.checks
            ],
        }


def _sample_grid(spec: SystemSpec, num: int = 201) -> np.ndarray:
    grid = np.linspace(*spec.interval, num)
    dens = spec.hamiltonian_density
    if isinstance(dens, SampledDensity):
        grid = np.union1d(grid, dens.grid)
    return grid


def coercivity_from_samples(spec: SystemSpec, eps: float = 1e-6, num: int = 201) -> tuple:
    """Bounds ``(m, M)`` with ``m I < H < M I`` on the sample grid, padded by ``eps``."""
    Hs = spec.density(_sample_grid(spec, num))
    eig = np.linalg.eigvalsh(0.5 * (Hs + np.swapaxes(Hs, 1, 2)))
    return float(eig.min() * (1 - eps)), float(eig.max() * (1 + eps))


def validate_system(spec: SystemSpec, tol: float | None = None) -> ValidationReport:
    """Check the structural conditions on ``P_k`` and ``H``, reporting margins.

    Positive margins mean the condition holds with room to spare.
    """
    tol = default_tol() if tol is None else tol
    P = spec.P
    N = spec.order
    checks = []

    sym0 = P[0] + P[0].T
    top = float(np.linalg.eigvalsh(sym0).max())
    checks.append(Check("P0 dissipative", top <= tol, tol - top,
                        f"max eigenvalue of P0 + P0^T = {top:.3e}"))

    for k in range(1, N + 1):
        sign = (-1) ** (k - 1)
        dev = float(np.abs(P[k].T - sign * P[k]).max())
        kind = "symmetric" if sign > 0 else "skew-symmetric"
        checks.append(Check(f"P{k} {kind}", dev <= tol, tol - dev,
                            f"max |P{k}^T - ({sign:+d})P{k}| = {dev:.3e}"))

    smin = float(np.linalg.svd(P[N], compute_uv=False).min())
    checks.append(Check(f"P{N} non-singular", smin > tol, smin - tol,
                        f"smallest singular value = {smin:.3e}"
                        + ("" if smin > tol else "; P_N singular")))

    grid = _sample_grid(spec)
    Hs = spec.density(grid)
    asym = float(np.abs(Hs - np.swapaxes(Hs, 1, 2)).max())
    checks.append(Check("H symmetric", asym <= tol, tol - asym,
                        f"max asymmetry over {grid.size} samples = {asym:.3e}"))
    eig = np.linalg.eigvalsh(0.5 * (Hs + np.swapaxes(Hs, 1, 2)))
    lo, hi = float(eig.min()), float(eig.max())
    m, M = spec.coercivity_bounds or coercivity_from_samples(spec)
    ok_bounds = 0 < m < M
    margin = min(lo - m, M - hi)
    checks.append(Check("H coercive", ok_bounds and lo > m and hi < M,
                        margin if ok_bounds else -1.0,
                        f"eigenvalues in [{lo:.6g}, {hi:.6g}], bounds (m, M) = ({m:.6g}, {M:.6g})"))
    return ValidationReport(tuple(checks))


def validate_io(io: IoConfig, tol: float | None = None, mode: str = "observer") -> ValidationReport:
    """Check rank, the three Sigma identities and (in observer mode) ``L + L^T > 0``.

    ``mode="open_loop"`` accepts a zero gain, as used by the conservation checks.
    """
    tol = default_tol() if tol is None else tol
    checks = []
    for name, W in (("W_B", io.W_B), ("W_C", io.W_C)):
        rank = np.linalg.matrix_rank(W)
        checks.append(Check(f"{name} full row rank", rank == W.shape[0],
                            float(rank - W.shape[0]), f"rank {rank} of {W.shape[0]}"))
    for name, r in sigma_residuals(io.W_B, io.W_C).items():
        checks.append(Check(name, r <= tol, tol - r, f"residual norm = {r:.3e}"))
    if io.L is not None and mode == "observer":
        lam = float(np.linalg.eigvalsh(io.L + io.L.T).min())
        checks.append(Check("L + L^T positive definite", lam > tol, lam - tol,
                            f"min eigenvalue = {lam:.3e}"))
    elif io.L is not None and mode == "open_loop":
        lam = float(np.linalg.eigvalsh(io.L + io.L.T).min())
        checks.append(Check("L + L^T positive semi-definite", lam >= -tol, lam + tol,
                            f"min eigenvalue = {lam:.3e}"))
    return ValidationReport(tuple(checks))


# ---------------------------------------------------------------------------
# Port algebra
# ---------------------------------------------------------------------------

def sigma(port_dim: int) -> np.ndarray:
    """The ``2Nn x 2Nn`` matrix ``[[0, I], [I, 0]]``."""
    I = np.eye(port_dim)
    Z = np.zeros((port_dim, port_dim))
    return np.block([[Z, I], [I, Z]])


def sigma_residuals(W_B, W_C) -> dict:
    S = sigma(W_B.shape[0])
    I = np.eye(W_B.shape[0])
    return {
        "W_B Sigma W_B^T = 0": float(np.linalg.norm(W_B @ S @ W_B.T, 2)),
        "W_C Sigma W_C^T = 0": float(np.linalg.norm(W_C @ S @ W_C.T, 2)),
        "W_C Sigma W_B^T = I": float(np.linalg.norm(W_C @ S @ W_B.T - I, 2)),
    }


def build_Q(spec: SystemSpec, sign_index: str = "row") -> np.ndarray:
    """Block matrix pairing the boundary trace stacks.

    Block ``(i, j)`` is ``s * P_{i+j-1}`` for ``i + j <= N + 1`` and zero
    otherwise.  With ``sign_index="row"`` the sign is ``s = (-1)^(i-1)``, which
    makes ``f^T e`` equal the boundary power ``[e^T sum_k P_k d^k e]_a^b`` obtained
    by integration by parts.  ``sign_index="column"`` uses ``(-1)^(j-1)``; the two
    agree for ``N = 1`` and for odd-index blocks, and differ in sign on the
    ``P_2`` blocks, so for ``N = 2`` the column form reverses the power pairing.
    """
    if sign_index not in ("row", "column"):
        raise ValueError("sign_index must be 'row' or 'column'")
    N, n = spec.order, spec.state_dim
    Q = np.zeros((N * n, N * n))
    for i in range(1, N + 1):
        for j in range(1, N + 2 - i):
            s = (-1) ** ((i if sign_index == "row" else j) - 1)
            Q[(i - 1) * n:i * n, (j - 1) * n:j * n] = s * spec.P[i + j - 1]
    return Q


def ports_matrix(spec: SystemSpec, **kw) -> np.ndarray:
    """Linear map ``(phi_a; phi_b) -> (f; e)``."""
    Q = build_Q(spec, **kw)
    I = np.eye(Q.shape[0])
    return np.block([[-Q, Q], [I, I]]) / SQRT2


def traces_matrix(spec: SystemSpec, **kw) -> np.ndarray:
    """Linear map ``(f; e) -> (phi_a; phi_b)``, the explicit inverse of :func:`ports_matrix`."""
    Q = build_Q(spec, **kw)
    smin = np.linalg.svd(Q, compute_uv=False).min()
    if smin <= 1e-14 * max(1.0, np.abs(Q).max()):
        raise InvariantError("Q is singular; P_N must be non-singular")
    Qi = np.linalg.inv(Q)
    I = np.eye(Q.shape[0])
    return np.block([[-Qi, I], [Qi, I]]) / SQRT2


def ports_from_traces(spec: SystemSpec, phi_a, phi_b) -> PortVector:
    phi_a = np.asarray(phi_a, dtype=float)
    phi_b = np.asarray(phi_b, dtype=float)
    if phi_a.shape != (spec.port_dim,) or phi_b.shape != (spec.port_dim,):
        raise StructureError(f"trace stacks must have length {spec.port_dim}")
    Q = build_Q(spec)
    f = Q @ (phi_b - phi_a) / SQRT2
    e = (phi_b + phi_a) / SQRT2
    return PortVector(f, e, phi_a, phi_b)


def traces_from_ports(spec: SystemSpec, ports) -> tuple:
    """Recover ``(phi_a, phi_b)`` from a :class:`PortVector` or a stacked ``(f; e)``."""
    p = ports.stacked if isinstance(ports, PortVector) else np.asarray(ports, dtype=float)
    if p.shape != (2 * spec.port_dim,):
        raise StructureError(f"port vector must have length {2 * spec.port_dim}")
    phi = traces_matrix(spec) @ p
    return phi[:spec.port_dim], phi[spec.port_dim:]


def io_from_ports(io: IoConfig, ports) -> tuple:
    """Return ``(u, y, y_m)``; ``y_m`` is ``None`` when no measurement is configured."""
    p = ports.stacked if isinstance(ports, PortVector) else np.asarray(ports, dtype=float)
    u = io.W_B @ p
    y = io.W_C @ p
    y_m = io.C_m @ y if io.C_m is not None else None
    return u, y, y_m


# A trace selection entry is (end, derivative order, component, sign).
TraceSelection = Sequence[tuple]


def trace_index(spec: SystemSpec, end: str, k: int, comp: int) -> int:
    """Position of ``d^k e_comp`` at ``end`` in the stacked vector ``(phi_a; phi_b)``."""
    n, N = spec.state_dim, spec.order
    if end not in ("a", "b") or not 0 <= k < N or not 0 <= comp < n:
        raise StructureError(f"invalid trace ({end!r}, {k}, {comp}) for N={N}, n={n}")
    return (0 if end == "a" else N * n) + k * n + comp


def selection_matrix(spec: SystemSpec, selection: TraceSelection) -> np.ndarray:
    S = np.zeros((len(selection), 2 * spec.port_dim))
    for row, entry in enumerate(selection):
        end, k, comp = entry[:3]
        sign = entry[3] if len(entry) > 3 else 1.0
        S[row, trace_index(spec, end, k, comp)] = sign
    return S


def derive_io_from_trace_selection(spec: SystemSpec, u_selection: TraceSelection,
                                   y_selection: TraceSelection, tol: float | None = None,
                                   C_m=None, L=None) -> IoConfig:
    """Build ``W_B``, ``W_C`` for inputs/outputs given as signed boundary traces.

    Each selection lists ``N*n`` entries ``(end, k, component, sign)`` meaning
    ``sign * d^k e_component`` evaluated at ``end`` in ``{"a", "b"}``.
    """
    tol = default_tol() if tol is None else tol
    Np = spec.port_dim
    if len(u_selection) != Np or len(y_selection) != Np:
        raise StructureError(f"each selection needs exactly {Np} entries")
    T = traces_matrix(spec)
    W_B = selection_matrix(spec, u_selection) @ T
    W_C = selection_matrix(spec, y_selection) @ T
    for name, W in (("u", W_B), ("y", W_C)):
        if np.linalg.matrix_rank(W) < Np:
            raise PortSplitError(f"{name} selection is rank deficient (repeated or missing trace)")
    res = sigma_residuals(W_B, W_C)
    bad = {k: v for k, v in res.items() if v > max(tol, 1e-10)}
    if bad:
        detail = ", ".join(f"{k}: {v:.3e}" for k, v in bad.items())
        raise PortSplitError(f"selection is not a valid port split ({detail})")
    return IoConfig(W_B, W_C, C_m, L)


# ---------------------------------------------------------------------------
# Energy
# ---------------------------------------------------------------------------

def hamiltonian(spec: SystemSpec, x, grid) -> float:
    """``1/2 int x^T H x`` by the composite trapezoid rule on ``grid``.

    ``x`` has shape ``(len(grid), n)``.
    """
    grid = np.asarray(grid, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and spec.state_dim == 1:
        x = x[:, None]
    if x.shape != (grid.size, spec.state_dim):
        raise StructureError(f"state of shape {x.shape} does not match grid of size {grid.size}")
    Hs = spec.density(grid)
    dens = np.einsum("ki,kij,kj->k", x, Hs, x)
    return 0.5 * float(np.trapezoid(dens, grid))
