"""Structure-preserving staggered-grid finite differences.

Both supported schemes split the state into two fields ``x = (x1, x2)`` with
efforts ``e1 = H1 x1`` and ``e2 = H2 x2``:

* ``staggered_n1`` (order 1): ``dx1/dt = Q de2/dz``, ``dx2/dt = Q^T de1/dz``.
  Field 1 lives on primal nodes, field 2 on cell midpoints.
* ``staggered_partitioned_n2`` (order 2, ``Q1 = 0``): ``dx1/dt = -Q2 d2e2/dz2``,
  ``dx2/dt = Q2 d2e1/dz2``.  Both fields live on primal nodes; each boundary
  node belongs to the field that is *not* imposed there.  Imposed slopes enter
  through ghost nodes.

At every end the inputs must impose all traces of exactly one field.  With
trapezoid weights ``W`` the assembled operator satisfies ``W D + (W D)^T = 0``
exactly, and the output conjugate to the imposed traces is read off the input
map (``y_tau = B_tau^T M_E z``), so ``dH_d/dt = -e^T R_d e + u^T y`` holds to
round-off.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse

from .core import (IoConfig, InvariantError, StructureError, SystemSpec, default_tol,
                   ports_matrix, sigma, trace_index)
from .models import detect_first_order_pairing, detect_partitioned_structure

SCHEMES = ("staggered_n1", "staggered_partitioned_n2")
MIN_NODES_PER_FIELD = 10


@dataclass(frozen=True)
class GridConfig:
    n_d: int
    scheme: str = "auto"
    trace_order: int = 1

    def __post_init__(self):
        if self.n_d <= 0:
            raise ValueError("n_d must be positive")
        if self.scheme not in SCHEMES + ("auto",):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.trace_order not in (1, 2):
            raise ValueError("trace_order must be 1 or 2")


@dataclass(frozen=True)
class Layout:
    """Node positions and quadrature weights of the two fields."""

    scheme: str
    m: int
    M: int
    h: float
    pos1: np.ndarray
    pos2: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    imposed: tuple  # imposed field (1 or 2) at a and at b

    @property
    def n1(self) -> int:
        return self.pos1.size * self.m

    @property
    def n2(self) -> int:
        return self.pos2.size * self.m

    @property
    def n_d(self) -> int:
        return self.n1 + self.n2

    def field_slice(self, f: int) -> slice:
        return slice(0, self.n1) if f == 1 else slice(self.n1, self.n_d)

    def same_as(self, other: "Layout") -> bool:
        return (self.scheme == other.scheme and self.m == other.m and self.M == other.M
                and self.imposed == other.imposed and np.allclose(self.pos1, other.pos1)
                and np.allclose(self.pos2, other.pos2))


@dataclass(frozen=True, eq=False)
class DiscreteSystem:
    """Finite-dimensional LTI realisation ``dz/dt = A z + B u``.

    ``outputs`` maps a channel name to ``(C, D)`` with value ``C z + D u``.
    ``energies`` maps a name to a selector ``S`` with energy ``1/2 (Sz)^T M_E (Sz)``.
    ``balance`` holds ``(energy name, Omega_zz, Omega_zu, Omega_uu)``: the
    supply rate ``z^T Ozz z + 2 z^T Ozu u + u^T Ouu u`` that the monitored energy
    must follow, assembled from dissipation and port pairing rather than from ``A``.
    """

    kind: str
    A: np.ndarray
    B: np.ndarray
    M_E: np.ndarray
    R_d: np.ndarray
    effort: np.ndarray
    outputs: dict
    energies: dict
    balance: tuple
    layout: Layout
    spec: SystemSpec
    io: IoConfig
    trace_order: int = 1
    meta: dict = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def C(self) -> np.ndarray:
        return self.outputs["y"][0]

    @property
    def D(self) -> np.ndarray:
        return self.outputs["y"][1]

    def output(self, name: str, z, u=None) -> np.ndarray:
        C, D = self.outputs[name]
        val = np.asarray(z) @ C.T
        if u is not None and D.size:
            val = val + np.asarray(u) @ D.T
        return val

    def energy(self, name: str, z) -> np.ndarray:
        """Energy along one state (1-d) or a stack of states (2-d, one per row)."""
        S = self.energies[name]
        w = np.asarray(z) @ S.T
        return 0.5 * np.einsum("...i,ij,...j->...", w, self.M_E, w)

    def balance_operator_residual(self) -> float:
        """Largest spectral-norm residual of the assembled power-balance identity."""
        name, Ozz, Ozu, Ouu = self.balance
        S = self.energies[name]
        Mbar = S.T @ self.M_E @ S
        MA = Mbar @ self.A
        r1 = np.linalg.norm(0.5 * (MA + MA.T) - Ozz, 2)
        r2 = np.linalg.norm(Mbar @ self.B - 2 * Ozu, 2) if self.B.size else 0.0
        r3 = np.linalg.norm(0.5 * (Ouu + Ouu.T), 2) if Ouu.size else 0.0
        return float(max(r1, r2, r3))

    def supply(self, z, u=None) -> np.ndarray:
        _, Ozz, Ozu, Ouu = self.balance
        z = np.asarray(z)
        p = np.einsum("...i,ij,...j->...", z, Ozz, z)
        if u is not None and Ozu.size:
            u = np.asarray(u)
            p = p + 2 * np.einsum("...i,ij,...j->...", z, Ozu, u)
            p = p + np.einsum("...i,ij,...j->...", u, Ouu, u)
        return p


# ---------------------------------------------------------------------------
# Causality detection
# ---------------------------------------------------------------------------

def _field_traces(spec: SystemSpec, m: int, end: str, f: int) -> list:
    """Trace indices of all derivatives of field ``f`` at ``end``, ordered (k, component)."""
    comps = range(0, m) if f == 1 else range(m, 2 * m)
    return [trace_index(spec, end, k, c) for k in range(spec.order) for c in comps]


def _causality(spec: SystemSpec, io: IoConfig, m: int, tol: float):
    U = io.W_B @ ports_matrix(spec)
    total = 2 * spec.port_dim
    for fa, fb in itertools.product((1, 2), repeat=2):
        imp = _field_traces(spec, m, "a", fa) + _field_traces(spec, m, "b", fb)
        free = [i for i in range(total) if i not in imp]
        if np.abs(U[:, free]).max(initial=0.0) > tol * max(1.0, np.abs(U).max()):
            continue
        U_imp = U[:, imp]
        if np.linalg.matrix_rank(U_imp) < U_imp.shape[0]:
            continue
        return (fa, fb), imp, free, U_imp
    raise StructureError("inputs must impose all traces of one field at each end "
                         "(e.g. clamped/free); this wiring is not supported by the discretizer")


# ---------------------------------------------------------------------------
# Stencils
# ---------------------------------------------------------------------------

def _weights(positions: np.ndarray, h: float, a: float, b: float) -> np.ndarray:
    w = np.full(positions.size, h)
    w[np.isclose(positions, a)] = h / 2
    w[np.isclose(positions, b)] = h / 2
    return w


def _assemble_n2(M, h, imposed):
    """Scalar second-difference operators for the order-2 scheme.

    Returns node index lists, ``L1`` (field-1 rows, field-2 columns), ``L2``
    and the affine parts ``T1``, ``T2`` acting on the scalar imposed-trace vector
    ``(value_a, slope_a, value_b, slope_b)``.
    """
    nodes = {f: [i for i in range(M + 1)
                 if not (i == 0 and imposed[0] == f) and not (i == M and imposed[1] == f)]
             for f in (1, 2)}

    def ext(g):
        # Rows: node j = -1..M+1 of field g as a combination of [states of g; tau].
        idx = {j: k for k, j in enumerate(nodes[g])}
        ng = len(nodes[g])
        E = {}
        for j in range(-1, M + 2):
            row = np.zeros(ng + 4)
            if j in idx:
                row[idx[j]] = 1.0
            elif j == 0 and imposed[0] == g:
                row[ng + 0] = 1.0
            elif j == M and imposed[1] == g:
                row[ng + 2] = 1.0
            elif j == -1 and imposed[0] == g:
                row[idx[1]] = 1.0
                row[ng + 1] = -2 * h
            elif j == M + 1 and imposed[1] == g:
                row[idx[M - 1]] = 1.0
                row[ng + 3] = 2 * h
            else:
                row[:] = np.nan
            E[j] = row
        return E

    ops = {}
    for f, g in ((1, 2), (2, 1)):
        E = ext(g)
        ng = len(nodes[g])
        rows = []
        for i in nodes[f]:
            rows.append((E[i - 1] - 2 * E[i] + E[i + 1]) / h ** 2)
        op = np.array(rows)
        if np.isnan(op).any():
            raise InvariantError("second-difference stencil references an undefined node")
        ops[f] = (op[:, :ng], op[:, ng:])
    return nodes, ops


def _assemble_n1(M, h, imposed):
    """First-difference operators for the order-1 scheme (field 2 on midpoints)."""
    nodes1 = [i for i in range(M + 1)
              if not (i == 0 and imposed[0] == 1) and not (i == M and imposed[1] == 1)]
    idx1 = {j: k for k, j in enumerate(nodes1)}
    n1, n2 = len(nodes1), M
    # tau = (imposed value at a, imposed value at b)
    D1 = np.zeros((n1, n2))
    T1 = np.zeros((n1, 2))
    for k, i in enumerate(nodes1):
        if i == 0:
            D1[k, 0] = 2 / h
            T1[k, 0] = -2 / h
        elif i == M:
            D1[k, M - 1] = -2 / h
            T1[k, 1] = 2 / h
        else:
            D1[k, i] = 1 / h
            D1[k, i - 1] = -1 / h
    D2 = np.zeros((n2, n1))
    T2 = np.zeros((n2, 2))
    for j in range(M):
        for node, sgn in ((j + 1, 1.0), (j, -1.0)):
            if node in idx1:
                D2[j, idx1[node]] += sgn / h
            elif node == 0:
                T2[j, 0] += sgn / h
            else:
                T2[j, 1] += sgn / h
    return nodes1, (D1, T1), (D2, T2)


def _bd(blocks) -> np.ndarray:
    sizes = [b.shape[0] for b in blocks]
    out = np.zeros((sum(sizes), sum(sizes)))
    o = 0
    for b in blocks:
        k = b.shape[0]
        out[o:o + k, o:o + k] = b
        o += k
    return out


# ---------------------------------------------------------------------------
# Discretization
# ---------------------------------------------------------------------------

def _resolve_scheme(spec: SystemSpec, grid: GridConfig, tol: float):
    scheme = grid.scheme
    if scheme == "auto":
        scheme = "staggered_n1" if spec.order == 1 else "staggered_partitioned_n2"
    if scheme == "staggered_n1":
        if spec.order != 1:
            raise StructureError("staggered_n1 requires an order-1 system")
        Q = detect_first_order_pairing(spec, tol)
        if Q is None:
            raise StructureError("staggered_n1 requires P_1 = [[0, Q], [Q^T, 0]] and block-diagonal H")
        return scheme, Q
    if spec.order != 2:
        raise StructureError("staggered_partitioned_n2 requires an order-2 system")
    part = detect_partitioned_structure(spec, tol)
    if part is None:
        raise StructureError("staggered_partitioned_n2 requires the partitioned two-field structure")
    if np.abs(part.Q1).max() > tol:
        raise StructureError("staggered_partitioned_n2 supports Q1 = 0 only")
    return scheme, part.Q2


def discretize(spec: SystemSpec, io: IoConfig, grid: GridConfig | int) -> DiscreteSystem:
    """Assemble the plant realisation on a staggered grid."""
    if isinstance(grid, int):
        grid = GridConfig(grid)
    tol = default_tol()
    scheme, Qc = _resolve_scheme(spec, grid, tol)
    n, N = spec.state_dim, spec.order
    m = n // 2
    P0 = spec.P[0]
    if np.abs(P0[:m, m:]).max() > tol or np.abs(P0[m:, :m]).max() > tol:
        raise StructureError("P_0 must be block diagonal with respect to the two fields")
    imposed, imp_idx, free_idx, U_imp = _causality(spec, io, m, 1e-10)
    a, b = spec.interval
    nodes_total = grid.n_d // m
    if nodes_total * m != grid.n_d:
        raise StructureError(f"n_d = {grid.n_d} is not a multiple of the field size {m}")

    if scheme == "staggered_partitioned_n2":
        if nodes_total % 2:
            raise StructureError(f"n_d = {grid.n_d} must be even for the two-field scheme")
        M = nodes_total // 2
        h = (b - a) / M
        nodes, ops = _assemble_n2(M, h, imposed)
        pos1 = a + h * np.array(nodes[1], dtype=float)
        pos2 = a + h * np.array(nodes[2], dtype=float)
        (L1, T1), (L2, T2) = ops[1], ops[2]
        # dx1/dt = -Q2 (L1 e2 + T1 tau), dx2/dt = Q2 (L2 e1 + T2 tau)
        op12, aff1 = -np.kron(L1, Qc), -np.kron(T1, Qc)
        op21, aff2 = np.kron(L2, Qc), np.kron(T2, Qc)
    else:
        k1 = sum(1 for f in imposed if f == 1)
        twoM = nodes_total - 1 + k1
        if twoM % 2:
            raise StructureError(f"n_d = {grid.n_d} is incompatible with this boundary causality")
        M = twoM // 2
        h = (b - a) / M
        nodes1, (D1, T1), (D2, T2) = _assemble_n1(M, h, imposed)
        pos1 = a + h * np.array(nodes1, dtype=float)
        pos2 = a + h * (np.arange(M) + 0.5)
        op12, aff1 = np.kron(D1, Qc), np.kron(T1, Qc)
        op21, aff2 = np.kron(D2, Qc.T), np.kron(T2, Qc.T)
    if min(pos1.size, pos2.size) < MIN_NODES_PER_FIELD:
        raise StructureError(f"n_d = {grid.n_d} too small: need at least "
                             f"{MIN_NODES_PER_FIELD} nodes per field")

    w1 = _weights(pos1, h, a, b)
    w2 = _weights(pos2, h, a, b)
    layout = Layout(scheme, m, M, h, pos1, pos2, w1, w2, imposed)
    n1, n2 = layout.n1, layout.n2
    n_d = n1 + n2

    # kron(T, Q) expects tau ordered (slot, component); the imposed-trace list
    # from _causality is ordered (end, k, component), which is the same order.
    D_e = np.zeros((n_d, n_d))
    D_e[:n1, n1:] = op12
    D_e[n1:, :n1] = op21
    B_tau = np.vstack([aff1, aff2])

    H1 = spec.density(pos1)[:, :m, :m]
    H2 = spec.density(pos2)[:, m:, m:]
    effort = _bd(list(H1) + list(H2))
    Wvec = np.concatenate([np.repeat(w1, m), np.repeat(w2, m)])
    W = np.diag(Wvec)

    skew = W @ D_e
    if np.abs(skew + skew.T).max() > 1e-9 * max(1.0, np.abs(skew).max()):
        raise InvariantError("assembled interconnection is not skew in the energy inner product")

    P0blk = _bd([P0[:m, :m]] * pos1.size + [P0[m:, m:]] * pos2.size)
    A = (D_e + P0blk) @ effort
    M_E = W @ effort
    M_E = 0.5 * (M_E + M_E.T)
    R_d = -W @ (0.5 * (P0blk + P0blk.T))

    # Output conjugate to the imposed traces, then free traces and port outputs.
    C_tau = B_tau.T @ M_E
    Pm = ports_matrix(spec)
    Xi = 0.5 * Pm.T @ sigma(spec.port_dim) @ Pm
    Pi = 2 * Xi[np.ix_(imp_idx, free_idx)]
    if (np.abs(Xi[np.ix_(imp_idx, imp_idx)]).max() > 1e-10
            or np.abs(Xi[np.ix_(free_idx, free_idx)]).max() > 1e-10):
        raise StructureError("boundary power is not a pure pairing of imposed and free traces")
    total = 2 * spec.port_dim
    S_imp = np.eye(total)[imp_idx]
    S_free = np.eye(total)[free_idx]
    U_inv = np.linalg.inv(U_imp)
    trace_z = S_free.T @ np.linalg.solve(Pi, C_tau)
    trace_u = S_imp.T @ U_inv
    Y = io.W_C @ Pm
    C = Y @ trace_z
    D = Y @ trace_u
    B = B_tau @ U_inv

    if grid.trace_order == 2:
        trace_z = _second_order_traces(spec, layout, free_idx, trace_z, effort)

    outputs = {"y": (C, D), "traces": (trace_z, trace_u),
               "u": (np.zeros((spec.port_dim, n_d)), np.eye(spec.port_dim))}
    if io.C_m is not None:
        outputs["y_m"] = (io.C_m @ C, io.C_m @ D)
    Ozz = -effort.T @ R_d @ effort
    Ozz = 0.5 * (Ozz + Ozz.T)
    balance = ("H", Ozz, 0.5 * C.T, D)
    return DiscreteSystem("plant", A, B, M_E, R_d, effort, outputs, {"H": np.eye(n_d)},
                          balance, layout, spec, io, grid.trace_order,
                          {"imposed_traces": imp_idx, "free_traces": free_idx})


def _second_order_traces(spec, layout, free_idx, trace_z, effort):
    """Replace free-trace rows by second-order one-sided stencils on the nodal efforts."""
    m, h, N = layout.m, layout.h, spec.order
    a, b = spec.interval
    out = trace_z.copy()
    half = spec.port_dim
    for row in free_idx:
        end = "a" if row < half else "b"
        local = row - (0 if end == "a" else half)
        k, comp = divmod(local, spec.state_dim)
        f = 1 if comp < m else 2
        c = comp % m
        pos = layout.pos1 if f == 1 else layout.pos2
        base = 0 if f == 1 else layout.n1
        order = np.argsort(np.abs(pos - (a if end == "a" else b)))[:3]
        order = np.sort(order) if end == "a" else np.sort(order)[::-1]
        idx = [base + j * m + c for j in order]
        e_rows = effort[idx]
        dist = np.abs(pos[order] - (a if end == "a" else b))
        sgn = 1.0 if end == "a" else -1.0
        if k == 0:
            if dist[0] < 1e-12 * h:
                w = np.array([1.0, 0.0, 0.0])
            else:  # midpoints at h/2, 3h/2
                w = np.array([1.5, -0.5, 0.0])
        else:
            if N == 2 and dist[0] < 1e-12 * h:
                w = sgn * np.array([-1.5, 2.0, -0.5]) / h
            else:
                continue
        out[row] = w @ e_rows
    return out


# ---------------------------------------------------------------------------
# Observer coupling and error dynamics
# ---------------------------------------------------------------------------

def _feedback(sys: DiscreteSystem, K: np.ndarray) -> np.ndarray:
    """``F`` with ``u_hat - u = F (z - z_hat)`` for the injection ``K (y - y_hat)``."""
    C, D = sys.C, sys.D
    I = np.eye(K.shape[0])
    return np.linalg.solve(I + K @ D, K @ C)


def _check_gain(io: IoConfig, open_loop: bool):
    if io.C_m is None or io.L is None:
        if open_loop:
            return
        raise StructureError("observer coupling needs C_m and L")
    lam = np.linalg.eigvalsh(io.L + io.L.T).min()
    tol = default_tol()
    if open_loop:
        if lam < -tol:
            raise InvariantError(f"L + L^T must be positive semi-definite, min eigenvalue {lam:.3e}")
    elif lam <= tol:
        raise InvariantError(f"L + L^T must be positive definite, min eigenvalue {lam:.3e}; "
                             "pass open_loop=True for the conservation mode")


def error_system(plant_spec: SystemSpec, io: IoConfig, grid: GridConfig | int,
                 open_loop: bool = False) -> DiscreteSystem:
    """Autonomous error dynamics with boundary feedback ``u~ = -C_m^T L C_m y~``."""
    _check_gain(io, open_loop)
    plant = discretize(plant_spec, io, grid)
    return error_from_plant(plant, io, open_loop)


def error_from_plant(plant: DiscreteSystem, io: IoConfig, open_loop: bool = False) -> DiscreteSystem:
    _check_gain(io, open_loop)
    K = io.injection_matrix()
    F = _feedback(plant, K)
    C, D = plant.C, plant.D
    n_d = plant.n_states
    A = plant.A - plant.B @ F
    y = C - D @ F
    tz, tu = plant.outputs["traces"]
    none = np.zeros((0,))
    outputs = {"y": (y, none.reshape(y.shape[0], 0)),
               "u": (-F, none.reshape(F.shape[0], 0)),
               "traces": (tz - tu @ F, none.reshape(tz.shape[0], 0))}
    if io.C_m is not None:
        outputs["y_m"] = (io.C_m @ y, none.reshape(io.C_m.shape[0], 0))
    Ozz = -plant.effort.T @ plant.R_d @ plant.effort + (-F).T @ y
    Ozz = 0.5 * (Ozz + Ozz.T)
    balance = ("H_tilde", Ozz, np.zeros((n_d, 0)), np.zeros((0, 0)))
    return DiscreteSystem("error", A, np.zeros((n_d, 0)), plant.M_E, plant.R_d, plant.effort,
                          outputs, {"H_tilde": np.eye(n_d)}, balance, plant.layout,
                          plant.spec, io, plant.trace_order, dict(plant.meta))


def couple_plant_observer(plant: DiscreteSystem, observer: DiscreteSystem, io: IoConfig,
                          open_loop: bool = False) -> DiscreteSystem:
    """Stack plant and observer with ``u_hat = u + C_m^T L (y_m - y_m_hat)``.

    State is ``(z, z_hat)``; the input is the plant input ``u``.
    """
    if (plant.kind != "plant" or observer.kind != "plant"
            or not plant.layout.same_as(observer.layout)
            or not np.allclose(plant.A, observer.A) or not np.allclose(plant.B, observer.B)):
        raise StructureError("plant and observer must share spec and grid (grid mismatch)")
    _check_gain(io, open_loop)
    K = io.injection_matrix()
    F = _feedback(plant, K)
    A, B, C, D = plant.A, plant.B, plant.C, plant.D
    n_d, nu = plant.n_states, plant.n_inputs
    Z = np.zeros((n_d, n_d))
    Ac = np.block([[A, Z], [B @ F, A - B @ F]])
    Bc = np.vstack([B, B])
    tz, tu = plant.outputs["traces"]
    yhat_z = np.hstack([D @ F, C - D @ F])
    err_y = np.hstack([C - D @ F, -(C - D @ F)])
    err_t = np.hstack([tz - tu @ F, -(tz - tu @ F)])
    outputs = {
        "y": (np.hstack([C, np.zeros_like(C)]), D),
        "y_hat": (yhat_z, D),
        "u_hat": (np.hstack([F, -F]), np.eye(nu)),
        "traces": (np.hstack([tz, np.zeros_like(tz)]), tu),
        "traces_hat": (np.hstack([tu @ F, tz - tu @ F]), tu),
        "y_error": (err_y, np.zeros_like(D)),
        "traces_error": (err_t, np.zeros_like(tu)),
    }
    if io.C_m is not None:
        Cm = io.C_m
        for name in ("y", "y_hat", "y_error"):
            Cz, Du = outputs[name]
            key = {"y": "y_m", "y_hat": "y_m_hat", "y_error": "y_m_error"}[name]
            outputs[key] = (Cm @ Cz, Cm @ Du)
    I = np.eye(n_d)
    energies = {"H": np.hstack([I, Z]), "H_hat": np.hstack([Z, I]), "H_tilde": np.hstack([I, -I])}
    err = error_from_plant(plant, io, open_loop)
    Se = energies["H_tilde"]
    balance = ("H_tilde", Se.T @ err.balance[1] @ Se, np.zeros((2 * n_d, nu)), np.zeros((nu, nu)))
    return DiscreteSystem("coupled", Ac, Bc, plant.M_E, plant.R_d, plant.effort, outputs,
                          energies, balance, plant.layout, plant.spec, io, plant.trace_order,
                          dict(plant.meta))


def observer_pair(spec: SystemSpec, io: IoConfig, grid: GridConfig | int,
                  open_loop: bool = False) -> DiscreteSystem:
    """Discretize once and couple the plant with an identical observer copy."""
    plant = discretize(spec, io, grid)
    return couple_plant_observer(plant, plant, io, open_loop)


# ---------------------------------------------------------------------------
# Helpers on discrete systems
# ---------------------------------------------------------------------------

def nodal_state(sys: DiscreteSystem, spec: SystemSpec, profile) -> np.ndarray:
    """Sample ``profile(zeta) -> (len(zeta), n)`` at the node positions of each field."""
    lay = sys.layout
    m = lay.m
    x1 = np.asarray(profile(lay.pos1), dtype=float)[:, :m]
    x2 = np.asarray(profile(lay.pos2), dtype=float)[:, m:]
    return np.concatenate([x1.ravel(), x2.ravel()])


def state_from_efforts(sys: DiscreteSystem, effort_profile) -> np.ndarray:
    """Nodal state whose efforts equal ``effort_profile(zeta) -> (len(zeta), n)``."""
    e = nodal_state(sys, sys.spec, effort_profile)
    return np.linalg.solve(sys.effort, e)


def export_matrices(sys: DiscreteSystem, directory, prefix: str = "") -> list:
    """Write the system matrices as MatrixMarket text files; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    mats = {"A": sys.A, "B": sys.B, "M_E": sys.M_E, "R_d": sys.R_d, "effort": sys.effort}
    for name, (Cz, Du) in sys.outputs.items():
        mats[f"C_{name}"] = Cz
        if Du.size:
            mats[f"D_{name}"] = Du
    paths = []
    for name, mat in mats.items():
        path = directory / f"{prefix}{name}.mtx"
        if mat.size == 0:
            continue
        scipy.io.mmwrite(str(path), scipy.sparse.coo_matrix(mat), precision=17)
        paths.append(path)
    return paths
