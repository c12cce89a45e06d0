"""Grounded FEM solver for the contact-conductance electrode model.

The coupled system in (interior potential, electrode potentials) stems from
the symmetric bilinear form

    B((u, U), (v, V)) = int_D sigma grad u . grad v dx
                      + int_dD zeta (U - u)(V - v) dS,

with piecewise linear interior elements, piecewise constant electrode
potentials and the contact density zeta from :mod:`eitcontact.contacts`.
The one-dimensional constant nullspace is removed by expressing electrode
potentials in an orthonormal basis of the zero-mean subspace, which yields a
symmetric positive definite system.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .contacts import ContactParams, boundary_quadrature, edge_zeta_integrals
from .mesh import TriMesh

__all__ = [
    "AssemblyError",
    "SolverError",
    "DomainConductivity",
    "CurrentPatternSet",
    "GroundedSystem",
    "ForwardSolution",
    "assemble",
    "solve",
    "measurements",
    "zero_mean_basis",
]


class AssemblyError(ValueError):
    """Inadmissible inputs to system assembly."""


class SolverError(RuntimeError):
    """Numerical failure in factorization or back-substitution."""


class DomainConductivity:
    """Log-conductivity field, scalar or nodal.

    The conductivity is ``exp(kappa)`` with ``kappa`` interpolated linearly
    on triangles in nodal mode; element integrals use the edge-midpoint rule
    (exact for quadratics), matching the sensitivity assembly.
    """

    __slots__ = ("mode", "kappa")

    def __init__(self, mode: str, kappa):
        if mode not in ("scalar", "nodal"):
            raise ValueError(f"unknown conductivity mode {mode!r}")
        self.mode = mode
        if mode == "scalar":
            self.kappa = float(np.asarray(kappa).reshape(()))
        else:
            arr = np.asarray(kappa, dtype=float).copy()
            arr.setflags(write=False)
            self.kappa = arr

    @classmethod
    def scalar(cls, kappa: float) -> "DomainConductivity":
        return cls("scalar", kappa)

    @classmethod
    def nodal(cls, kappa) -> "DomainConductivity":
        return cls("nodal", kappa)

    def check_mesh(self, mesh: TriMesh) -> None:
        if self.mode == "nodal" and len(self.kappa) != mesh.n_nodes:
            raise AssemblyError(
                f"nodal kappa has {len(self.kappa)} entries for a "
                f"{mesh.n_nodes}-node mesh"
            )

    def _midpoint_exp(self, mesh: TriMesh) -> np.ndarray:
        """exp(kappa) at the three edge midpoints of every triangle, (T, 3)."""
        if self.mode == "scalar":
            return np.full((mesh.n_triangles, 3), np.exp(self.kappa))
        k = self.kappa[mesh.triangles]  # (T, 3)
        mids = 0.5 * np.stack(
            [k[:, 0] + k[:, 1], k[:, 1] + k[:, 2], k[:, 2] + k[:, 0]], axis=1
        )
        return np.exp(mids)

    def element_integrals(self, mesh: TriMesh) -> np.ndarray:
        """Per-triangle int_T exp(kappa) dx, (T,)."""
        return mesh.triangle_areas / 3.0 * self._midpoint_exp(mesh).sum(axis=1)

    def element_basis_integrals(self, mesh: TriMesh) -> np.ndarray:
        """Per-triangle int_T exp(kappa) phi_loc dx, (T, 3).

        Local vertex ``loc`` sees value 1/2 at the two midpoints of its
        incident edges and 0 at the opposite one.
        """
        e = self._midpoint_exp(mesh)  # midpoints (01, 12, 20)
        w = np.stack(
            [e[:, 0] + e[:, 2], e[:, 0] + e[:, 1], e[:, 1] + e[:, 2]], axis=1
        )
        return mesh.triangle_areas[:, None] / 6.0 * w

    def fingerprint_bytes(self) -> bytes:
        if self.mode == "scalar":
            return b"scalar|" + np.float64(self.kappa).tobytes()
        return b"nodal|" + self.kappa.tobytes()


@dataclass(frozen=True)
class CurrentPatternSet:
    """Current basis: pattern i feeds electrode 1 and draws from electrode i+1."""

    n_electrodes: int
    amplitude: float = 1e-3

    def __post_init__(self):
        if self.n_electrodes < 2:
            raise ValueError("need at least two electrodes")
        if not self.amplitude > 0.0:
            raise ValueError("current amplitude must be positive")

    @property
    def n_patterns(self) -> int:
        return self.n_electrodes - 1

    @property
    def matrix(self) -> np.ndarray:
        """(M-1, M) array of current patterns (rows sum to zero)."""
        M = self.n_electrodes
        out = np.zeros((M - 1, M))
        out[:, 0] = self.amplitude
        out[np.arange(M - 1), np.arange(1, M)] = -self.amplitude
        return out

    def gram(self) -> np.ndarray:
        I = self.matrix
        return I @ I.T


def zero_mean_basis(M: int) -> np.ndarray:
    """Orthonormal (M, M-1) basis of the zero-sum subspace (Helmert columns)."""
    Q = np.zeros((M, M - 1))
    for j in range(1, M):
        Q[:j, j - 1] = 1.0
        Q[j, j - 1] = -j
        Q[:, j - 1] /= np.sqrt(j * (j + 1))
    return Q


def _element_gradients(mesh: TriMesh) -> np.ndarray:
    """Gradients of the three local basis functions per triangle, (T, 3, 2)."""
    x = mesh.nodes[mesh.triangles]  # (T, 3, 2)
    # Edge opposite local vertex i runs from vertex i+1 to vertex i+2.
    e = np.stack(
        [x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1
    )
    perp = np.stack([-e[..., 1], e[..., 0]], axis=-1)
    return perp / (2.0 * mesh.triangle_areas)[:, None, None]


class GroundedSystem:
    """Assembled SPD system with a cached factorization and solve counters."""

    def __init__(self, matrix, mesh, electrodes, conductivity, contact, Q, fingerprint):
        self.matrix = matrix
        self.mesh = mesh
        self.electrodes = electrodes
        self.conductivity = conductivity
        self.contact = contact
        self.Q = Q
        self.fingerprint = fingerprint
        self.factorization_count = 0
        self.solve_count = 0
        self._lu = None

    @property
    def n_nodes(self) -> int:
        return self.mesh.n_nodes

    @property
    def n_electrodes(self) -> int:
        return len(self.electrodes)

    def factorize(self):
        if self._lu is None:
            try:
                self._lu = spla.splu(self.matrix.tocsc())
            except Exception as exc:  # pragma: no cover - scipy raises variously
                raise SolverError(
                    f"factorization failed: {exc}; "
                    f"size={self.matrix.shape[0]}, nnz={self.matrix.nnz}, "
                    f"diag range=({self.matrix.diagonal().min():.3e}, "
                    f"{self.matrix.diagonal().max():.3e})"
                ) from exc
            self.factorization_count += 1
        return self._lu

    def backsolve(self, rhs: np.ndarray) -> np.ndarray:
        lu = self.factorize()
        out = lu.solve(rhs)
        self.solve_count += rhs.shape[1] if rhs.ndim == 2 else 1
        return out


def _system_fingerprint(mesh, electrodes, conductivity, contact, extra=b"") -> str:
    h = hashlib.sha1()
    h.update(mesh.fingerprint.encode())
    for e in electrodes:
        h.update(np.asarray(e.interval).tobytes())
    h.update(conductivity.fingerprint_bytes())
    h.update(contact.fingerprint_bytes())
    h.update(extra)
    return h.hexdigest()


def assemble(
    mesh: TriMesh,
    electrodes,
    conductivity: DomainConductivity,
    contact: ContactParams,
) -> GroundedSystem:
    """Assemble the grounded system for given conductivity and contacts.

    Raises
    ------
    AssemblyError
        If some electrode carries no contact at all (zero net conductance),
        which would disconnect it electrically.
    """
    conductivity.check_mesh(mesh)
    if contact.n_electrodes != len(electrodes):
        raise AssemblyError(
            f"contact is for {contact.n_electrodes} electrodes, "
            f"mesh layout has {len(electrodes)}"
        )
    N = mesh.n_nodes
    M = len(electrodes)
    tris = mesh.triangles

    # Stiffness: (int_T sigma) grad phi_i . grad phi_j.
    grads = _element_gradients(mesh)  # (T, 3, 2)
    sig = conductivity.element_integrals(mesh)  # (T,)
    local = np.einsum("t,tid,tjd->tij", sig, grads, grads)
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(N, N)).tocsr()

    # Boundary contact blocks.
    quad = boundary_quadrature(contact, mesh, electrodes)
    integrals = edge_zeta_integrals(contact, mesh, electrodes, quad=quad)
    net = np.zeros(M)
    on = integrals.electrode >= 0
    np.add.at(net, integrals.electrode[on], integrals.zeta[on])
    for m in range(M):
        if net[m] == 0.0:
            raise AssemblyError(f"electrode {m + 1} has zero contact")

    loop = mesh.boundary_loop
    p, q = loop[on, 0], loop[on, 1]
    mm = integrals.electrode[on]
    zpp = integrals.zeta_phi_phi[on]
    Bz = sp.coo_matrix(
        (
            np.concatenate([zpp[:, 0], zpp[:, 1], zpp[:, 1], zpp[:, 2]]),
            (
                np.concatenate([p, p, q, q]),
                np.concatenate([p, q, p, q]),
            ),
        ),
        shape=(N, N),
    ).tocsr()
    zphi = integrals.zeta_phi[on]
    C = sp.coo_matrix(
        (
            np.concatenate([zphi[:, 0], zphi[:, 1]]),
            (np.concatenate([p, q]), np.concatenate([mm, mm])),
        ),
        shape=(N, M),
    ).tocsr()

    Q = zero_mean_basis(M)
    CQ = np.asarray(C @ Q)
    DQ = Q.T @ (net[:, None] * Q)
    A = sp.bmat(
        [
            [K + Bz, sp.csr_matrix(-CQ)],
            [sp.csr_matrix(-CQ.T), sp.csr_matrix(DQ)],
        ],
        format="csc",
    )
    fp = _system_fingerprint(mesh, electrodes, conductivity, contact)
    return GroundedSystem(A, mesh, electrodes, conductivity, contact, Q, fp)


@dataclass
class ForwardSolution:
    """Per-pattern interior and electrode potentials plus the source system."""

    u: np.ndarray  # (M-1, N)
    U: np.ndarray  # (M-1, M), zero mean rows
    system: GroundedSystem
    currents: CurrentPatternSet
    residual: float = field(default=0.0)

    @property
    def fingerprint(self) -> str:
        return self.system.fingerprint


def solve(system: GroundedSystem, currents: CurrentPatternSet) -> ForwardSolution:
    """Factorize once and back-substitute all current patterns.

    One step of iterative refinement is applied if the relative residual of
    any pattern exceeds 1e-10.
    """
    if currents.n_electrodes != system.n_electrodes:
        raise AssemblyError(
            f"current patterns for {currents.n_electrodes} electrodes, "
            f"system has {system.n_electrodes}"
        )
    N = system.n_nodes
    I = currents.matrix  # (M-1, M)
    rhs = np.zeros((system.matrix.shape[0], currents.n_patterns))
    rhs[N:, :] = system.Q.T @ I.T

    X = system.backsolve(rhs)
    scale = np.linalg.norm(rhs)
    if scale > 0.0:
        res = np.linalg.norm(system.matrix @ X - rhs) / scale
        if res > 1e-10:
            X = X + system.backsolve(rhs - system.matrix @ X)
            res = np.linalg.norm(system.matrix @ X - rhs) / scale
            if res > 1e-10:
                raise SolverError(
                    f"linear solve residual {res:.3e} above 1e-10 after "
                    f"refinement; system size {system.matrix.shape[0]}"
                )
    else:
        res = 0.0

    U = (system.Q @ X[N:, :]).T
    u = X[:N, :].T
    return ForwardSolution(u=u, U=U, system=system, currents=currents, residual=float(res))


def measurements(solution: ForwardSolution) -> np.ndarray:
    """Concatenated electrode potentials, pattern-major: entry (i, m) sits at
    row i * M + m."""
    return solution.U.reshape(-1).copy()
