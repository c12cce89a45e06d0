"""Jacobian of the concatenated measurement map via the adjoint identity.

For the symmetric grounded system ``A(p) x = b`` the derivative of any
measurement inner product against a basis current satisfies

    dU^(i) . I^(j) = - x^(j)^T (dA/dp) x^(i),

so every column reuses the already-solved pattern fields and needs no extra
factorization or back-substitution. The zero-mean electrode-potential
derivative is recovered from its inner products with the current basis by
solving the basis Gram system.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .contacts import ContactParams, boundary_quadrature, dzeta_dtheta
from .forward import ForwardSolution, _element_gradients

__all__ = [
    "JacobianError",
    "jacobian_kappa",
    "jacobian_contact",
    "full_jacobian",
    "fd_oracle",
]


class JacobianError(ValueError):
    """Inconsistent inputs to Jacobian assembly."""


def _gram_columns(solution: ForwardSolution, R: np.ndarray) -> np.ndarray:
    """Turn bilinear values R[i, j, k] = dU^(i,k) . I^(j) into measurement
    columns J[(i, m), k]."""
    P, _, K = R.shape
    I = solution.currents.matrix  # (P, M)
    G = solution.currents.gram()
    cho = sla.cho_factor(G)
    beta = sla.cho_solve(cho, R.transpose(1, 0, 2).reshape(P, P * K))
    beta = beta.reshape(P, P, K)  # (j, i, k)
    cols = np.einsum("jik,jm->imk", beta, I)  # (i, m, k)
    M = I.shape[1]
    return cols.reshape(P * M, K)


def jacobian_kappa(
    solution: ForwardSolution, mesh=None, conductivity=None
) -> np.ndarray:
    """Measurement derivatives with respect to the log-conductivity.

    Scalar mode gives one column; nodal mode one column per mesh node. The
    element quadrature matches assembly, so columns are exact derivatives of
    the discrete forward map.
    """
    system = solution.system
    if mesh is None:
        mesh = system.mesh
    if conductivity is None:
        conductivity = system.conductivity
    if mesh.fingerprint != system.mesh.fingerprint:
        raise JacobianError("solution was computed on a different mesh")
    if conductivity.fingerprint_bytes() != system.conductivity.fingerprint_bytes():
        raise JacobianError("solution was computed for a different conductivity")

    grads = _element_gradients(mesh)  # (T, 3, 2)
    tris = mesh.triangles
    u = solution.u  # (P, N)
    g = np.einsum("pti,tid->ptd", u[:, tris], grads)  # (P, T, 2)
    D = np.einsum("ptd,qtd->pqt", g, g)  # (P, P, T)
    P = u.shape[0]
    T = mesh.n_triangles

    if conductivity.mode == "scalar":
        w = conductivity.element_integrals(mesh)  # (T,)
        R = -(D.reshape(P * P, T) @ w).reshape(P, P, 1)
    else:
        wb = conductivity.element_basis_integrals(mesh)  # (T, 3)
        scatter = sp.coo_matrix(
            (wb.ravel(), (np.repeat(np.arange(T), 3), tris.ravel())),
            shape=(T, mesh.n_nodes),
        ).tocsr()
        R = -np.asarray(
            (D.reshape(P * P, T) @ scatter).reshape(P, P, mesh.n_nodes)
        )
    return _gram_columns(solution, R)


def jacobian_contact(
    solution: ForwardSolution, contact: ContactParams = None, electrodes=None
) -> np.ndarray:
    """Measurement derivatives with respect to the contact parameters.

    Integrates -dzeta/dtheta (U - u)^(i) (U - u)^(j) over the electrodes with
    the same breakpoint-split quadrature as assembly.
    """
    system = solution.system
    if contact is None:
        contact = system.contact
    if electrodes is None:
        electrodes = system.electrodes
    if contact.fingerprint_bytes() != system.contact.fingerprint_bytes():
        raise JacobianError("solution was computed for different contact parameters")
    if contact.n_electrodes != len(electrodes):
        raise JacobianError("contact parameter count does not match electrodes")

    quad = boundary_quadrature(contact, system.mesh, electrodes)
    # Gap between electrode and interior potential at every quadrature point.
    u_edge = (
        solution.u[:, quad.node_p] * quad.phi_p
        + solution.u[:, quad.node_q] * quad.phi_q
    )  # (P, Q)
    gap = solution.U[:, quad.electrode] - u_edge  # (P, Q)

    P = gap.shape[0]
    K = contact.n_params
    R = np.zeros((P, P, K))
    for k in range(K):
        dens = dzeta_dtheta(contact, k)
        mask = quad.electrode == dens.electrode
        if not np.any(mask):
            continue
        vals = dens.fn(quad.t[mask]) * quad.weight[mask]
        gm = gap[:, mask]
        R[:, :, k] = -(gm * vals) @ gm.T
    return _gram_columns(solution, R)


def full_jacobian(solution: ForwardSolution) -> np.ndarray:
    """Stacked [d/dkappa, d/dtheta] Jacobian for the solution's system."""
    return np.hstack([jacobian_kappa(solution), jacobian_contact(solution)])


def fd_oracle(f, theta0, k: int, step: float) -> np.ndarray:
    """Central-difference column of a parameter-to-vector map.

    Exact for affine and quadratic maps; used as the independent check on the
    adjoint Jacobians.
    """
    if step <= 0.0:
        raise ValueError("finite-difference step must be positive")
    theta0 = np.asarray(theta0, dtype=float)
    hi = theta0.copy()
    hi[k] += step
    lo = theta0.copy()
    lo[k] -= step
    return (np.asarray(f(hi)) - np.asarray(f(lo))) / (2.0 * step)
