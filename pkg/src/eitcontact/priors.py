"""Gaussian prior covariances and the stacked whitening factor.

Squared-exponential kernels over mesh nodes (domain log-conductivity) and
along the boundary (piecewise linear contacts, conditioned to vanish at
electrode endpoints), a diagonal prior for hat contacts, and the block
whitener whose transpose-times-itself equals the stacked inverse covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .mesh import TriMesh

__all__ = [
    "PriorError",
    "PriorSpec",
    "StackedWhitener",
    "cov_kappa",
    "cov_pl",
    "cov_ph",
    "build_whitener",
]

# Relative jitter ladder for nearly singular squared-exponential kernels.
_JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class PriorError(ValueError):
    """Invalid prior construction."""


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters; defaults are the reference configuration.

    All standard deviations are ratios against the (unit) measurement noise
    standard deviation.
    """

    gamma_kappa: float = 10.0
    lambda_kappa: float = 3e-2
    gamma_theta: float = 5e2
    lambda_theta: float = 3e-3
    gamma_h: float = 1e3
    gamma_l: float = 10.0**1.5
    gamma_w: float = 1e2

    def validate(self) -> None:
        for name in (
            "gamma_kappa",
            "lambda_kappa",
            "gamma_theta",
            "lambda_theta",
            "gamma_h",
            "gamma_l",
            "gamma_w",
        ):
            if not getattr(self, name) > 0.0:
                raise PriorError(f"{name} must be positive")


def _jittered_spd(G: np.ndarray, scale: float) -> np.ndarray:
    """Return G plus the smallest ladder jitter that makes Cholesky succeed."""
    n = G.shape[0]
    for rel in _JITTERS:
        cand = G if rel == 0.0 else G + rel * scale * np.eye(n)
        try:
            sla.cholesky(cand, lower=True)
        except sla.LinAlgError:
            continue
        return cand
    eigs = np.linalg.eigvalsh(G)
    raise PriorError(
        f"covariance not SPD after max jitter: eigenvalue range "
        f"({eigs.min():.3e}, {eigs.max():.3e})"
    )


def cov_kappa(mesh: TriMesh, gamma: float, lam: float) -> np.ndarray:
    """Squared-exponential covariance over mesh node positions."""
    if not (gamma > 0.0 and lam > 0.0):
        raise PriorError("gamma and lambda must be positive")
    x = mesh.nodes
    d2 = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    G = gamma**2 * np.exp(-d2 / (2.0 * lam**2))
    return _jittered_spd(G, gamma**2)


def _circular_distance(s: np.ndarray, perimeter: float) -> np.ndarray:
    d = np.abs(s[:, None] - s[None, :])
    return np.minimum(d, perimeter - d)


def cov_pl(mesh: TriMesh, electrodes, gamma: float, lam: float) -> np.ndarray:
    """Boundary squared-exponential prior for PL contacts, conditioned to be
    zero at electrode endpoint nodes.

    Distances run along the boundary curve (shorter arc). Electrodes are a
    priori independent, so the result is block diagonal over electrodes in
    the free-parameter ordering.
    """
    if not (gamma > 0.0 and lam > 0.0):
        raise PriorError("gamma and lambda must be positive")
    P = mesh.perimeter
    blocks = []
    for elec in electrodes:
        s = np.asarray(elec.node_arclengths)
        if len(s) < 3:
            raise PriorError(f"electrode {elec.index} has no interior node")
        K = gamma**2 * np.exp(-_circular_distance(s, P) ** 2 / (2.0 * lam**2))
        endpoints = [0, len(s) - 1]
        interior = list(range(1, len(s) - 1))
        Kbb = K[np.ix_(endpoints, endpoints)]
        Kib = K[np.ix_(interior, endpoints)]
        Kii = K[np.ix_(interior, interior)]
        try:
            cho = sla.cho_factor(Kbb, lower=True)
        except sla.LinAlgError as exc:
            raise PriorError(
                f"electrode {elec.index}: endpoint covariance singular "
                "(coincident endpoints?)"
            ) from exc
        blocks.append(Kii - Kib @ sla.cho_solve(cho, Kib.T))
    return _jittered_spd(sla.block_diag(*blocks), gamma**2)


def cov_ph(M: int, gamma_h: float, gamma_l: float, gamma_w: float) -> np.ndarray:
    """Diagonal hat-parameter prior in (h..., l..., w...) ordering."""
    if M < 2:
        raise PriorError("need at least two electrodes")
    if not (gamma_h > 0.0 and gamma_l > 0.0 and gamma_w > 0.0):
        raise PriorError("standard deviations must be positive")
    d = np.concatenate(
        [
            np.full(M, gamma_h**2),
            np.full(M, gamma_l**2),
            np.full(M, gamma_w**2),
        ]
    )
    return np.diag(d)


def _inverse_cholesky(G: np.ndarray) -> np.ndarray:
    """Triangular W with W^T W = G^{-1}, computed without inverting G."""
    L = sla.cholesky(G, lower=True)
    return sla.solve_triangular(L, np.eye(G.shape[0]), lower=True)


@dataclass
class StackedWhitener:
    """Block factor of the stacked inverse covariance.

    ``noise`` is None for the identity noise covariance; ``kappa``/``theta``
    are None when the respective penalty term is absent.
    """

    n_data: int
    noise: np.ndarray | None = None
    kappa: np.ndarray | None = None
    theta: np.ndarray | None = None
    _precisions: dict = field(default_factory=dict, repr=False)

    def whiten_noise(self, r: np.ndarray) -> np.ndarray:
        return r if self.noise is None else self.noise @ r

    def whiten_kappa(self, r: np.ndarray) -> np.ndarray:
        if self.kappa is None:
            raise PriorError("no kappa prior block")
        return self.kappa @ r

    def whiten_theta(self, r: np.ndarray) -> np.ndarray:
        if self.theta is None:
            raise PriorError("no theta prior block")
        return self.theta @ r

    def _prec(self, name: str) -> np.ndarray:
        if name not in self._precisions:
            W = getattr(self, name)
            self._precisions[name] = W.T @ W
        return self._precisions[name]

    def prec_kappa(self) -> np.ndarray:
        return self._prec("kappa")

    def prec_theta(self) -> np.ndarray:
        return self._prec("theta")


def build_whitener(
    noise_cov: np.ndarray | None,
    kappa_cov: np.ndarray | None,
    theta_cov: np.ndarray | None,
    n_data: int,
) -> StackedWhitener:
    """Cholesky-invert each supplied SPD block.

    ``noise_cov=None`` means identity noise; ``kappa_cov``/``theta_cov`` of
    None drop that penalty entirely (scalar fits, CEM contacts).
    """
    def block(G):
        if G is None:
            return None
        G = np.asarray(G, dtype=float)
        try:
            return _inverse_cholesky(G)
        except sla.LinAlgError as exc:
            raise PriorError("covariance block is not SPD") from exc

    if noise_cov is not None and noise_cov.shape[0] != n_data:
        raise PriorError(
            f"noise covariance is {noise_cov.shape[0]}x..., data length {n_data}"
        )
    return StackedWhitener(
        n_data=n_data,
        noise=block(noise_cov),
        kappa=block(kappa_cov),
        theta=block(theta_cov),
    )
