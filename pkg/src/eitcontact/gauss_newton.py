"""Gauss-Newton minimization of the Tikhonov functional over (kappa, theta).

Each iteration linearizes the measurement map, solves the whitened stacked
least-squares problem for the step direction and backtracks with the Armijo
sufficient-decrease rule. Hat-contact iterates are clamped into their
feasible set before every objective evaluation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .contacts import ContactParams, clamp_ph
from .forward import DomainConductivity, assemble, measurements, solve
from .jacobian import jacobian_contact, jacobian_kappa
from .priors import StackedWhitener

__all__ = [
    "TikhonovProblem",
    "GNState",
    "objective",
    "gn_direction",
    "line_search",
    "run",
    "scalar_fit",
]

logger = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
WOLFE_C2 = 0.9
MAX_HALVINGS = 30
CONDITION_LIMIT = 1e12


@dataclass
class TikhonovProblem:
    """Data misfit plus Gaussian penalties for one parametrization.

    ``kappa_mean``/``theta_mean`` of None drop the corresponding penalty
    (scalar conductivity fits, CEM contacts). The whitener blocks must match.
    """

    mesh: object
    electrodes: list
    currents: object
    data: np.ndarray
    kappa_mode: str  # "scalar" | "nodal"
    contact_template: ContactParams
    whitener: StackedWhitener
    kappa_mean: np.ndarray | None = None
    theta_mean: np.ndarray | None = None
    wolfe_curvature: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        M = len(self.electrodes)
        if len(self.data) != M * (M - 1):
            raise ValueError(
                f"data length {len(self.data)} does not match M(M-1)={M * (M - 1)}"
            )
        if self.kappa_mean is not None:
            self.kappa_mean = np.atleast_1d(np.asarray(self.kappa_mean, dtype=float))
            if len(self.kappa_mean) != self.n_kappa:
                raise ValueError("kappa_mean length does not match kappa mode")
            if self.whitener.kappa is None:
                raise ValueError("kappa prior mean given but whitener lacks the block")
        if self.theta_mean is not None:
            self.theta_mean = np.asarray(self.theta_mean, dtype=float)
            if len(self.theta_mean) != self.contact_template.n_params:
                raise ValueError("theta_mean length does not match parametrization")
            if self.whitener.theta is None:
                raise ValueError("theta prior mean given but whitener lacks the block")

    @property
    def n_kappa(self) -> int:
        return 1 if self.kappa_mode == "scalar" else self.mesh.n_nodes

    @property
    def n_params(self) -> int:
        return self.n_kappa + self.contact_template.n_params

    def split(self, tau: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = self.n_kappa
        return tau[:k], tau[k:]

    def clamp(self, tau: np.ndarray) -> np.ndarray:
        if self.contact_template.variant != "ph":
            return tau
        kappa, theta = self.split(tau)
        clamped = clamp_ph(self.contact_template.with_theta(theta))
        return np.concatenate([kappa, clamped.theta])

    def conductivity(self, kappa_part: np.ndarray) -> DomainConductivity:
        if self.kappa_mode == "scalar":
            return DomainConductivity.scalar(kappa_part[0])
        return DomainConductivity.nodal(kappa_part)

    def forward(self, tau: np.ndarray):
        """Measurements and the forward solution at (already clamped) tau."""
        kappa_part, theta = self.split(tau)
        contact = self.contact_template.with_theta(theta)
        system = assemble(self.mesh, self.electrodes, self.conductivity(kappa_part), contact)
        sol = solve(system, self.currents)
        return measurements(sol), sol

    def jacobian(self, solution, tau: np.ndarray) -> np.ndarray:
        Jk = jacobian_kappa(solution)
        Jt = jacobian_contact(solution)
        return np.hstack([Jk, Jt])


def _terms(problem: TikhonovProblem, tau: np.ndarray, meas: np.ndarray):
    """Squared whitened norms of the data and prior residuals."""
    W = problem.whitener
    r = W.whiten_noise(meas - problem.data)
    terms = {"data": float(r @ r), "kappa": None, "theta": None}
    kappa_part, theta = problem.split(tau)
    if problem.kappa_mean is not None:
        rk = W.whiten_kappa(kappa_part - problem.kappa_mean)
        terms["kappa"] = float(rk @ rk)
    if problem.theta_mean is not None:
        rt = W.whiten_theta(theta - problem.theta_mean)
        terms["theta"] = float(rt @ rt)
    F = sum(v for v in terms.values() if v is not None)
    return F, terms


def _evaluate(problem: TikhonovProblem, tau: np.ndarray):
    meas, sol = problem.forward(tau)
    F, terms = _terms(problem, tau, meas)
    return F, terms, meas, sol


def objective(problem: TikhonovProblem, tau: np.ndarray):
    """Objective value and its term breakdown at a feasible iterate."""
    F, terms, _, _ = _evaluate(problem, np.asarray(tau, dtype=float))
    return F, terms


def _direction_and_gradient(problem, tau, J, meas):
    """Gauss-Newton step (descent) and the objective gradient at tau."""
    W = problem.whitener
    r = meas - problem.data
    Jw = W.whiten_noise(J)
    rw = W.whiten_noise(r)
    H = Jw.T @ Jw
    g = Jw.T @ rw
    k = problem.n_kappa
    kappa_part, theta = problem.split(tau)
    if problem.kappa_mean is not None:
        Pk = W.prec_kappa()
        H[:k, :k] += Pk
        g[:k] += Pk @ (kappa_part - problem.kappa_mean)
    if problem.theta_mean is not None:
        Pt = W.prec_theta()
        H[k:, k:] += Pt
        g[k:] += Pt @ (theta - problem.theta_mean)

    d = None
    try:
        anorm = np.linalg.norm(H, 1)
        cho = sla.cho_factor(H, lower=True)
        rcond, info = sla.lapack.dpocon(cho[0], anorm, uplo=b"L")
        if info == 0 and rcond * CONDITION_LIMIT >= 1.0:
            d = -sla.cho_solve(cho, g)
    except sla.LinAlgError:
        pass
    if d is None:
        # Orthogonal (pivoted QR) solve of the stacked whitened system.
        n = problem.n_params
        rows = [Jw]
        rhs = [rw]
        if problem.kappa_mean is not None:
            Wk = W.kappa
            block = np.zeros((Wk.shape[0], n))
            block[:, :k] = Wk
            rows.append(block)
            rhs.append(W.whiten_kappa(kappa_part - problem.kappa_mean))
        if problem.theta_mean is not None:
            Wt = W.theta
            block = np.zeros((Wt.shape[0], n))
            block[:, k:] = Wt
            rows.append(block)
            rhs.append(W.whiten_theta(theta - problem.theta_mean))
        d = -sla.lstsq(
            np.vstack(rows), np.concatenate(rhs), lapack_driver="gelsy"
        )[0]
    return d, 2.0 * g


def gn_direction(
    problem: TikhonovProblem, tau: np.ndarray, J: np.ndarray, meas: np.ndarray | None = None
) -> np.ndarray:
    """Solve the whitened linearized least-squares problem for the full step.

    The sign convention makes ``tau + d`` the Gauss-Newton update, so ``d``
    is a descent direction whenever it is nonzero.
    """
    tau = np.asarray(tau, dtype=float)
    if meas is None:
        meas, _ = problem.forward(tau)
    d, _ = _direction_and_gradient(problem, tau, J, meas)
    return d


@dataclass
class _LineSearchResult:
    t: float
    tau: np.ndarray
    F: float
    terms: dict
    meas: np.ndarray
    solution: object


def line_search(
    problem: TikhonovProblem,
    tau: np.ndarray,
    d: np.ndarray,
    F0: float | None = None,
    slope0: float | None = None,
    c1: float = ARMIJO_C1,
) -> _LineSearchResult | None:
    """Backtrack from t = 1 by halving until Armijo sufficient decrease.

    Hat-contact candidates are clamped before every evaluation. Returns None
    after ``MAX_HALVINGS`` rejections.
    """
    tau = np.asarray(tau, dtype=float)
    d = np.asarray(d, dtype=float)
    if F0 is None or slope0 is None:
        meas0, sol0 = problem.forward(tau)
        F0, _ = _terms(problem, tau, meas0)
        J0 = problem.jacobian(sol0, tau)
        _, grad0 = _direction_and_gradient(problem, tau, J0, meas0)
        slope0 = float(grad0 @ d)

    t = 1.0
    for _ in range(MAX_HALVINGS + 1):
        cand = problem.clamp(tau + t * d)
        F, terms, meas, sol = _evaluate(problem, cand)
        if F <= F0 + c1 * t * slope0:
            return _LineSearchResult(t=t, tau=cand, F=F, terms=terms, meas=meas, solution=sol)
        t *= 0.5
    return None


def _curvature_ok(problem, result: _LineSearchResult, d, slope0) -> bool:
    J = problem.jacobian(result.solution, result.tau)
    _, grad = _direction_and_gradient(problem, result.tau, J, result.meas)
    return float(grad @ d) >= WOLFE_C2 * slope0


@dataclass
class GNState:
    """Iterate and diagnostics of one reconstruction run."""

    tau: np.ndarray
    objective: float
    terms: dict
    step: float = 0.0
    direction_norm: float = 0.0
    iteration: int = 0
    converged: bool = False
    reason: str = ""
    history: list = field(default_factory=list)
    final_measurements: np.ndarray | None = None


def run(
    problem: TikhonovProblem,
    tau0,
    max_iter: int = 50,
    tol: float = 1e-8,
    on_iteration=None,
) -> GNState:
    """Iterate Gauss-Newton steps with backtracking until convergence.

    Stops on three consecutive relative objective decreases below ``tol``,
    a step shorter than ``tol``, a failed line search, or ``max_iter``.
    """
    tau = problem.clamp(np.asarray(tau0, dtype=float).copy())
    if len(tau) != problem.n_params:
        raise ValueError(f"tau0 has {len(tau)} entries, expected {problem.n_params}")
    F, terms, meas, sol = _evaluate(problem, tau)
    state = GNState(tau=tau, objective=F, terms=terms, final_measurements=meas)
    if max_iter == 0:
        state.reason = "max iterations"
        return state

    stagnant = 0
    for j in range(1, max_iter + 1):
        J = problem.jacobian(sol, tau)
        d, grad = _direction_and_gradient(problem, tau, J, meas)
        dnorm = float(np.linalg.norm(d))
        slope = float(grad @ d)
        # A first-order decrease below float resolution of F is stationary.
        if dnorm == 0.0 or slope >= 0.0 or -slope <= 1e-12 * max(F, np.finfo(float).tiny):
            state.converged = True
            state.reason = "stationary point"
            break

        ls = line_search(problem, tau, d, F0=F, slope0=slope)
        if ls is None:
            state.reason = "line search failed"
            break
        if problem.wolfe_curvature and not _curvature_ok(problem, ls, d, slope):
            logger.debug("iteration %d: curvature condition not satisfied", j)

        rel_dec = (F - ls.F) / max(F, np.finfo(float).tiny)
        tau, F, terms, meas, sol = ls.tau, ls.F, ls.terms, ls.meas, ls.solution
        record = {
            "iteration": j,
            "objective": F,
            "data_term": terms["data"],
            "kappa_term": terms["kappa"],
            "theta_term": terms["theta"],
            "step": ls.t,
            "direction_norm": dnorm,
        }
        state.history.append(record)
        if on_iteration is not None:
            on_iteration(record)
        state.tau, state.objective, state.terms = tau, F, terms
        state.step, state.direction_norm, state.iteration = ls.t, dnorm, j
        state.final_measurements = meas

        stagnant = stagnant + 1 if rel_dec < tol else 0
        if stagnant >= 3:
            state.converged = True
            state.reason = "objective stagnation"
            break
        if ls.t * dnorm < tol:
            state.converged = True
            state.reason = "step size below tolerance"
            break
    else:
        state.reason = "max iterations"
    return state


def scalar_fit(
    problem: TikhonovProblem, tau0, max_iter: int = 50, tol: float = 1e-8, on_iteration=None
):
    """Single-conductivity fit: same loop, no penalty on the scalar kappa.

    Returns (kappa_opt, theta_opt, residual, state) with the plain Euclidean
    data residual and sigma_opt = exp(kappa_opt) recoverable from kappa_opt.
    """
    if problem.kappa_mode != "scalar":
        raise ValueError("scalar_fit needs a scalar-kappa problem")
    if problem.kappa_mean is not None:
        raise ValueError("scalar_fit runs without a kappa penalty")
    state = run(problem, tau0, max_iter=max_iter, tol=tol, on_iteration=on_iteration)
    kappa_part, theta = problem.split(state.tau)
    residual = float(np.linalg.norm(state.final_measurements - problem.data))
    return float(kappa_part[0]), theta, residual, state
