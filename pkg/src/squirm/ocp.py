"""Tracking-type optimal control of the state DAE by forward-backward sweeps.

Objective (discrete, left-rectangle in time, terminal cost included):

    J(u) = sum_{n=0}^{N-1} dt [ 1/2 |Lam x_n - x_d|^2 + alpha/2 |u_n|^2 ]
           + 1/2 |Lam x_N - x_d|^2

The backward sweep integrates the costate pair (mu, lambda) with the same
stage convention as the forward scheme, seeded by the terminal block

    mu_N = Lam^T (Lam x_N - x_d),    lambda_N = -G_N^{-T} mu_N,

and the control residual table r pairs each interval's control stage with
that interval's algebraic costate:

    r_{n-1} = alpha u_stage(n) + B_n^T lambda_stage(n),
    r_N     = alpha u_N + B_N^T lambda_N.

The FBSM driver updates u along d = -r with a stabilised Barzilai-Borwein
step (or a constant 1/|r^0| step), projects onto the admissible box, and
rejects any update that increases J (halving theta, bounded), which keeps
the accepted-iterate J monotone.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    ElementInversionError,
    NewtonDivergenceError,
    SingularOperatorError,
)
from .forward import simulate


@dataclass(frozen=True)
class OcpConfig:
    x_d: np.ndarray
    alpha: float
    u_min: float
    u_max: float
    tol: float = 1e-3
    max_sweeps: int = 200
    theta_max: float = 0.25
    theta_policy: str = "bb"  # "bb" | "constant"
    max_rejects: int = 30
    # Reject updates that increase J (guarantees monotone accepted-iterate
    # J).  Because the residual carries an O(dt) discretisation gap relative
    # to the exact discrete gradient, the guarded iteration stops within
    # O(dt) of the sweep fixed point; disable to run the raw update rule,
    # which converges to the discrete optimality-system root itself.
    monotone_safeguard: bool = True

    def __post_init__(self):
        object.__setattr__(self, "x_d", np.asarray(self.x_d, dtype=float))
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not self.u_min < self.u_max:
            raise ValueError("need u_min < u_max")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.theta_policy not in ("bb", "constant"):
            raise ValueError(f"unknown theta policy {self.theta_policy!r}")


@dataclass
class AdjointTrajectory:
    mu: np.ndarray  # (N+1, n_free)
    lam: np.ndarray  # (N+1, n_free); interval lambdas in Box-1 labelling
    lam_terminal: np.ndarray  # (n_free,)


def objective(traj, ocp):
    """Discrete objective of a trajectory (left-rectangle + terminal)."""
    model = traj.model
    run = 0.0
    for n in range(traj.n_steps):
        run += traj.dt * (
            model.tracking_error(traj.x[n], ocp.x_d)
            + 0.5 * ocp.alpha * float(traj.u[n] @ traj.u[n])
        )
    return run + model.tracking_error(traj.x[-1], ocp.x_d)


def _solve_transposed(matrix, rhs):
    try:
        return spla.splu(sp.csc_matrix(matrix.T)).solve(rhs)
    except RuntimeError as exc:
        raise SingularOperatorError(str(exc)) from exc


def adjoint_sweep(traj, ocp):
    """Backward costate sweep on the cached stage tangents of a trajectory."""
    if traj.steps and traj.steps[0] is None:
        raise ValueError("trajectory was simulated without stored tangents")
    model = traj.model
    tau = traj.tau
    dt = traj.dt
    N = traj.n_steps
    nf = traj.x.shape[1]
    mu = np.zeros((N + 1, nf))
    lam = np.zeros((N + 1, nf))

    mu[N] = model.centroid_forcing(traj.x[N], ocp.x_d)
    lam_terminal = -_solve_transposed(traj.G_T, mu[N])

    tl, tm, tx = tau.tau_lambda, tau.tau_mu, tau.tau_x
    if tl >= 1.0 and tm < 1.0:
        raise NotImplementedError(
            "tau_lambda = 1 with tau_mu < 1 has no sequential backward form")
    if tl < 1.0:
        lam[N] = lam_terminal
    reuse_forward_factor = abs(tx - (1.0 - tm)) < 1e-14

    for n in range(N, 0, -1):
        cache = traj.steps[n - 1]
        K, G = cache.K, cache.G
        f_s = model.centroid_forcing(traj.stage_x(n), ocp.x_d)
        if tl >= 1.0:
            # Staggered backward recursion: G^T lam_n = -mu_n, then the
            # explicit mu update (tau_lambda = tau_mu = 1).
            if tx == 0.0:
                lam[n] = cache.lu.solve(-mu[n], trans="T")
            else:
                lam[n] = _solve_transposed(G, -mu[n])
            mu[n - 1] = mu[n] + dt * (f_s + K.T @ lam[n])
        else:
            rhs = -tl * (G.T @ lam[n]) - mu[n] \
                - dt * (1 - tm) * (f_s + tl * (K.T @ lam[n]))
            if reuse_forward_factor:
                lam[n - 1] = cache.lu.solve(rhs / (1 - tl), trans="T")
            else:
                lam[n - 1] = _solve_transposed(
                    (1 - tl) * (G + dt * (1 - tm) * K), rhs)
            lam_stage = (1 - tl) * lam[n - 1] + tl * lam[n]
            mu[n - 1] = mu[n] + dt * (f_s + K.T @ lam_stage)

    return AdjointTrajectory(mu=mu, lam=lam, lam_terminal=lam_terminal)


def control_residual(traj, adj, ocp):
    """Gradient table r of the reduced objective, one row per time node."""
    tau = traj.tau
    N = traj.n_steps
    r = np.zeros_like(traj.u)
    for n in range(1, N + 1):
        cache = traj.steps[n - 1]
        if tau.tau_lambda >= 1.0:
            lam_stage = adj.lam[n]
        else:
            lam_stage = (1 - tau.tau_lambda) * adj.lam[n - 1] \
                + tau.tau_lambda * adj.lam[n]
        r[n - 1] = ocp.alpha * traj.stage_u(n) + cache.B.T @ lam_stage
    r[N] = ocp.alpha * traj.u[N] + traj.B_T.T @ adj.lam_terminal
    return r


def table_norm(table, dt):
    """Discrete L2(0, T) norm of a (time nodes x channels) table."""
    return float(np.sqrt(dt * np.sum(np.asarray(table) ** 2)))


def bb_step(delta_u, delta_d, d_k, theta_max, fallback_theta):
    """Stabilised Barzilai-Borwein step length.

    Short secant step when positive, geometric-mean remedy otherwise, both
    capped by theta_max / |d_k| so the update never moves farther than
    theta_max.  A vanishing secant falls back to the constant policy value.
    """
    delta_u = np.asarray(delta_u).ravel()
    delta_d = np.asarray(delta_d).ravel()
    d_norm = float(np.linalg.norm(np.asarray(d_k)))
    theta_th = theta_max / d_norm if d_norm > 0 else np.inf
    dd = float(delta_d @ delta_d)
    if dd == 0.0:
        return min(fallback_theta, theta_th)
    theta_s = -float(delta_u @ delta_d) / dd
    if theta_s > 0.0:
        return min(theta_s, theta_th)
    theta_m = float(np.linalg.norm(delta_u)) / np.sqrt(dd)
    return min(theta_m, theta_th)


def hamiltonian(traj, adj, ocp):
    """Control Hamiltonian per interval stage (diagnostic series, length N)."""
    model = traj.model
    tau = traj.tau
    H = np.zeros(traj.n_steps)
    for n in range(1, traj.n_steps + 1):
        x_s = traj.stage_x(n)
        v_s = (traj.x[n] - traj.x[n - 1]) / traj.dt
        u_s = traj.stage_u(n)
        g = model.assemble_residual(x_s, v_s, u_s)
        if tau.tau_lambda >= 1.0:
            lam_stage = adj.lam[n]
        else:
            lam_stage = (1 - tau.tau_lambda) * adj.lam[n - 1] \
                + tau.tau_lambda * adj.lam[n]
        mu_stage = (1 - tau.tau_mu) * adj.mu[n - 1] + tau.tau_mu * adj.mu[n]
        H[n - 1] = (
            model.tracking_error(x_s, ocp.x_d)
            + 0.5 * ocp.alpha * float(u_s @ u_s)
            + float(lam_stage @ g)
            + float(mu_stage @ v_s)
        )
    return H


def kkt_violation(u, r, ocp, active_tol=1e-12):
    """Largest violation of the bound-sign optimality conditions.

    At u = u_min the residual must be >= 0, at u = u_max <= 0; interior
    entries are measured by |r| directly.
    """
    u = np.asarray(u)
    r = np.asarray(r)
    at_min = u <= ocp.u_min + active_tol
    at_max = u >= ocp.u_max - active_tol
    interior = ~(at_min | at_max)
    viol = 0.0
    if at_min.any():
        viol = max(viol, float(np.maximum(-r[at_min], 0.0).max()))
    if at_max.any():
        viol = max(viol, float(np.maximum(r[at_max], 0.0).max()))
    if interior.any():
        viol = max(viol, float(np.abs(r[interior]).max()))
    return viol


@dataclass
class FbsmResult:
    u: np.ndarray
    trajectory: object
    adjoint: AdjointTrajectory
    residual: np.ndarray
    J_history: list
    r_norm_history: list
    theta_history: list = field(default_factory=list)
    converged: bool = False
    n_sweeps: int = 0
    stop_reason: str = ""


def fbsm(model, u0, T, dt, ocp, tau=None, newton=None, callback=None):
    """Forward-backward sweep method with projected gradient updates.

    Starts from the admissible table u0 ((N+1) x n_controls or a constant
    scalar), alternates state and adjoint solves, and updates the control
    along the negative residual with the configured line-search policy.
    Rejected updates (J increase or forward failure) halve theta and retry;
    accepted-iterate J is therefore non-increasing.
    """
    n_steps = int(round(T / dt))
    if np.isscalar(u0):
        u = np.full((n_steps + 1, model.n_controls), float(u0))
    else:
        u = np.array(u0, dtype=float)
    u = np.clip(u, ocp.u_min, ocp.u_max)

    traj = simulate(model, u, T, dt, tau=tau, newton=newton)
    adj = adjoint_sweep(traj, ocp)
    r = control_residual(traj, adj, ocp)
    J = objective(traj, ocp)
    d = -r

    r0_norm = float(np.linalg.norm(r))
    theta_const = 1.0 / r0_norm if r0_norm > 0 else 1.0

    J_hist = [J]
    r_hist = [table_norm(r, dt)]
    theta_hist = []
    u_prev = None
    d_prev = None
    converged = r_hist[0] <= ocp.tol
    reason = "initial residual below tol" if converged else ""

    k = 0
    while not converged and k < ocp.max_sweeps:
        if ocp.theta_policy == "bb" and u_prev is not None:
            theta = bb_step(u - u_prev, d - d_prev, d, ocp.theta_max,
                            theta_const)
        else:
            d_norm = float(np.linalg.norm(d))
            cap = ocp.theta_max / d_norm if d_norm > 0 else np.inf
            theta = min(theta_const, cap)

        accepted = False
        for _ in range(ocp.max_rejects):
            u_new = np.clip(u + theta * d, ocp.u_min, ocp.u_max)
            try:
                traj_new = simulate(model, u_new, T, dt, tau=tau,
                                    newton=newton)
            except (NewtonDivergenceError, ElementInversionError,
                    SingularOperatorError):
                theta *= 0.5
                continue
            J_new = objective(traj_new, ocp)
            if not ocp.monotone_safeguard \
                    or J_new <= J * (1.0 + 1e-12) + 1e-15:
                accepted = True
                break
            theta *= 0.5
        if not accepted:
            reason = "no descent step found"
            break

        adj = adjoint_sweep(traj_new, ocp)
        r_new = control_residual(traj_new, adj, ocp)
        du_norm = table_norm(u_new - u, dt)

        u_prev, d_prev = u, d
        u, traj, r, J = u_new, traj_new, r_new, J_new
        d = -r
        J_hist.append(J)
        r_hist.append(table_norm(r, dt))
        theta_hist.append(theta)
        k += 1
        if callback is not None:
            callback(k, J, r_hist[-1], theta)
        err = max(r_hist[-1], du_norm)
        if err <= ocp.tol:
            converged = True
            reason = "residual and update below tol"

    if not reason:
        reason = "max sweeps reached"
    return FbsmResult(
        u=u, trajectory=traj, adjoint=adj, residual=r, J_history=J_hist,
        r_norm_history=r_hist, theta_history=theta_hist,
        converged=converged, n_sweeps=k, stop_reason=reason,
    )
