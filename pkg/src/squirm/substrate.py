"""Frictional substrate traction and viscous bulk drag.

The substrate is flat and stationary with global unit normal n.  Traction on
the reference contact surface is linear in the sliding velocity through the
anisotropic friction tensor

    B(tau, n) = mu_l (I - n x n) + (mu_t - mu_l) (tau x tau),

with the tangential coefficient switching smoothly between the forward and
backward values by a tanh regularisation of sign(v . tau):

    mu_t(v) = (mu_f + mu_b)/2 + (mu_f - mu_b)/2 * tanh((v . tau)/beta).

The bulk drag b_o = -mu_o v regularises the force balance so the velocity
tangent stays nonsingular even without substrate contact.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class FrictionParams:
    """Anisotropic friction coefficients and tanh tolerance.

    mu_f acts on sliding along +tau (the element axis from local node 0 to
    node 1), mu_b against it, mu_l on the remaining in-plane direction.
    """

    mu_l: float
    mu_f: float
    mu_b: float
    beta: float = 0.1
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        if min(self.mu_l, self.mu_f, self.mu_b) < 0:
            raise ValueError("friction coefficients must be non-negative")
        if self.beta <= 0:
            raise ValueError("tanh tolerance beta must be positive")
        n = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(n) - 1.0) > 1e-12:
            raise ValueError("substrate normal must be a unit vector")
        object.__setattr__(self, "normal", n)
        n.setflags(write=False)

    @property
    def mu_t_mean(self):
        return 0.5 * (self.mu_f + self.mu_b)

    @property
    def mu_t_half_gap(self):
        return 0.5 * (self.mu_f - self.mu_b)


@dataclass(frozen=True)
class ViscousParams:
    """Bulk drag coefficient; must be positive (index-1 requirement)."""

    mu_o: float

    def __post_init__(self):
        if self.mu_o <= 0:
            raise ValueError("mu_o must be positive for a nonsingular velocity tangent")


def effective_mu_t(v, tau, fp):
    """Velocity-dependent tangential coefficient and its slip derivative.

    Returns (mu_t, d mu_t / d(v . tau)).
    """
    slip = float(np.dot(v, tau))
    c = np.tanh(slip / fp.beta)
    mu_t = fp.mu_t_mean + fp.mu_t_half_gap * c
    dmu = fp.mu_t_half_gap * (1.0 - c * c) / fp.beta
    return mu_t, dmu


def friction_tensor(v, tau, fp):
    """Friction tensor B(tau, n) at the current sliding velocity."""
    n = fp.normal
    mu_t, _ = effective_mu_t(v, tau, fp)
    plane = np.eye(3) - np.outer(n, n)
    return fp.mu_l * plane + (mu_t - fp.mu_l) * np.outer(tau, tau)


def traction(v, tau, fp):
    """Traction t_o = -B v with its velocity and tangent derivative blocks.

    Requires an orthonormal contact frame (|tau| = 1, tau . n = 0); the
    assembly composes the same integrands directly from element tangents.
    Returns (t_o, dt_dv (3, 3), dt_dtau (3, 3)).
    """
    tau = np.asarray(tau, dtype=float)
    v = np.asarray(v, dtype=float)
    n = fp.normal
    if abs(np.linalg.norm(tau) - 1.0) > 1e-8 or abs(float(tau @ n)) > 1e-8:
        raise ValueError("contact frame not orthonormal: need |tau|=1, tau.n=0")
    mu_t, dmu = effective_mu_t(v, tau, fp)
    slip = float(v @ tau)
    t_o = -friction_tensor(v, tau, fp) @ v
    dt_dv = -(
        fp.mu_l * (np.eye(3) - np.outer(n, n))
        + (mu_t - fp.mu_l) * np.outer(tau, tau)
        + dmu * slip * np.outer(tau, tau)
    )
    dt_dtau = -(
        (mu_t - fp.mu_l) * (slip * np.eye(3) + np.outer(tau, v))
        + dmu * slip * np.outer(tau, v)
    )
    return t_o, dt_dv, dt_dtau


def viscous_force(v, vp):
    """Bulk body force density b_o = -mu_o v."""
    return -vp.mu_o * np.asarray(v, dtype=float)
