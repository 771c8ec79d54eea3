"""Growth kinematics and the compressible Neo-Hookean law.

Muscle contraction enters through the multiplicative split F = F_e F_g with
F_g = I + u i(x)i, so det F_g = 1 + u for a unit fiber direction i.  The
closed rank-one forms of F_g^{-1} and Cof F_g are used throughout instead of
generic 3x3 inversion; they are exact and cheap.

Stress and tangent:

    psi_e = lam/2 (ln J_e)^2 - mu ln J_e + mu/2 (F_e:F_e - 3)
    P_e   = mu F_e + (lam ln J_e - mu) F_e^{-T}
    A_e:H = mu H - (lam ln J_e - mu) F_e^{-T} H^T F_e^{-T}
            + lam (F_e^{-T}:H) F_e^{-T}

Control sensitivities at fixed F (element-wise constant growth):

    D_u Cof F_g      = I - A                        (A = i x i)
    D_u ln J_e       = -1 / J_g
    J_g D_u P_e      = (mu/J_g) F (J - I) - J_g (lam ln J_e - mu) F^{-T} (J - I)
                       - lam F_e^{-T},   J := I - A

Every function accepts stacked arrays (..., 3, 3) and broadcasts, so the
same kernels serve both single-point probes and whole-mesh batches.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ElementInversionError, GrowthBoundError


@dataclass(frozen=True)
class MaterialParams:
    """Neo-Hookean moduli (shear mu, bulk-type lam), both positive."""

    mu: float
    lam: float

    def __post_init__(self):
        if self.mu <= 0 or self.lam <= 0:
            raise ValueError(f"moduli must be positive: mu={self.mu}, lam={self.lam}")


@dataclass(frozen=True)
class GrowthPoint:
    """Growth tensors at one material point (or a stacked batch)."""

    u: np.ndarray
    direction: np.ndarray
    A: np.ndarray
    F_g: np.ndarray
    F_g_inv: np.ndarray
    cof_F_g: np.ndarray
    J_g: np.ndarray


@dataclass(frozen=True)
class StressState:
    """Deformation measures and elastic stress at one point (or a batch)."""

    F: np.ndarray
    F_e: np.ndarray
    F_e_invT: np.ndarray
    J: np.ndarray
    J_e: np.ndarray
    ln_J_e: np.ndarray
    P_e: np.ndarray
    psi_e: np.ndarray
    psi: np.ndarray  # reference density J_g psi_e
    growth: GrowthPoint


def growth_tensors(u, direction):
    """Growth tensors F_g = I + u A for scalar or stacked u.

    `u` broadcasts against `direction` (..., 3).  Raises GrowthBoundError as
    soon as any 1 + u <= 0; the caller owns recovery.
    """
    u = np.asarray(u, dtype=float)
    direction = np.asarray(direction, dtype=float)
    J_g = 1.0 + u
    if np.any(J_g <= 0.0):
        bad = np.min(u)
        raise GrowthBoundError(bad)
    A = direction[..., :, None] * direction[..., None, :]
    eye = np.broadcast_to(np.eye(3), A.shape)
    uA = u[..., None, None] * A
    F_g = eye + uA
    # Rank-one update inverse: (I + uA)^{-1} = I - u/(1+u) A for unit i.
    F_g_inv = eye - (u / J_g)[..., None, None] * A
    cof_F_g = J_g[..., None, None] * F_g_inv  # F_g symmetric
    return GrowthPoint(
        u=u, direction=direction, A=A, F_g=F_g, F_g_inv=F_g_inv,
        cof_F_g=cof_F_g, J_g=J_g,
    )


def _det3(F):
    return (
        F[..., 0, 0] * (F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1])
        - F[..., 0, 1] * (F[..., 1, 0] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 0])
        + F[..., 0, 2] * (F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0])
    )


def _inv3(F, det):
    """Adjugate-based batched 3x3 inverse (det precomputed)."""
    inv = np.empty_like(F)
    inv[..., 0, 0] = F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1]
    inv[..., 0, 1] = F[..., 0, 2] * F[..., 2, 1] - F[..., 0, 1] * F[..., 2, 2]
    inv[..., 0, 2] = F[..., 0, 1] * F[..., 1, 2] - F[..., 0, 2] * F[..., 1, 1]
    inv[..., 1, 0] = F[..., 1, 2] * F[..., 2, 0] - F[..., 1, 0] * F[..., 2, 2]
    inv[..., 1, 1] = F[..., 0, 0] * F[..., 2, 2] - F[..., 0, 2] * F[..., 2, 0]
    inv[..., 1, 2] = F[..., 0, 2] * F[..., 1, 0] - F[..., 0, 0] * F[..., 1, 2]
    inv[..., 2, 0] = F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0]
    inv[..., 2, 1] = F[..., 0, 1] * F[..., 2, 0] - F[..., 0, 0] * F[..., 2, 1]
    inv[..., 2, 2] = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    return inv / det[..., None, None]


def neo_hookean(F, growth, mp, element_of=None):
    """Elastic stress state at F under the given growth.

    Raises ElementInversionError when any J_e <= 0; `element_of` maps the
    offending batch index to an element id for the message (the time stepper
    catches this and halves the step).
    """
    F = np.asarray(F, dtype=float)
    F_e = F @ growth.F_g_inv
    J_e = _det3(F_e)
    if np.any(J_e <= 0.0):
        flat = np.argmin(J_e)
        if element_of is not None:
            idx = np.unravel_index(flat, np.shape(J_e))[0]
            elem = element_of[idx]
        else:
            elem = -1
        raise ElementInversionError(elem, np.min(J_e))
    F_e_invT = np.swapaxes(_inv3(F_e, J_e), -1, -2)
    ln_J_e = np.log(J_e)
    lam, mu = mp.lam, mp.mu
    psi_e = (
        0.5 * lam * ln_J_e**2
        - mu * ln_J_e
        + 0.5 * mu * (np.einsum("...ij,...ij->...", F_e, F_e) - 3.0)
    )
    P_e = mu * F_e + (lam * ln_J_e - mu)[..., None, None] * F_e_invT
    J = _det3(F)
    return StressState(
        F=F, F_e=F_e, F_e_invT=F_e_invT, J=J, J_e=J_e, ln_J_e=ln_J_e,
        P_e=P_e, psi_e=psi_e, psi=growth.J_g * psi_e, growth=growth,
    )


def elastic_tangent_apply(state, mp, H):
    """Contraction A_e : H of the referential elastic tangent with H."""
    H = np.asarray(H, dtype=float)
    FiT = state.F_e_invT
    coef = (mp.lam * state.ln_J_e - mp.mu)[..., None, None]
    trace = np.einsum("...ij,...ij->...", FiT, H)[..., None, None]
    HT = np.swapaxes(H, -1, -2)
    return mp.mu * H - coef * (FiT @ HT @ FiT) + mp.lam * trace * FiT


def control_derivatives(F, growth, mp):
    """Sensitivities of the internal-force integrand to the growth scalar.

    Returns (J_g D_u P_e, D_u Cof F_g); both enter the control tangent
    integrand as written in the module docstring.
    """
    state = neo_hookean(F, growth, mp)
    return control_derivatives_from_state(state, mp)


def control_derivatives_from_state(state, mp):
    growth = state.growth
    Jmat = _du_cof(growth)
    JmI = Jmat - np.broadcast_to(np.eye(3), Jmat.shape)  # equals -A
    F = state.F
    J_F = _det3(F)
    F_invT = np.swapaxes(_inv3(F, J_F), -1, -2)
    lam, mu = mp.lam, mp.mu
    J_g = growth.J_g[..., None, None]
    coef = (lam * state.ln_J_e - mu)[..., None, None]
    Jg_DuPe = (mu / J_g) * (F @ JmI) - J_g * coef * (F_invT @ JmI) \
        - lam * state.F_e_invT
    return Jg_DuPe, Jmat


def _du_cof(growth):
    """D_u Cof F_g = I - A, independent of u for a fixed fiber direction."""
    return np.broadcast_to(np.eye(3), growth.A.shape) - growth.A
