"""Finite-difference derivative audits of every analytic tangent.

Each audit compares an analytic derivative against central differences at
randomized admissible states and reports the worst relative error; the CLI
fails the audit command when any figure exceeds 1e-4.  The assembly audit
runs on a two-element strip, small enough for dense column probing yet
exercising every term (growth, friction with fore/aft asymmetry, bulk
drag, incompatible-mode condensation).
"""

import numpy as np

from . import material as mat
from . import substrate as sub
from .assembly import ControlMap, FEModel
from .mesh import build_box_mesh

FD_EPS = 1e-6


def _rand_rotation_free_state(rng):
    gp = mat.growth_tensors(rng.uniform(-0.3, 0.6), _unit(rng))
    F = np.eye(3) + 0.25 * rng.standard_normal((3, 3))
    return F, gp


def _unit(rng):
    d = rng.standard_normal(3)
    return d / np.linalg.norm(d)


def audit_energy_stress(mp, n=60, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < n:
        F, gp = _rand_rotation_free_state(rng)
        try:
            state = mat.neo_hookean(F, gp, mp)
        except Exception:
            continue
        if state.J_e < 0.2:
            continue
        fd = np.zeros((3, 3))
        for a in range(3):
            for b in range(3):
                dFe = np.zeros((3, 3))
                dFe[a, b] = FD_EPS
                fd[a, b] = (
                    mat.neo_hookean((state.F_e + dFe) @ gp.F_g, gp, mp).psi_e
                    - mat.neo_hookean((state.F_e - dFe) @ gp.F_g, gp, mp).psi_e
                ) / (2 * FD_EPS)
        worst = max(worst, np.linalg.norm(fd - state.P_e)
                    / np.linalg.norm(state.P_e))
        done += 1
    return worst


def audit_stress_tangent(mp, n=60, seed=1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < n:
        F, gp = _rand_rotation_free_state(rng)
        try:
            state = mat.neo_hookean(F, gp, mp)
        except Exception:
            continue
        if state.J_e < 0.2:
            continue
        H = rng.standard_normal((3, 3))
        Fp, Fm = state.F_e + FD_EPS * H, state.F_e - FD_EPS * H
        P_p = mp.mu * Fp + (mp.lam * np.log(np.linalg.det(Fp)) - mp.mu) \
            * np.linalg.inv(Fp).T
        P_m = mp.mu * Fm + (mp.lam * np.log(np.linalg.det(Fm)) - mp.mu) \
            * np.linalg.inv(Fm).T
        fd = (P_p - P_m) / (2 * FD_EPS)
        applied = mat.elastic_tangent_apply(state, mp, H)
        worst = max(worst, np.linalg.norm(fd - applied)
                    / np.linalg.norm(applied))
        done += 1
    return worst


def audit_control_derivative(mp, n=60, seed=2):
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < n:
        u = rng.uniform(-0.3, 0.6)
        i = _unit(rng)
        F = np.eye(3) + 0.2 * rng.standard_normal((3, 3))
        gp = mat.growth_tensors(u, i)
        try:
            Jg_DuPe, _ = mat.control_derivatives(F, gp, mp)
            P_p = mat.neo_hookean(F, mat.growth_tensors(u + FD_EPS, i), mp).P_e
            P_m = mat.neo_hookean(F, mat.growth_tensors(u - FD_EPS, i), mp).P_e
        except Exception:
            continue
        fd = gp.J_g * (P_p - P_m) / (2 * FD_EPS)
        worst = max(worst, np.abs(fd - Jg_DuPe).max()
                    / max(np.abs(Jg_DuPe).max(), 1.0))
        done += 1
    return worst


def audit_traction_derivative(substrate, n=100, seed=3):
    fp = sub.FrictionParams(mu_l=max(substrate["mu_l"], 0.5),
                            mu_f=max(substrate["mu_f"], 1.0),
                            mu_b=max(substrate["mu_b"], 0.25),
                            beta=substrate["beta"])
    rng = np.random.default_rng(seed)
    tau = np.array([1.0, 0.0, 0.0])
    worst = 0.0
    for _ in range(n):
        v = rng.standard_normal(3)
        _, dt_dv, _ = sub.traction(v, tau, fp)
        fd = np.zeros((3, 3))
        for k in range(3):
            dv = np.zeros(3)
            dv[k] = FD_EPS
            tp, _, _ = sub.traction(v + dv, tau, fp)
            tm, _, _ = sub.traction(v - dv, tau, fp)
            fd[:, k] = (tp - tm) / (2 * FD_EPS)
        worst = max(worst, np.abs(fd - dt_dv).max()
                    / max(np.abs(dt_dv).max(), 1e-12))
    return worst


def _audit_model(mu, lam, substrate, enhanced):
    mesh = build_box_mesh(2.0, 1.0, 2, 1, 1, pair_chambers=False)
    return FEModel(
        mesh,
        mat.MaterialParams(mu=mu, lam=lam),
        sub.FrictionParams(mu_l=max(substrate["mu_l"], 0.5),
                           mu_f=max(substrate["mu_f"], 1.0),
                           mu_b=max(substrate["mu_b"], 0.25),
                           beta=substrate["beta"]),
        sub.ViscousParams(substrate["mu_o"]),
        ControlMap.per_element(mesh),
        enhanced=enhanced,
    )


def audit_assembly_tangents(mu, lam, substrate, enhanced, seed=4):
    """Column FD audit of K, G, B on the two-element strip."""
    model = _audit_model(mu, lam, substrate, enhanced)
    rng = np.random.default_rng(seed)
    x = model.x_init + 0.05 * rng.standard_normal(model.n_free)
    v = 0.3 * rng.standard_normal(model.n_free)
    u = rng.uniform(-0.2, 0.2, model.n_controls)
    g0, K, G = model.assemble_tangents(x, v, u)
    B = model.assemble_B(x, v, u)
    K, G = K.toarray(), G.toarray()

    def fd_cols(fun, base, n_out):
        J = np.zeros((n_out, base.size))
        for j in range(base.size):
            dp, dm = base.copy(), base.copy()
            dp[j] += FD_EPS
            dm[j] -= FD_EPS
            J[:, j] = (fun(dp) - fun(dm)) / (2 * FD_EPS)
        return J

    fd_K = fd_cols(lambda xx: model.assemble_residual(xx, v, u), x, x.size)
    fd_G = fd_cols(lambda vv: model.assemble_residual(x, vv, u), v, x.size)
    fd_B = fd_cols(lambda uu: model.assemble_residual(x, v, uu), u, x.size)
    return {
        "assembly_K": np.abs(K - fd_K).max() / np.abs(K).max(),
        "assembly_G": np.abs(G - fd_G).max() / np.abs(G).max(),
        "assembly_B": np.abs(B - fd_B).max() / np.abs(B).max(),
    }


def run_all_audits(mu=100.0, lam=10.0, substrate=None, enhanced=True):
    substrate = substrate or {"mu_l": 2.0, "mu_f": 1.0, "mu_b": 0.25,
                              "beta": 0.1, "mu_o": 1e-3}
    mp = mat.MaterialParams(mu=mu, lam=lam)
    report = {
        "material_energy_stress": audit_energy_stress(mp),
        "material_stress_tangent": audit_stress_tangent(mp),
        "material_control_derivative": audit_control_derivative(mp),
        "substrate_traction_dv": audit_traction_derivative(substrate),
    }
    report.update(audit_assembly_tangents(mu, lam, substrate, enhanced))
    return report
