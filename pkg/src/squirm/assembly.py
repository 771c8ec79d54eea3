"""Global FE assembly: residual g(x, v, u), tangents, centroid, energies.

The semi-discrete balance reads g = g_int - g_ext with

    g_int^a = int_e  J_g P_e F_g^{-T} grad_X N^a dV
    g_ext^a = -(D1 + D2 + Mbar) v     (friction + bulk drag, velocity-linear
                                       apart from the tanh switch)

and the tangents K = d g / d x, G = d g / d v, B = d g / d u carry the exact
surface terms from the deformation dependence of the element axis tangent
and the tanh regularisation.  Dirichlet conditions are imposed by DOF
elimination, so every operator handed to the solvers is square over the free
DOFs and nonsingular whenever mu_o > 0.

Element technology: the plain trilinear brick locks in bending (parasitic
shear stiffens the slender-body response by O((h/B)^2), an order-one error
at the production grids), so by default each element carries three
incompatible bubble displacement modes (1 - xi^2 etc.).  Their nine internal
parameters solve the element-local equilibrium at every evaluated state and
are condensed exactly out of K and B, which keeps the state/adjoint
machinery and all derivative audits untouched.  `enhanced=False` recovers
the plain brick.

Assembly is vectorised over (element, quadrature point) batches; scatters
use np.add.at and a fixed COO pattern, so two assemblies of the same state
are bit-identical.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import material as mat
from .errors import ElementInversionError
from .mesh import (
    QuadratureRule,
    element_tangents_batch,
    precompute_surface,
    precompute_volume,
    referential_gradients_point,
    shape_functions,
)


def _precompute_bubble_gradients(mesh, quad):
    """Reference gradients of the three incompatible bubbles per element.

    Bubble m has parametric shape 1 - s_m^2 (s = xi, eta, zeta) and
    vanishes on the element boundary mid-planes; returns (E, Q, 3, 3).
    """
    E, Q = mesh.n_elements, len(quad.weights)
    gradP = np.empty((E, Q, 3, 3))
    for e in range(E):
        xe = mesh.nodes[mesh.elements[e]]
        for q in range(Q):
            xi, eta, zeta = quad.points[q]
            _, dN = shape_functions(xi, eta, zeta)
            jac = xe.T @ dN
            dP_param = np.diag([-2.0 * xi, -2.0 * eta, -2.0 * zeta])
            gradP[e, q] = dP_param @ np.linalg.inv(jac)
    return gradP

ANTAGONISTIC = "antagonistic"
SYNERGISTIC = "synergistic"


class _ModeDivergence(Exception):
    """Internal: the element-mode Newton failed from this starting point."""

    def __init__(self, residual_norm):
        self.residual_norm = residual_norm
        super().__init__(f"mode residual stalled at {residual_norm:.3e}")


@dataclass(frozen=True)
class ControlMap:
    """Association of control channels with (element, sign) sets.

    Element-level growth is u_e = sign_e * u_channel(e); elements with
    channel -1 carry zero growth.  For dipole maps the ventral element of a
    pair takes sign +1 and the dorsal one the polarity sign (-1
    antagonistic, +1 synergistic).
    """

    n_channels: int
    element_channel: np.ndarray  # (E,) int, -1 when uncontrolled
    element_sign: np.ndarray  # (E,) float
    s_coords: np.ndarray  # (n_channels,) normalised arclength of channel

    def __post_init__(self):
        self.element_channel.setflags(write=False)
        self.element_sign.setflags(write=False)
        self.s_coords.setflags(write=False)

    def expand(self, u_channels):
        """Per-element growth values from channel values."""
        u_channels = np.asarray(u_channels, dtype=float)
        u_elem = np.zeros(self.element_channel.shape[0])
        active = self.element_channel >= 0
        u_elem[active] = (
            self.element_sign[active] * u_channels[self.element_channel[active]]
        )
        return u_elem

    @classmethod
    def column_dipole(cls, mesh, polarity):
        """One channel per longitudinal element column, chamber dipole.

        The channel value is the ventral growth; the paired dorsal elements
        carry the polarity sign.
        """
        if polarity not in (ANTAGONISTIC, SYNERGISTIC):
            raise ValueError(f"unknown polarity {polarity!r}")
        sign = -1.0 if polarity == ANTAGONISTIC else 1.0
        nx = mesh.shape[0]
        chan = np.full(mesh.n_elements, -1, dtype=np.int64)
        sgn = np.zeros(mesh.n_elements)
        chan[mesh.ventral_of] = mesh.columns[mesh.ventral_of]
        sgn[mesh.ventral_of] = 1.0
        chan[mesh.dorsal_of] = mesh.columns[mesh.dorsal_of]
        sgn[mesh.dorsal_of] = sign
        s = (np.arange(nx) + 0.5) / nx
        return cls(n_channels=nx, element_channel=chan, element_sign=sgn,
                   s_coords=s)

    @classmethod
    def per_element(cls, mesh):
        """Every element is its own channel (audits and small test meshes)."""
        E = mesh.n_elements
        cent = mesh.nodes[mesh.elements].mean(axis=1)
        s = cent[:, 0] / mesh.dims[0]
        return cls(
            n_channels=E,
            element_channel=np.arange(E, dtype=np.int64),
            element_sign=np.ones(E),
            s_coords=s,
        )

    @classmethod
    def uniform_column(cls, mesh):
        """One channel per column applied with sign +1 to every element."""
        nx = mesh.shape[0]
        s = (np.arange(nx) + 0.5) / nx
        return cls(
            n_channels=nx,
            element_channel=mesh.columns.copy(),
            element_sign=np.ones(mesh.n_elements),
            s_coords=s,
        )


@dataclass(frozen=True)
class DofMap:
    """Free/constrained DOF bookkeeping for elimination-style Dirichlet."""

    n_full: int
    fixed_mask: np.ndarray  # (n_full,) bool
    fixed_values: np.ndarray  # (n_full,) values on fixed DOFs, 0 elsewhere
    free_idx: np.ndarray  # (n_free,)
    free_of_full: np.ndarray  # (n_full,) position in free vector or -1

    @classmethod
    def build(cls, n_full, fixed_mask=None, fixed_values=None):
        if fixed_mask is None:
            fixed_mask = np.zeros(n_full, dtype=bool)
        fixed_mask = np.asarray(fixed_mask, dtype=bool)
        vals = np.zeros(n_full)
        if fixed_values is not None:
            vals[fixed_mask] = np.asarray(fixed_values, dtype=float)[fixed_mask]
        free_idx = np.flatnonzero(~fixed_mask)
        free_of_full = np.full(n_full, -1, dtype=np.int64)
        free_of_full[free_idx] = np.arange(free_idx.size)
        return cls(
            n_full=n_full,
            fixed_mask=fixed_mask,
            fixed_values=vals,
            free_idx=free_idx,
            free_of_full=free_of_full,
        )

    @property
    def n_free(self):
        return self.free_idx.size

    def reduce(self, full_vec):
        return np.asarray(full_vec).ravel()[self.free_idx]

    def expand_positions(self, free_vec):
        full = self.fixed_values.copy()
        full[self.free_idx] = free_vec
        return full

    def expand_velocities(self, free_vec):
        full = np.zeros(self.n_full)
        full[self.free_idx] = free_vec
        return full


class FEModel:
    """Assembled global system over the free DOFs of one scenario.

    Heavy per-mesh data (reference gradients, facet geometry, mass matrices,
    scatter index tables) is computed once here; all assemble_* calls are
    pure functions of the handed state.
    """

    def __init__(self, mesh, material_params, friction, viscous, control_map,
                 fixed_mask=None, fixed_values=None, enhanced=True,
                 mode_tol=1e-10, mode_max_iter=30):
        self.mesh = mesh
        self.material = material_params
        self.friction = friction
        self.viscous = viscous
        self.cmap = control_map
        self.enhanced = enhanced
        self.mode_tol = mode_tol
        self.mode_max_iter = mode_max_iter

        self.n_nodes = mesh.n_nodes
        self.n_full = 3 * mesh.n_nodes
        self.n_controls = control_map.n_channels
        self.dofs = DofMap.build(self.n_full, fixed_mask, fixed_values)
        self.eps_geom = 1e-10 * mesh.dims[0]
        # Trust cap for Newton increments: an element edge, or a twentieth
        # of the body length for slender meshes whose transients are global
        # bending modes (low strain per unit displacement).
        L, By, Bz = mesh.dims
        nx, ny, nz = mesh.shape
        self.newton_step_cap = max(min(L / nx, By / ny, Bz / nz), 0.05 * L)

        quad = QuadratureRule.volume()
        self.gradN, self.wdet = precompute_volume(mesh, quad)
        self.Nvol = np.stack(
            [shape_functions(*p)[0] for p in quad.points]
        )  # (Q, 8)
        self.Nf, self.warea = precompute_surface(mesh)
        if enhanced:
            self.gradP = _precompute_bubble_gradients(mesh, quad)

        self._build_mass_and_centroid()
        self._build_scatter_tables()
        self.x_ref_full = mesh.nodes.ravel().copy()
        # Fixed positions default to their reference values unless the
        # caller supplied explicit boundary data.
        if fixed_values is None:
            self.dofs.fixed_values[self.dofs.fixed_mask] = self.x_ref_full[
                self.dofs.fixed_mask
            ]
        self.x_init = self.dofs.reduce(self.x_ref_full)

    # -- construction helpers -------------------------------------------------

    def _build_mass_and_centroid(self):
        mesh = self.mesh
        # Elemental mass distribution int_e N^a dV and Gram int_e N^a N^b dV.
        elam = np.einsum("eq,qa->ea", self.wdet, self.Nvol)
        lamw = np.zeros(self.n_nodes)
        np.add.at(lamw, mesh.elements, elam)
        self.volume = lamw.sum()
        self.centroid_weights = lamw / self.volume

        gram = np.einsum("eq,qa,qb->eab", self.wdet, self.Nvol, self.Nvol)
        rows = np.repeat(mesh.elements, 8, axis=1)  # (E, 64)
        cols = np.tile(mesh.elements, (1, 8))
        mass = sp.coo_matrix(
            (gram.reshape(-1), (rows.ravel(), cols.ravel())),
            shape=(self.n_nodes, self.n_nodes),
        ).tocsr()
        eye3 = sp.identity(3, format="csr")
        self.M = sp.kron(mass, eye3, format="csr")  # node-major 3N x 3N
        self.M_bar = (self.viscous.mu_o * self.M).tocsr()

    def _build_scatter_tables(self):
        mesh = self.mesh
        # DOF ids per element (E, 24) in node-major component order.
        edofs = (3 * mesh.elements[:, :, None] + np.arange(3)).reshape(
            mesh.n_elements, 24
        )
        self._vol_rows = np.repeat(edofs, 24, axis=1).ravel()
        self._vol_cols = np.tile(edofs, (1, 24)).ravel()

        fdofs = (3 * mesh.facet_nodes[:, :, None] + np.arange(3)).reshape(
            len(mesh.facet_elements), 12
        )
        self._surf_rows = np.repeat(fdofs, 12, axis=1).ravel()
        self._surf_cols = np.tile(fdofs, (1, 12)).ravel()

        # K surface block couples facet rows to the axis nodes (locals 0, 1)
        # of the carrying element.
        axis_nodes = mesh.elements[mesh.facet_elements][:, :2]
        adofs = (3 * axis_nodes[:, :, None] + np.arange(3)).reshape(-1, 6)
        self._surfk_rows = np.repeat(fdofs, 6, axis=1).ravel()
        self._surfk_cols = np.tile(adofs, (1, 12)).ravel()

        mbar = self.M_bar.tocoo()
        self._mbar_rows = mbar.row
        self._mbar_cols = mbar.col
        self._mbar_data = mbar.data

    # -- state handling --------------------------------------------------------

    def full_positions(self, x_free):
        return self.dofs.expand_positions(x_free)

    def full_velocities(self, v_free):
        return self.dofs.expand_velocities(v_free)

    @property
    def n_free(self):
        return self.dofs.n_free

    # -- pointwise batched kinematics ------------------------------------------

    def _element_states(self, x_full, u_channels):
        """Growth and stress state at every quadrature point.

        With enhancement on, the nine incompatible-mode parameters of every
        element are driven to element-local equilibrium first, so the
        returned state already sits on the condensed manifold.
        """
        mesh = self.mesh
        xe = x_full.reshape(-1, 3)[mesh.elements]  # (E, 8, 3)
        F_c = np.einsum("eai,eqaj->eqij", xe, self.gradN)
        u_elem = self.cmap.expand(u_channels)
        growth = mat.growth_tensors(u_elem[:, None], mesh.fiber_dir[:, None, :])
        if not self.enhanced:
            state = mat.neo_hookean(F_c, growth, self.material,
                                    element_of=np.arange(mesh.n_elements))
            return xe, u_elem, growth, state, None
        amodes, state = self._solve_modes(F_c, growth)
        return xe, u_elem, growth, state, amodes

    def _mode_vectors(self, growth, state):
        """F_g^{-T} grad P and F^{-T} grad P for the bubble carriers."""
        F_invT = np.swapaxes(mat._inv3(state.F, state.J), -1, -2)
        gvec = np.einsum("eij,eqmj->eqmi", growth.F_g_inv[:, 0], self.gradP)
        fvec = np.einsum("eqij,eqmj->eqmi", F_invT, self.gradP)
        return gvec, fvec

    def _hyper_blocks(self, growth, state, gvec_a, fvec_a, gvec_b=None,
                      fvec_b=None):
        """Internal tangent blocks between two sets of gradient carriers.

        Implements the three-term structure of the Neo-Hookean tangent for
        arbitrary carrier gradients (nodal shape functions or bubbles);
        returns (E, A, 3, B, 3).
        """
        mp = self.material
        if gvec_b is None:
            gvec_b, fvec_b = gvec_a, fvec_a
        w_jg = self.wdet * growth.J_g
        coef = mp.lam * state.ln_J_e - mp.mu
        k1 = np.einsum("eq,eqai,eqbi->eab", w_jg * mp.mu, gvec_a, gvec_b)
        blk = np.einsum("eq,eqai,eqbk->eaibk", w_jg * mp.lam, fvec_a, fvec_b)
        blk -= np.einsum("eq,eqbi,eqak->eaibk", w_jg * coef, fvec_b, fvec_a)
        blk += k1[:, :, None, :, None] * np.eye(3)[None, None, :, None, :]
        return blk

    def _solve_modes(self, F_c, growth):
        """Element-local solve for the incompatible-mode parameters.

        Warm-started from the last converged parameters so the condensed
        state tracks one equilibrium branch continuously along the outer
        iteration path (strongly compressed elements develop multiple mode
        equilibria, and branch-hopping would make the residual
        discontinuous in x).  A cold start is the fallback.
        """
        E = self.mesh.n_elements
        starts = []
        warm = getattr(self, "_mode_warm", None)
        if warm is not None and warm.shape[0] == E:
            starts.append(warm)
        starts.append(np.zeros((E, 3, 3)))
        last_exc = None
        for a0 in starts:
            try:
                a, state = self._mode_newton(F_c, growth, a0)
                self._mode_warm = a.copy()
                return a, state
            except (ElementInversionError, _ModeDivergence) as exc:
                last_exc = exc
        from .errors import NewtonDivergenceError
        raise NewtonDivergenceError(
            -1, getattr(last_exc, "residual_norm", np.nan),
            "incompatible-mode condensation") from last_exc

    def _mode_newton(self, F_c, growth, a0):
        E = self.mesh.n_elements
        elem_of = np.arange(E)
        a = a0.copy()

        def evaluate(a_try):
            F = F_c + np.einsum("emi,eqmj->eqij", a_try, self.gradP)
            state = mat.neo_hookean(F, growth, self.material,
                                    element_of=elem_of)
            P_tot = state.P_e @ growth.cof_F_g
            h = np.einsum("eq,eqij,eqmj->emi", self.wdet, P_tot, self.gradP)
            return state, h

        state, h = evaluate(a)
        for _ in range(self.mode_max_iter):
            h_norm = np.abs(h).max()
            if h_norm < self.mode_tol:
                return a, state
            gvecP, fvecP = self._mode_vectors(growth, state)
            Kaa = self._hyper_blocks(growth, state, gvecP, fvecP)
            da = np.linalg.solve(Kaa.reshape(E, 9, 9),
                                 h.reshape(E, 9, 1))[:, :, 0].reshape(E, 3, 3)
            scale = 1.0
            for _ in range(10):
                try:
                    trial_state, trial_h = evaluate(a - scale * da)
                except ElementInversionError:
                    scale *= 0.5
                    continue
                if np.isfinite(trial_h).all() \
                        and np.abs(trial_h).max() < h_norm:
                    break
                scale *= 0.5
            else:
                raise _ModeDivergence(h_norm)
            a = a - scale * da
            state, h = trial_state, trial_h
        raise _ModeDivergence(np.abs(h).max())

    def _facet_kinematics(self, x_full, v_full):
        """Contact frame and slip state per facet quadrature point.

        The tangential direction is the element axis projected onto the
        substrate plane and renormalised, which keeps {n, tau, zeta}
        orthonormal for a tilted body and the traction free of any normal
        component; dtau is the in-plane derivative w.r.t. the axis head
        node (the tail carries the negative).
        """
        mesh = self.mesh
        n = self.friction.normal
        plane = np.eye(3) - np.outer(n, n)
        xe = x_full.reshape(-1, 3)[mesh.elements[mesh.facet_elements]]
        d = (xe[:, 1] - xe[:, 0]) @ plane.T
        dist = np.linalg.norm(d, axis=1)
        if (dist <= self.eps_geom).any():
            from .errors import DegenerateEdgeError
            raise DegenerateEdgeError(
                "element axis is normal to the substrate on a contact facet")
        tau = d / dist[:, None]
        dtau = (np.eye(3)[None] - tau[:, :, None] * tau[:, None, :]) \
            @ plane[None] / dist[:, None, None]
        vf = v_full.reshape(-1, 3)[mesh.facet_nodes]  # (F, 4, 3)
        v_q = np.einsum("fqa,fai->fqi", self.Nf, vf)  # (F, Qs, 3)
        slip = np.einsum("fqi,fi->fq", v_q, tau)
        c = np.tanh(slip / self.friction.beta)
        return tau, dtau, v_q, slip, c

    # -- residual ---------------------------------------------------------------

    def assemble_residual(self, x_free, v_free, u_channels):
        """Free-DOF residual g = g_int - g_ext at the given state."""
        x_full = self.full_positions(x_free)
        v_full = self.full_velocities(v_free)
        g_full = self._residual_full(x_full, v_full, u_channels)
        return self.dofs.reduce(g_full)

    def _residual_full(self, x_full, v_full, u_channels):
        mesh = self.mesh
        _, _, growth, state, _ = self._element_states(x_full, u_channels)
        P = state.P_e @ growth.cof_F_g  # J_g P_e F_g^{-T}
        ge = np.einsum("eq,eqij,eqaj->eai", self.wdet, P, self.gradN)
        g = np.zeros((self.n_nodes, 3))
        np.add.at(g, mesh.elements, ge)

        # g_ext = g_s + g_v with g_s^a = int N^a t_o dGamma and g_v = -Mbar v;
        # the residual subtracts both.
        if len(mesh.facet_elements):
            tau, _, v_q, slip, c = self._facet_kinematics(x_full, v_full)
            t = self._traction_batch(tau, v_q, slip, c)
            gs = np.einsum("fq,fqa,fqi->fai", self.warea, self.Nf, t)
            np.add.at(g, mesh.facet_nodes, -gs)
        g = g.ravel()
        g += self.M_bar @ v_full
        return g

    def _traction_batch(self, tau, v_q, slip, c):
        fp = self.friction
        n = fp.normal
        mu_t = fp.mu_t_mean + fp.mu_t_half_gap * c  # (F, Qs)
        v_pi = v_q - np.einsum("fqi,i->fq", v_q, n)[..., None] * n
        tau_v = slip[..., None] * tau[:, None, :]
        return -(fp.mu_l * v_pi + (mu_t - fp.mu_l)[..., None] * tau_v)

    # -- tangents ----------------------------------------------------------------

    def assemble_tangents(self, x_free, v_free, u_channels):
        """(g, K, G) at the state; K = dg/dx and G = dg/dv over free DOFs."""
        x_full = self.full_positions(x_free)
        v_full = self.full_velocities(v_free)
        mesh = self.mesh
        _, _, growth, state, _ = self._element_states(x_full, u_channels)

        # Residual (reuses the element stress loop results).
        P = state.P_e @ growth.cof_F_g
        ge = np.einsum("eq,eqij,eqaj->eai", self.wdet, P, self.gradN)
        g = np.zeros((self.n_nodes, 3))
        np.add.at(g, mesh.elements, ge)
        g = g.ravel()
        g += self.M_bar @ v_full

        kblk = self._internal_stiffness_blocks(growth, state)
        data_k = [kblk.reshape(-1)]
        rows_k = [self._vol_rows]
        cols_k = [self._vol_cols]

        data_g = [self._mbar_data]
        rows_g = [self._mbar_rows]
        cols_g = [self._mbar_cols]

        if len(mesh.facet_elements):
            fp = self.friction
            tau, dtau, v_q, slip, c = self._facet_kinematics(x_full, v_full)
            t = self._traction_batch(tau, v_q, slip, c)
            gs = np.zeros((self.n_nodes, 3))
            gsf = np.einsum("fq,fqa,fqi->fai", self.warea, self.Nf, t)
            np.add.at(gs, mesh.facet_nodes, gsf)
            g -= gs.ravel()

            sech2 = 1.0 - c * c
            n = fp.normal
            plane = np.eye(3) - np.outer(n, n)
            tau_outer = tau[:, :, None] * tau[:, None, :]  # (F, 3, 3)

            # G surface blocks: D1 + D2 + W-term.
            gram = np.einsum("fq,fqa,fqb->fab", self.warea, self.Nf, self.Nf)
            c_gram = np.einsum("fq,fq,fqa,fqb->fab", self.warea, c,
                               self.Nf, self.Nf)
            w_gram = np.einsum("fq,fq,fqa,fqb->fab", self.warea,
                               sech2 * slip, self.Nf, self.Nf)
            base = (fp.mu_l * plane[None]
                    + (fp.mu_t_mean - fp.mu_l) * tau_outer)
            gblk = (
                gram[:, :, None, :, None] * base[:, None, :, None, :]
                + (fp.mu_t_half_gap * c_gram)[:, :, None, :, None]
                * tau_outer[:, None, :, None, :]
                + (fp.mu_t_half_gap / fp.beta * w_gram)[:, :, None, :, None]
                * tau_outer[:, None, :, None, :]
            )
            data_g.append(gblk.reshape(-1))
            rows_g.append(self._surf_rows)
            cols_g.append(self._surf_cols)

            # K surface blocks through the tangent's shape dependence.
            bracket = (fp.mu_t_mean - fp.mu_l) + fp.mu_t_half_gap * c
            m1 = (slip[..., None, None] * np.eye(3)[None, None]
                  + tau[:, None, :, None] * v_q[:, :, None, :])
            coef2 = (fp.mu_t_half_gap / fp.beta) * sech2 * slip
            h_pre = (bracket[..., None, None] * m1
                     + coef2[..., None, None]
                     * (tau[:, None, :, None] * v_q[:, :, None, :]))
            s_blk = np.einsum("fq,fqa,fqij->faij", self.warea, self.Nf, h_pre)
            h1 = np.einsum("faij,fjk->faik", s_blk, dtau)
            kblk_s = np.stack([-h1, h1], axis=3)  # (F, 4, 3, 2, 3)
            data_k.append(kblk_s.reshape(-1))
            rows_k.append(self._surfk_rows)
            cols_k.append(self._surfk_cols)

        K = sp.coo_matrix(
            (np.concatenate(data_k),
             (np.concatenate(rows_k), np.concatenate(cols_k))),
            shape=(self.n_full, self.n_full),
        ).tocsr()
        G = sp.coo_matrix(
            (np.concatenate(data_g),
             (np.concatenate(rows_g), np.concatenate(cols_g))),
            shape=(self.n_full, self.n_full),
        ).tocsr()
        free = self.dofs.free_idx
        return self.dofs.reduce(g), K[free][:, free], G[free][:, free]

    def _internal_stiffness_blocks(self, growth, state):
        """Nodal 24x24 internal stiffness, mode-condensed when enhanced."""
        F_invT = np.swapaxes(mat._inv3(state.F, state.J), -1, -2)
        gvecN = np.einsum("eij,eqaj->eqai", growth.F_g_inv[:, 0], self.gradN)
        fvecN = np.einsum("eqij,eqaj->eqai", F_invT, self.gradN)
        kxx = self._hyper_blocks(growth, state, gvecN, fvecN)
        if not self.enhanced:
            return kxx
        E = self.mesh.n_elements
        gvecP, fvecP = self._mode_vectors(growth, state)
        kxa = self._hyper_blocks(growth, state, gvecN, fvecN, gvecP, fvecP)
        kaa = self._hyper_blocks(growth, state, gvecP, fvecP)
        kax = self._hyper_blocks(growth, state, gvecP, fvecP, gvecN, fvecN)
        kxa = kxa.reshape(E, 24, 9)
        kax = kax.reshape(E, 9, 24)
        corr = kxa @ np.linalg.solve(kaa.reshape(E, 9, 9), kax)
        return kxx - corr.reshape(E, 8, 3, 8, 3)

    def assemble_B(self, x_free, v_free, u_channels):
        """Control tangent dg/du over free DOFs, one column per channel."""
        x_full = self.full_positions(x_free)
        mesh = self.mesh
        _, _, growth, state, _ = self._element_states(x_full, u_channels)
        Jg_DuPe, Jmat = mat.control_derivatives_from_state(state, self.material)
        integrand = Jg_DuPe @ growth.F_g_inv + state.P_e @ Jmat
        be = np.einsum("eq,eqij,eqaj->eai", self.wdet, integrand, self.gradN)
        if self.enhanced:
            # Chain rule through the condensed modes: the element growth
            # moves the mode equilibrium, d a / d u_e = -Kaa^{-1} b_a.
            E = mesh.n_elements
            ba = np.einsum("eq,eqij,eqmj->emi", self.wdet, integrand,
                           self.gradP)
            F_invT = np.swapaxes(mat._inv3(state.F, state.J), -1, -2)
            gvecN = np.einsum("eij,eqaj->eqai", growth.F_g_inv[:, 0],
                              self.gradN)
            fvecN = np.einsum("eqij,eqaj->eqai", F_invT, self.gradN)
            gvecP, fvecP = self._mode_vectors(growth, state)
            kxa = self._hyper_blocks(growth, state, gvecN, fvecN, gvecP,
                                     fvecP).reshape(E, 24, 9)
            kaa = self._hyper_blocks(growth, state, gvecP,
                                     fvecP).reshape(E, 9, 9)
            da = np.linalg.solve(kaa, ba.reshape(E, 9, 1))
            be = be - (kxa @ da)[:, :, 0].reshape(E, 8, 3)

        B = np.zeros((self.n_nodes, 3, self.n_controls))
        active = self.cmap.element_channel >= 0
        elems = np.flatnonzero(active)
        chan = self.cmap.element_channel[elems]
        sgn = self.cmap.element_sign[elems]
        vals = be[elems] * sgn[:, None, None]
        np.add.at(
            B,
            (mesh.elements[elems][:, :, None],
             np.arange(3)[None, None, :],
             chan[:, None, None]),
            vals,
        )
        return B.reshape(self.n_full, self.n_controls)[self.dofs.free_idx]

    # -- centroid and objective pieces -------------------------------------------

    def centroid(self, x_free):
        x_full = self.full_positions(x_free).reshape(-1, 3)
        return self.centroid_weights @ x_full

    def centroid_forcing(self, x_free, x_d):
        """Lambda^T (Lambda x - x_d) over free DOFs."""
        err = self.centroid(x_free) - np.asarray(x_d, dtype=float)
        full = self.centroid_weights[:, None] * err[None, :]
        return self.dofs.reduce(full.ravel())

    def tracking_error(self, x_free, x_d):
        err = self.centroid(x_free) - np.asarray(x_d, dtype=float)
        return 0.5 * float(err @ err)

    # -- energies -----------------------------------------------------------------

    def internal_energy(self, x_free, u_channels):
        x_full = self.full_positions(x_free)
        _, _, _, state, _ = self._element_states(x_full, u_channels)
        return float(np.einsum("eq,eq->", self.wdet, state.psi))

    def dissipation_powers(self, x_free, v_free, u_channels=None):
        """(viscous power, frictional power), both non-negative."""
        x_full = self.full_positions(x_free)
        v_full = self.full_velocities(v_free)
        visc = float(v_full @ (self.M_bar @ v_full))
        fric = 0.0
        if len(self.mesh.facet_elements):
            tau, _, v_q, slip, c = self._facet_kinematics(x_full, v_full)
            t = self._traction_batch(tau, v_q, slip, c)
            fric = -float(np.einsum("fq,fqi,fqi->", self.warea, t, v_q))
        return visc, fric
