"""Structured hexahedral meshes of the cuboid body.

All meshes are boxes L x B_y x B_z discretised into trilinear 8-node bricks.
Node numbering is lexicographic with x fastest; element corner order follows
the (-,-,-), (+,-,-), (+,+,-), (-,+,-), (-,-,+), (+,-,+), (+,+,+), (-,+,+)
parametric sign pattern, so local corners 0 and 1 always span the body axis.
The contact surface is the bottom (min-z) face and friction is integrated
over reference facets, so facet geometry is precomputed once.

The muscle layout splits the cross-section into a ventral and a dorsal
chamber, mirrored across the split plane.  The split axis is 'z' (bottom vs
top, used by bending/inching actuation) or 'y' (left vs right, used by
in-plane undulation).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateEdgeError, MeshError

# Parametric corner signs of the 8-node brick, matching the shape functions.
CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, 1],
        [1, -1, 1],
        [1, 1, 1],
        [-1, 1, 1],
    ],
    dtype=float,
)

# Local corner ids of the bottom (zeta = -1) face, counter-clockwise seen
# from below; their (xi, eta) signs reproduce the bilinear facet basis.
BOTTOM_FACE = np.array([0, 1, 2, 3])

# 3-point Gauss rule on [-1, 1]: exact for polynomials up to degree 5.
GAUSS_3 = (
    np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)]),
    np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0]),
)


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss points on the parametric cube or facet square."""

    points: np.ndarray  # (nq, 3) volume or (nq, 2) surface
    weights: np.ndarray  # (nq,)

    @classmethod
    def volume(cls):
        x, w = GAUSS_3
        pts = np.array([(a, b, c) for c in x for b in x for a in x])
        wts = np.array([wa * wb * wc for wc in w for wb in w for wa in w])
        return cls(points=pts, weights=wts)

    @classmethod
    def surface(cls):
        x, w = GAUSS_3
        pts = np.array([(a, b) for b in x for a in x])
        wts = np.array([wa * wb for wb in w for wa in w])
        return cls(points=pts, weights=wts)


def shape_functions(xi, eta, zeta):
    """Trilinear brick basis at one parametric point.

    Returns (values (8,), parametric gradients (8, 3)).  Values form a
    partition of unity and the gradients sum to zero.
    """
    s = CORNER_SIGNS
    fx = 1.0 + s[:, 0] * xi
    fy = 1.0 + s[:, 1] * eta
    fz = 1.0 + s[:, 2] * zeta
    vals = 0.125 * fx * fy * fz
    grads = 0.125 * np.stack(
        [s[:, 0] * fy * fz, fx * s[:, 1] * fz, fx * fy * s[:, 2]], axis=1
    )
    return vals, grads


def facet_shape_functions(xi, eta):
    """Bilinear basis of a facet (4 values + parametric gradients (4, 2))."""
    s = CORNER_SIGNS[BOTTOM_FACE, :2]
    fx = 1.0 + s[:, 0] * xi
    fy = 1.0 + s[:, 1] * eta
    vals = 0.25 * fx * fy
    grads = 0.25 * np.stack([s[:, 0] * fy, fx * s[:, 1]], axis=1)
    return vals, grads


@dataclass(frozen=True)
class Mesh:
    """Immutable structured hex mesh with contact facets and muscle layout.

    Arrays are read-only; the mesh can be shared freely across threads.
    """

    nodes: np.ndarray  # (n_nodes, 3) reference coordinates
    elements: np.ndarray  # (n_elems, 8) node ids, corner order as above
    facet_elements: np.ndarray  # (n_facets,) element id carrying the facet
    facet_nodes: np.ndarray  # (n_facets, 4) global node ids (bottom face)
    facet_normals: np.ndarray  # (n_facets, 3) outward reference normal
    fiber_dir: np.ndarray  # (n_elems, 3) unit muscle direction
    chamber: np.ndarray  # (n_elems,) 0 = ventral, 1 = dorsal
    ventral_of: np.ndarray  # (n_pairs,) ventral element ids
    dorsal_of: np.ndarray  # (n_pairs,) paired dorsal element ids
    dims: tuple  # (L, By, Bz)
    shape: tuple  # (nx, ny, nz)
    chamber_axis: str = "z"
    columns: np.ndarray = field(default=None)  # (n_elems,) longitudinal column

    def __post_init__(self):
        for name in (
            "nodes",
            "elements",
            "facet_elements",
            "facet_nodes",
            "facet_normals",
            "fiber_dir",
            "chamber",
            "ventral_of",
            "dorsal_of",
            "columns",
        ):
            getattr(self, name).setflags(write=False)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def n_columns(self):
        return self.shape[0]

    def element_coords(self, x=None):
        """Nodal coordinates gathered per element, shape (n_elems, 8, 3)."""
        pts = self.nodes if x is None else x
        return pts[self.elements]

    def to_json_dict(self):
        return {
            "nodes": self.nodes.tolist(),
            "elements": self.elements.tolist(),
            "facet_elements": self.facet_elements.tolist(),
            "facet_nodes": self.facet_nodes.tolist(),
            "facet_normals": self.facet_normals.tolist(),
            "dims": list(self.dims),
            "shape": list(self.shape),
            "chamber": self.chamber.tolist(),
            "chamber_axis": self.chamber_axis,
        }


def build_box_mesh(L, By, nx, ny, nz, ventral_split=0.5, chamber_axis="z",
                   Bz=None, pair_chambers=True, contact="bottom"):
    """Build the structured box mesh with chambers and contact facets.

    L x By x Bz box with nx x ny x nz elements.  Bz defaults to By (square
    cross-section).  Chambers mirror across the split plane at fraction
    `ventral_split` of the cross axis; the ventral side is the low-coordinate
    side and pairing mirrors element stacks across the plane.  Meshes that
    never drive a chamber dipole (audits, frictionless statics) may skip
    pairing; `contact` selects the frictional surface ("bottom" or "none").
    """
    if Bz is None:
        Bz = By
    if L <= 0 or By <= 0 or Bz <= 0:
        raise MeshError(f"box dimensions must be positive, got {(L, By, Bz)}")
    if nx < 1 or ny < 1 or nz < 1:
        raise MeshError(f"element counts must be >= 1, got {(nx, ny, nz)}")
    if chamber_axis not in ("y", "z"):
        raise MeshError(f"chamber_axis must be 'y' or 'z', got {chamber_axis!r}")
    if contact not in ("bottom", "none"):
        raise MeshError(f"contact must be 'bottom' or 'none', got {contact!r}")
    n_pair = ny if chamber_axis == "y" else nz
    if pair_chambers and n_pair % 2 != 0:
        raise MeshError(
            f"chamber pairing along {chamber_axis!r} needs an even element "
            f"count, got {n_pair}"
        )

    xs = np.linspace(0.0, L, nx + 1)
    ys = np.linspace(0.0, By, ny + 1)
    zs = np.linspace(0.0, Bz, nz + 1)
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def nid(ix, iy, iz):
        return ix + (nx + 1) * (iy + (ny + 1) * iz)

    offsets = np.array(
        [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
         (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
    )
    elements = np.empty((nx * ny * nz, 8), dtype=np.int64)
    centroids = np.empty((nx * ny * nz, 3))
    columns = np.empty(nx * ny * nz, dtype=np.int64)
    e = 0
    for ez in range(nz):
        for ey in range(ny):
            for ex in range(nx):
                elements[e] = [nid(ex + o[0], ey + o[1], ez + o[2])
                               for o in offsets]
                centroids[e] = [(ex + 0.5) * L / nx,
                                (ey + 0.5) * By / ny,
                                (ez + 0.5) * Bz / nz]
                columns[e] = ex
                e += 1

    # Contact surface: the whole bottom (z = 0) face, outward normal -Z.
    if contact == "bottom":
        bottom = np.flatnonzero(centroids[:, 2] < Bz / nz)
    else:
        bottom = np.zeros(0, dtype=np.int64)
    facet_elements = bottom.astype(np.int64)
    facet_nodes = elements[bottom][:, BOTTOM_FACE] if len(bottom) \
        else np.zeros((0, 4), dtype=np.int64)
    facet_normals = np.tile([0.0, 0.0, -1.0], (len(bottom), 1))

    fiber_dir = np.tile([1.0, 0.0, 0.0], (elements.shape[0], 1))

    axis = 1 if chamber_axis == "y" else 2
    width = By if chamber_axis == "y" else Bz
    split = ventral_split * width
    chamber = (centroids[:, axis] > split).astype(np.int8)
    if pair_chambers and ((chamber == 0).sum() == 0
                          or (chamber == 1).sum() == 0):
        raise MeshError(
            f"ventral_split={ventral_split} leaves one chamber empty"
        )

    # Mirror pairing across the split plane: element stack index i on the
    # ventral side pairs with n_pair - 1 - i on the dorsal side.
    ventral, dorsal = [], []
    if pair_chambers:
        n_cross = ny if chamber_axis == "y" else nz
        for e in np.flatnonzero(chamber == 0):
            idx = _stack_index(e, nx, ny, axis)
            mirrored = n_cross - 1 - idx
            partner = e + (mirrored - idx) * (nx if axis == 1 else nx * ny)
            if chamber[partner] != 1:
                raise MeshError("chamber pairing failed: mirror partner ventral")
            ventral.append(e)
            dorsal.append(partner)
    ventral_of = np.array(ventral, dtype=np.int64)
    dorsal_of = np.array(dorsal, dtype=np.int64)
    if len(np.unique(dorsal_of)) != len(dorsal_of):
        raise MeshError("chamber pairing is not a bijection")

    mesh = Mesh(
        nodes=nodes,
        elements=elements,
        facet_elements=facet_elements,
        facet_nodes=facet_nodes,
        facet_normals=facet_normals,
        fiber_dir=fiber_dir,
        chamber=chamber,
        ventral_of=ventral_of,
        dorsal_of=dorsal_of,
        dims=(float(L), float(By), float(Bz)),
        shape=(nx, ny, nz),
        chamber_axis=chamber_axis,
        columns=columns,
    )
    _check_jacobians(mesh)
    return mesh


def _stack_index(e, nx, ny, axis):
    ey = (e // nx) % ny
    ez = e // (nx * ny)
    return ey if axis == 1 else ez


def _check_jacobians(mesh):
    quad = QuadratureRule.volume()
    for e in range(mesh.n_elements):
        xe = mesh.nodes[mesh.elements[e]]
        for q in range(len(quad.weights)):
            _, det = referential_gradients_point(xe, quad.points[q])
            if det <= 0.0:
                raise MeshError(f"element {e} has non-positive Jacobian")


def referential_gradients_point(xe, point):
    """Reference gradients of the 8 basis functions at one parametric point.

    xe is the element's reference coordinates (8, 3).  Returns
    (grad (8, 3) with rows grad_X N^a, det J of the isoparametric map).
    """
    _, dN = shape_functions(*point)
    jac = xe.T @ dN  # jac[i, j] = dX_i / dxi_j
    det = float(np.linalg.det(jac))
    if det <= 0.0 or not np.isfinite(det):
        raise MeshError(f"singular isoparametric map, det={det}")
    grad = dN @ np.linalg.inv(jac)
    return grad, det


def referential_gradients(mesh, element, point):
    """Spec-facing wrapper naming the element by id for diagnostics."""
    xe = mesh.nodes[mesh.elements[element]]
    try:
        return referential_gradients_point(xe, point)
    except MeshError as exc:
        raise MeshError(f"element {element}: {exc}") from exc


def precompute_volume(mesh, quad=None):
    """Reference gradients and weighted volumes for every (element, point).

    Returns (gradN (E, Q, 8, 3), wdet (E, Q)) with wdet the quadrature
    weight times det J, i.e. the reference volume measure.
    """
    quad = quad or QuadratureRule.volume()
    E, Q = mesh.n_elements, len(quad.weights)
    gradN = np.empty((E, Q, 8, 3))
    wdet = np.empty((E, Q))
    for e in range(E):
        xe = mesh.nodes[mesh.elements[e]]
        for q in range(Q):
            g, det = referential_gradients_point(xe, quad.points[q])
            gradN[e, q] = g
            wdet[e, q] = det * quad.weights[q]
    return gradN, wdet


def precompute_surface(mesh, quad=None):
    """Facet basis values and weighted areas on the reference contact facets.

    Returns (Nf (F, Qs, 4), warea (F, Qs)).  Facet geometry is evaluated in
    the reference configuration; friction integrals never update it.
    """
    quad = quad or QuadratureRule.surface()
    F, Q = len(mesh.facet_elements), len(quad.weights)
    Nf = np.empty((F, Q, 4))
    warea = np.empty((F, Q))
    for f in range(F):
        xf = mesh.nodes[mesh.facet_nodes[f]]
        for q in range(Q):
            xi, eta = quad.points[q]
            vals, grads = facet_shape_functions(xi, eta)
            t1 = xf.T @ grads[:, 0]
            t2 = xf.T @ grads[:, 1]
            Nf[f, q] = vals
            warea[f, q] = np.linalg.norm(np.cross(t1, t2)) * quad.weights[q]
    return Nf, warea


def element_tangent(xe, eps_geom=1e-12):
    """Unit body-axis tangent of an element and its two nonzero derivatives.

    The tangent runs from local node 0 to local node 1 (the element's axis
    edge).  Returns (tau (3,), dtau_dx0 (3, 3), dtau_dx1 (3, 3)).
    """
    d = xe[1] - xe[0]
    dist = np.linalg.norm(d)
    if dist <= eps_geom:
        raise DegenerateEdgeError(
            f"axis edge length {dist:.3e} below tolerance {eps_geom:.3e}"
        )
    tau = d / dist
    dtau_dx1 = (np.eye(3) - np.outer(tau, tau)) / dist
    return tau, -dtau_dx1, dtau_dx1


def element_tangents_batch(x_elems, eps_geom=1e-12):
    """Vectorised tangents for a batch of element coordinate arrays.

    x_elems is (E, 8, 3); returns (tau (E, 3), dtau (E, 3, 3)) where dtau is
    the derivative w.r.t. local node 1 (node 0 carries the negative).
    """
    d = x_elems[:, 1] - x_elems[:, 0]
    dist = np.linalg.norm(d, axis=1)
    if (dist <= eps_geom).any():
        bad = int(np.argmin(dist))
        raise DegenerateEdgeError(
            f"axis edge of element batch entry {bad} collapsed "
            f"({dist[bad]:.3e} <= {eps_geom:.3e})"
        )
    tau = d / dist[:, None]
    eye = np.eye(3)[None]
    dtau = (eye - tau[:, :, None] * tau[:, None, :]) / dist[:, None, None]
    return tau, dtau
