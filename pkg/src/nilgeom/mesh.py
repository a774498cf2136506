"""Grid discretization of translation-lattice nilmanifold quotients.

The fundamental domain [0,1) x [0,1) x [0, 1/k) carries a regular grid.
Crossing the x1-face applies the generator (1,0,0), whose left action
(x1, x2, x3) -> (x1+1, x2, x3+x2) shears the fiber index by j*s with
s = k*n3/n2 (required integer).  The gluing differential is the constant
matrix T = [[1,0,0],[0,1,0],[0,m,1]], so ghost values of tensors transport
exactly with no curvature correction from the chart change.

Metric fields store one SPD matrix per vertex in the coordinate frame
d/dx1, d/dx2, d/dx3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core
from .core import LeftInvariantMetric
from .lattice import Lattice


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    k: int
    dims: tuple

    def __post_init__(self):
        n1, n2, n3 = self.dims
        if min(self.dims) < 4:
            raise MeshError("resolution must be at least 4 per axis")
        if (self.k * n3) % n2 != 0:
            raise MeshError("k*n3 must be divisible by n2 (fiber twist integrality)")

    @property
    def n1(self):
        return self.dims[0]

    @property
    def n2(self):
        return self.dims[1]

    @property
    def n3(self):
        return self.dims[2]

    @property
    def twist(self) -> int:
        # fiber index shear applied per x2-step when wrapping the x1-face
        return (self.k * self.n3) // self.n2

    @property
    def spacings(self):
        return (1.0 / self.n1, 1.0 / self.n2, 1.0 / (self.k * self.n3))

    @property
    def n_vertices(self):
        return self.n1 * self.n2 * self.n3

    @property
    def w0(self) -> float:
        return 1.0 / self.k

    def coords(self):
        """Vertex coordinate arrays of shape (n1, n2, n3)."""
        h1, h2, h3 = self.spacings
        i, j, l = np.meshgrid(
            np.arange(self.n1), np.arange(self.n2), np.arange(self.n3), indexing="ij"
        )
        return i * h1, j * h2, l * h3

    def canonical(self, I, J, L):
        """Map arbitrary integer indices to fundamental-domain indices."""
        m = I // self.n1
        j = J % self.n2
        l = (L - m * J * self.twist) % self.n3
        return I - m * self.n1, j, l, m


def build_mesh(lattice: Lattice, dims) -> Mesh:
    """Mesh for a translation lattice gamma_k = <e1, e2, (0,0,1/k)>."""
    label = lattice.label
    gens = lattice.generators
    if len(gens) != 3 or any(
        np.max(np.abs(g.auto.D - np.eye(3))) > 1e-12 for g in gens
    ):
        raise MeshError(f"{label}: mesh construction requires a translation lattice")
    pts = sorted(g.translation.as_array().tolist() for g in gens)
    w0 = pts[0][2]
    k = round(1.0 / w0)
    expect = [[0.0, 0.0, 1.0 / k], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]
    if abs(k - 1.0 / w0) > 1e-9 or np.max(np.abs(np.array(pts) - expect)) > 1e-9:
        raise MeshError(f"{label}: generators are not in gamma_k normal form")
    return Mesh(k, tuple(dims))


# ---------------------------------------------------------------------------
# ghost transport and finite differences

_T_PLUS = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 1.0, 1.0]])  # dL_a
_T_MINUS = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 1.0]])


def _wrap_slab_indices(mesh: Mesh, step: int):
    """Fiber-index permutation applied to the slab that wraps the x1-face."""
    j = np.arange(mesh.n2)[:, None]
    l = np.arange(mesh.n3)[None, :]
    return j, (l - step * j * mesh.twist) % mesh.n3


def shifted(mesh: Mesh, values: np.ndarray, axis: int, step: int, kind: str):
    """Cover-field values at index + step*e_axis, as seen from each vertex.

    kind: 'scalar' | 'vector' | 'metric' | 'christoffel' - sets the
    transport rule applied to the slab that crosses the twisted x1-face.
    """
    out = np.roll(values, -step, axis=axis)
    if axis != 0:
        return out
    # the rolled slab at i = n1-1 (step +1) or i = 0 (step -1) crossed the
    # seam; re-read it with the fiber shear and apply the gluing transport
    T = _T_PLUS if step > 0 else _T_MINUS
    sl = mesh.n1 - 1 if step > 0 else 0
    src = 0 if step > 0 else mesh.n1 - 1
    j, l = _wrap_slab_indices(mesh, 1 if step > 0 else -1)
    slab = values[src][j, l]
    if kind == "scalar":
        pass
    elif kind == "vector":
        slab = np.einsum("ab,...b->...a", T, slab)
    elif kind == "metric":
        Tinv = np.linalg.inv(T)
        slab = np.einsum("ca,...cd,db->...ab", Tinv, slab, Tinv)
    elif kind == "christoffel":
        Tinv = np.linalg.inv(T)
        slab = np.einsum("kc,...cab,ai,bj->...kij", T, slab, Tinv, Tinv)
    else:
        raise ValueError(f"unknown transport kind {kind!r}")
    out[sl] = slab
    return out


def derivative(mesh: Mesh, values: np.ndarray, axis: int, kind: str):
    h = mesh.spacings[axis]
    return (
        shifted(mesh, values, axis, +1, kind) - shifted(mesh, values, axis, -1, kind)
    ) / (2.0 * h)


# ---------------------------------------------------------------------------
# metric fields


def coframe_matrix(x1):
    """Coordinate matrix J(x) of the left-invariant coframe
    (dx1, dx2, dx3 - x1 dx2); a frame-field value G becomes J^T G J."""
    x1 = np.asarray(x1)
    J = np.zeros(x1.shape + (3, 3))
    J[..., 0, 0] = 1.0
    J[..., 1, 1] = 1.0
    J[..., 2, 2] = 1.0
    J[..., 2, 1] = -x1
    return J


def pullback_homogeneous(G: LeftInvariantMetric, mesh: Mesh) -> np.ndarray:
    """Coordinate-frame field of a left-invariant metric; exact, no
    discretization error."""
    x1, _, _ = mesh.coords()
    J = coframe_matrix(x1)
    return np.einsum("...ai,ab,...bj->...ij", J, G.G, J)


def frame_average(mesh: Mesh, field: np.ndarray) -> LeftInvariantMetric:
    """Average of the field expressed back in the left-invariant frame."""
    x1, _, _ = mesh.coords()
    J = coframe_matrix(x1)
    Jinv = np.linalg.inv(J)
    G = np.einsum("...ia,...ij,...jb->...ab", Jinv, field, Jinv)
    return LeftInvariantMetric(G.mean(axis=(0, 1, 2)))


def check_spd(field: np.ndarray) -> None:
    w = np.linalg.eigvalsh(field)
    if w.min() <= 0:
        raise MeshError("metric field is not positive definite everywhere")


def volume(mesh: Mesh, field: np.ndarray) -> float:
    h1, h2, h3 = mesh.spacings
    return float(np.sum(np.sqrt(np.linalg.det(field))) * h1 * h2 * h3)


# ---------------------------------------------------------------------------
# finite-difference curvature

_PAIRS = [(0, 1), (0, 2), (1, 2)]


def _christoffels_from(ginv: np.ndarray, dg: np.ndarray) -> np.ndarray:
    # Gamma^k_ij = 1/2 g^kl (d_i g_jl + d_j g_il - d_l g_ij)
    sym = dg + np.swapaxes(dg, -3, -2) - np.moveaxis(dg, -3, -1)
    return 0.5 * np.einsum("...kl,...ijl->...kij", ginv, sym)


def christoffels(mesh: Mesh, field: np.ndarray) -> np.ndarray:
    dg = np.stack(
        [derivative(mesh, field, a, "metric") for a in range(3)], axis=-3
    )  # (..., a, i, j) = d_a g_ij
    return _christoffels_from(np.linalg.inv(field), dg)


def riemann_from(gamma: np.ndarray, dgamma: np.ndarray) -> np.ndarray:
    """R^l_{ijk} as (..., i, j, k, l) from Christoffels and their derivatives
    (dgamma[..., a, k, i, j] = d_a Gamma^k_ij)."""
    # R(d_i, d_j) d_k = d_i Gamma^l_jk - d_j Gamma^l_ik + Gamma Gamma terms
    return (
        np.einsum("...iljk->...ijkl", dgamma)
        - np.einsum("...jlik->...ijkl", dgamma)
        + np.einsum("...lim,...mjk->...ijkl", gamma, gamma)
        - np.einsum("...ljm,...mik->...ijkl", gamma, gamma)
    )


def curvature_tensors(mesh: Mesh, field: np.ndarray):
    """Returns (Riemann R^l_{ijk} as (...,i,j,k,l), Ricci (...,j,k), Gamma)."""
    gamma = christoffels(mesh, field)
    dgamma = np.stack(
        [derivative(mesh, gamma, a, "christoffel") for a in range(3)], axis=-4
    )  # (..., a, k, i, j) = d_a Gamma^k_ij
    R = riemann_from(gamma, dgamma)
    ric = np.einsum("...ijki->...jk", R)
    return R, ric, gamma


def operator_from_riemann(R: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Curvature operator on 2-forms in an orthonormal frame, per point."""
    Rdown = np.einsum("...ijkl,...lm->...ijkm", R, field)
    L = np.linalg.cholesky(field)
    M = np.swapaxes(np.linalg.inv(L), -1, -2)  # frame = coords @ M
    Rf = np.einsum("...abcd,...ai->...bcdi", Rdown, M)
    Rf = np.einsum("...bcdi,...bj->...cdij", Rf, M)
    Rf = np.einsum("...cdij,...ck->...dijk", Rf, M)
    Rf = np.einsum("...dijk,...dl->...ijkl", Rf, M)
    op = np.empty(field.shape[:-2] + (3, 3))
    for a, (i, j) in enumerate(_PAIRS):
        for b, (k, l) in enumerate(_PAIRS):
            op[..., a, b] = Rf[..., i, j, l, k]
    return 0.5 * (op + np.swapaxes(op, -1, -2))


def curvature_operator_field(mesh: Mesh, field: np.ndarray) -> np.ndarray:
    """Per-vertex curvature operator on 2-forms in an orthonormal frame."""
    R, _, _ = curvature_tensors(mesh, field)
    return operator_from_riemann(R, field)


def discrete_curvature(mesh: Mesh, field: np.ndarray):
    """(supRm estimate, per-vertex curvature operator eigenvalues)."""
    if min(mesh.dims) < 8:
        raise MeshError("discrete curvature requires resolution >= 8 per axis")
    check_spd(field)
    op = curvature_operator_field(mesh, field)
    w = np.linalg.eigvalsh(op)
    return float(np.max(np.abs(w))), w


# ---------------------------------------------------------------------------
# Ricci-DeTurck smoothing


def ricci_field(mesh: Mesh, field: np.ndarray, gamma: np.ndarray | None = None):
    """Ricci tensor by direct contraction, skipping the full Riemann tensor."""
    if gamma is None:
        gamma = christoffels(mesh, field)
    dgamma = np.stack(
        [derivative(mesh, gamma, a, "christoffel") for a in range(3)], axis=-4
    )
    tr = np.einsum("...aai->...i", gamma)
    return (
        np.einsum("...aajk->...jk", dgamma)
        - np.einsum("...jaak->...jk", dgamma)
        + np.einsum("...m,...mjk->...jk", tr, gamma)
        - np.einsum("...ajm,...mak->...jk", gamma, gamma)
    )


def _deturck_rhs(mesh: Mesh, field: np.ndarray, gamma_bg: np.ndarray):
    ginv = np.linalg.inv(field)
    dg = np.stack([derivative(mesh, field, a, "metric") for a in range(3)], axis=-3)
    gamma = _christoffels_from(ginv, dg)
    ric = ricci_field(mesh, field, gamma)
    W = np.einsum("...ij,...kij->...k", ginv, gamma - gamma_bg)
    dW = np.stack([derivative(mesh, W, a, "vector") for a in range(3)], axis=-2)
    # Lie derivative L_W g_ij = W^k d_k g_ij + g_kj d_i W^k + g_ik d_j W^k
    lie = (
        np.einsum("...k,...kij->...ij", W, dg)
        + np.einsum("...kj,...ik->...ij", field, dW)
        + np.einsum("...ik,...jk->...ij", field, dW)
    )
    return -2.0 * ric + lie


def smooth(
    mesh: Mesh,
    field: np.ndarray,
    tau: float,
    background: LeftInvariantMetric | None = None,
    cfl: float = 0.15,
):
    """Ricci-DeTurck flow for time tau with explicit stepping.

    The DeTurck vector field is built from the Christoffel difference with a
    homogeneous background (default: the frame-average of the input), which
    makes the evolution parabolic; for homogeneous inputs the gauge term
    vanishes and this is plain Ricci flow.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if tau == 0:
        return field.copy()
    check_spd(field)
    if background is None:
        background = frame_average(mesh, field)
    gamma_bg = christoffels(mesh, pullback_homogeneous(background, mesh))

    h = min(mesh.spacings)
    # parabolic CFL: dt ~ h^2 / max diffusivity (largest inverse-metric eig)
    field = field.copy()
    t = 0.0
    while t < tau:
        diff = float(np.max(np.linalg.eigvalsh(np.linalg.inv(field))))
        dt = min(cfl * h * h / diff, tau - t)
        if dt < 1e-14:
            raise MeshError("smoothing step size underflow")
        field = field + dt * _deturck_rhs(mesh, field, gamma_bg)
        w = np.linalg.eigvalsh(field)
        if w.min() <= 0:
            raise MeshError("metric lost positivity during smoothing")
        t += dt
    return field
