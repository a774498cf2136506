"""Cochain calculus and harmonic 1-forms on twisted grid quotients.

Cells are anchored at fundamental-domain vertices: three edges and three
faces per vertex.  Faces dual to the fiber direction that touch the twisted
x1-seam are (4+s)-gons whose boundary includes s fiber edges, which closes
every boundary loop exactly; d1 @ d0 = 0 is then an integer-combinatorial
identity.  Inner products on cochains are diagonal (lowest-order DEC).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh, MeshError, volume

# face types by normal direction: 0 -> (e2,e3) face, 1 -> (e1,e3), 2 -> (e1,e2)

SOLVER_TOL = 1e-12


class HodgeError(ValueError):
    pass


@dataclass(frozen=True)
class DiscreteForm:
    degree: int
    values: np.ndarray
    domain: str = "mesh"  # 'mesh' or 'base'

    def __post_init__(self):
        if self.degree not in (0, 1, 2):
            raise HodgeError("form degree must be 0, 1 or 2")


@dataclass(frozen=True)
class HarmonicBasis:
    forms: tuple  # two degree-1 DiscreteForms
    gram: np.ndarray
    potentials: np.ndarray  # 0-form potentials subtracted from the seeds

    def __post_init__(self):
        if np.linalg.eigvalsh(self.gram).min() <= 0:
            raise HodgeError("harmonic Gram matrix must be SPD")


@dataclass(frozen=True)
class TorusData:
    periods: np.ndarray  # columns = periods of the basis over generating loops
    g_y: np.ndarray
    base_dims: tuple

    def __post_init__(self):
        if abs(np.linalg.det(self.periods)) < 1e-9:
            raise HodgeError("degenerate period lattice")


def _vid(mesh: Mesh, i, j, l):
    return (i * mesh.n2 + j) * mesh.n3 + l


def _canon_vid(mesh: Mesh, I, J, L):
    i, j, l, _ = mesh.canonical(I, J, L)
    return _vid(mesh, i, j, l)


def edge_index(mesh: Mesh, i, j, l, a):
    return 3 * _vid(mesh, i, j, l) + a


def face_index(mesh: Mesh, i, j, l, normal):
    return 3 * _vid(mesh, i, j, l) + normal


_STEPS = ((1, 0, 0), (0, 1, 0), (0, 0, 1))


def _canon_vid_grid(mesh: Mesh, di, dj, dl):
    """Canonical vertex ids of every grid point shifted by (di, dj, dl)."""
    I, J, L = np.meshgrid(
        np.arange(mesh.n1), np.arange(mesh.n2), np.arange(mesh.n3), indexing="ij"
    )
    I = I + di
    J = J + dj
    L = L + dl
    m = I // mesh.n1
    i = I - m * mesh.n1
    j = J % mesh.n2
    l = (L - m * J * mesh.twist) % mesh.n3
    return ((i * mesh.n2 + j) * mesh.n3 + l).reshape(-1)


_MATRIX_CACHE: dict = {}


def d0_matrix(mesh: Mesh) -> sp.csr_matrix:
    key = ("d0", mesh.k, mesh.dims)
    if key in _MATRIX_CACHE:
        return _MATRIX_CACHE[key]
    V = mesh.n_vertices
    vid = np.arange(V)
    rows, cols, vals = [], [], []
    for a, (di, dj, dl) in enumerate(_STEPS):
        e = 3 * vid + a
        rows += [e, e]
        cols += [_canon_vid_grid(mesh, di, dj, dl), vid]
        vals += [np.ones(V, dtype=np.int64), -np.ones(V, dtype=np.int64)]
    out = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(3 * V, V),
        dtype=np.int64,
    )
    _MATRIX_CACHE[key] = out
    return out


def d1_matrix(mesh: Mesh) -> sp.csr_matrix:
    key = ("d1", mesh.k, mesh.dims)
    if key in _MATRIX_CACHE:
        return _MATRIX_CACHE[key]
    n1, n2, n3 = mesh.dims
    V = mesh.n_vertices
    s = mesh.twist
    vid = np.arange(V)
    here = _canon_vid_grid(mesh, 0, 0, 0)
    plus1 = _canon_vid_grid(mesh, 1, 0, 0)
    plus2 = _canon_vid_grid(mesh, 0, 1, 0)
    plus3 = _canon_vid_grid(mesh, 0, 0, 1)
    ones = np.ones(V, dtype=np.int64)
    rows, cols, vals = [], [], []

    def add(face, edge, sign):
        rows.append(face)
        cols.append(edge)
        vals.append(sign * ones if np.ndim(sign) == 0 else sign)

    # normal 0: (e2, e3) squares
    f = 3 * vid + 0
    add(f, 3 * here + 1, 1)
    add(f, 3 * plus2 + 2, 1)
    add(f, 3 * plus3 + 1, -1)
    add(f, 3 * here + 2, -1)
    # normal 1: (e1, e3) squares
    f = 3 * vid + 1
    add(f, 3 * here + 0, 1)
    add(f, 3 * plus1 + 2, 1)
    add(f, 3 * plus3 + 0, -1)
    add(f, 3 * here + 2, -1)
    # normal 2: (e1, e2) faces; seam faces pick up s fiber edges
    f = 3 * vid + 2
    add(f, 3 * here + 0, 1)
    add(f, 3 * plus1 + 1, 1)
    add(f, 3 * plus2 + 0, -1)
    add(f, 3 * here + 1, -1)
    if s > 0:
        # for anchors at i = n1 - 1: descend from canon(v+e1)+e2 to
        # canon(v+e1+e2) along s fiber edges, traversed negatively
        j, l = np.meshgrid(np.arange(n2), np.arange(n3), indexing="ij")
        jj = j.reshape(-1)
        ll = ((l - j * s) % n3).reshape(-1)  # canon of (n1, j, l)
        seam_face = 3 * ((np.repeat(n1 - 1, n2 * n3) * n2 + jj) * n3 + l.reshape(-1)) + 2
        for t in range(1, s + 1):
            j2 = (jj + 1) % n2
            l2 = (ll - t) % n3
            add(seam_face, 3 * (j2 * n3 + l2) + 2, -np.ones(n2 * n3, dtype=np.int64))
    out = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(3 * V, 3 * V),
        dtype=np.int64,
    )
    _MATRIX_CACHE[key] = out
    return out


def betti_one(mesh: Mesh) -> int:
    """First Betti number from exact ranks of the coarse boundary maps.

    Metric-independent; a coarse complex of the same lattice suffices."""
    d0 = d0_matrix(mesh).toarray().astype(float)
    d1 = d1_matrix(mesh).toarray().astype(float)
    r0 = np.linalg.matrix_rank(d0, tol=1e-8)
    r1 = np.linalg.matrix_rank(d1, tol=1e-8)
    return d0.shape[0] - r0 - r1


def euler_characteristic(mesh: Mesh) -> int:
    V = mesh.n_vertices
    return V - 3 * V + 3 * V - V


# ---------------------------------------------------------------------------
# metric inner products


def star1_weights(mesh: Mesh, field: np.ndarray) -> np.ndarray:
    """Diagonal 1-cochain inner product: edge weight approximating
    integral of |component|^2 over the dual volume."""
    h = mesh.spacings
    cell = h[0] * h[1] * h[2]
    ginv = np.linalg.inv(field)
    dens = np.sqrt(np.linalg.det(field))
    W = np.empty(mesh.dims + (3,))
    for a in range(3):
        q = ginv[..., a, a] * dens  # gluing-invariant for each edge type
        q_fwd = np.roll(q, -1, axis=a)
        if a == 0:
            j = np.arange(mesh.n2)[:, None]
            l = np.arange(mesh.n3)[None, :]
            q_fwd[-1] = q[0][j, (l - j * mesh.twist) % mesh.n3]
        W[..., a] = 0.5 * (q + q_fwd) * cell / h[a] ** 2
    return W.reshape(-1)


def reference_one_forms(mesh: Mesh):
    """Edge cochains of dx1 and dx2 (exact integrals; closed exactly)."""
    h1, h2, _ = mesh.spacings
    E = 3 * mesh.n_vertices
    a1 = np.zeros(E)
    a2 = np.zeros(E)
    a1[0::3] = h1
    a2[1::3] = h2
    return DiscreteForm(1, a1), DiscreteForm(1, a2)


def _poisson_solve(L: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    rhs = rhs - rhs.mean()
    diag = L.diagonal()
    Minv = sp.diags(1.0 / diag)
    x, info = spla.cg(L, rhs, rtol=SOLVER_TOL, atol=0.0, maxiter=20000, M=Minv)
    if info != 0:
        raise HodgeError(f"Poisson solver did not converge (info={info})")
    return x - x.mean()


def harmonic_one_forms(mesh: Mesh, field: np.ndarray) -> HarmonicBasis:
    """Harmonic representatives of the two torus classes and their Gram
    matrix under the volume-averaged inner product."""
    if betti_one(Mesh(mesh.k, (4, 4, max(4, mesh.k)))) != 2:
        raise HodgeError("harmonic kernel dimension is not 2")
    d0 = d0_matrix(mesh)
    W = star1_weights(mesh, field)
    L = (d0.T.astype(float).multiply(W) @ d0.astype(float)).tocsr()
    seeds = reference_one_forms(mesh)
    vol = volume(mesh, field)
    forms, pots = [], []
    for seed in seeds:
        rhs = d0.T.astype(float) @ (W * seed.values)
        f = _poisson_solve(L, rhs)
        pots.append(f)
        forms.append(DiscreteForm(1, seed.values - d0 @ f))
    gram = np.empty((2, 2))
    for a in range(2):
        for b in range(2):
            gram[a, b] = forms[a].values @ (W * forms[b].values) / vol
    return HarmonicBasis(tuple(forms), gram, np.array(pots))


def coclosed_residual(mesh: Mesh, field: np.ndarray, form: DiscreteForm) -> float:
    d0 = d0_matrix(mesh)
    W = star1_weights(mesh, field)
    r = d0.T.astype(float) @ (W * form.values)
    scale = float(np.max(np.abs(W * form.values))) or 1.0
    return float(np.max(np.abs(r))) / scale


def generating_loops(mesh: Mesh):
    """Edge index lists of the two generating 1-cycles (x1- and x2-loops)."""
    loop1 = [edge_index(mesh, i, 0, 0, 0) for i in range(mesh.n1)]
    loop2 = [edge_index(mesh, 0, j, 0, 1) for j in range(mesh.n2)]
    return loop1, loop2


def build_torus(basis: HarmonicBasis, mesh: Mesh) -> TorusData:
    loops = generating_loops(mesh)
    P = np.array(
        [[form.values[loop].sum() for form in basis.forms] for loop in loops]
    ).T  # P[a, c] = period of form a over loop c
    g_y = np.linalg.inv(basis.gram)
    return TorusData(P, g_y, (mesh.n1, mesh.n2))


def period_map(mesh: Mesh, basis: HarmonicBasis, basepoint=(0, 0, 0)) -> np.ndarray:
    """phi values per vertex from spanning-tree path sums of the basis forms.

    Tree: from the basepoint walk e1 to fix i, then e2, then e3; every tree
    edge stays inside the fundamental domain so no identification is crossed.
    """
    n1, n2, n3 = mesh.dims
    phi = np.zeros((n1, n2, n3, 2))
    i0, j0, l0 = basepoint
    vals = [form.values for form in basis.forms]
    for c in range(2):
        v = vals[c].reshape(n1, n2, n3, 3)
        # cumulative sums along the tree, rebased at the basepoint
        along1 = np.concatenate(
            [np.zeros((1, 1, 1)), np.cumsum(v[:-1, :1, :1, 0], axis=0)], axis=0
        )
        along2 = np.concatenate(
            [np.zeros((n1, 1, 1)), np.cumsum(v[:, :-1, :1, 1], axis=1)], axis=1
        )
        along3 = np.concatenate(
            [np.zeros((n1, n2, 1)), np.cumsum(v[:, :, :-1, 2], axis=2)], axis=2
        )
        total = along1 + along2 + along3
        phi[..., c] = total - total[i0, j0, l0]
    return phi


def d_base_matrices(dims):
    """d0, d1 of the standard n1 x n2 torus grid complex."""
    n1, n2 = dims
    V = n1 * n2

    def vid(i, j):
        return (i % n1) * n2 + (j % n2)

    rows0, cols0, vals0 = [], [], []
    rows1, cols1, vals1 = [], [], []
    for i in range(n1):
        for j in range(n2):
            v = vid(i, j)
            for a, (di, dj) in enumerate(((1, 0), (0, 1))):
                e = 2 * v + a
                rows0 += [e, e]
                cols0 += [vid(i + di, j + dj), v]
                vals0 += [1, -1]
            f = v
            rows1 += [f, f, f, f]
            cols1 += [2 * v + 0, 2 * vid(i + 1, j) + 1, 2 * vid(i, j + 1) + 0, 2 * v + 1]
            vals1 += [1, 1, -1, -1]
    d0 = sp.csr_matrix((vals0, (rows0, cols0)), shape=(2 * V, V), dtype=np.int64)
    d1 = sp.csr_matrix((vals1, (rows1, cols1)), shape=(V, 2 * V), dtype=np.int64)
    return d0, d1


def base_star_weights(torus: TorusData):
    """Diagonal inner-product weights on base 1- and 2-cochains for the
    constant metric g_Y on the unit-period coordinate torus."""
    n1, n2 = torus.base_dims
    b1, b2 = 1.0 / n1, 1.0 / n2
    gy = torus.g_y
    gyinv = np.linalg.inv(gy)
    dens = np.sqrt(np.linalg.det(gy))
    cell = b1 * b2
    V = n1 * n2
    W1 = np.empty(2 * V)
    W1[0::2] = gyinv[0, 0] * dens * cell / b1**2
    W1[1::2] = gyinv[1, 1] * dens * cell / b2**2
    W2 = np.full(V, 1.0 / (dens * cell))
    return W1, W2
