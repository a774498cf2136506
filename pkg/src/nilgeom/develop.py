"""Frame extraction and developing maps for locally-Nil metric patches.

A patch is a metric field on a simply connected coordinate box.  If its
curvature agrees with that of lambda^2 g_Nil, the positive-Ricci
eigendirection singles out the center direction f3; completing to an
orthonormal frame and integrating the left-invariant frame equations along
a spanning tree produces a discrete developing map into Nil that is an
isometric embedding up to O(h^2).
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import mesh as meshmod
from .core import NotPositiveDefinite

__all__ = [
    "DevelopError",
    "MetricPatch",
    "NilFrame",
    "Development",
    "patch_derivative",
    "patch_curvature",
    "verify_local_nil",
    "find_frame",
    "develop",
    "metric_residual",
]

# Curvature eigenvalues of g_Nil on 2-forms, orthonormal frame, ascending.
_NIL_OP_EIGS = np.array([-0.75, 0.25, 0.25])

# Connection coefficients of g_Nil in an orthonormal frame f with
# [f1, f2] = f3: nabla_{f_a} f_b = sum_d LAM[a, b, d] f_d.
_LAM = np.zeros((3, 3, 3))
_LAM[0, 1, 2] = 0.5
_LAM[1, 0, 2] = -0.5
_LAM[0, 2, 1] = -0.5
_LAM[2, 0, 1] = -0.5
_LAM[1, 2, 0] = 0.5
_LAM[2, 1, 0] = 0.5

# Holonomy-defect threshold per the design decision: 10 h^2 in scaled units.
DEFECT_FACTOR = 10.0


class DevelopError(RuntimeError):
    pass


@dataclass(frozen=True)
class MetricPatch:
    """Metric field on a simply connected coordinate box.

    values[i, j, l] is the coordinate metric at
    origin + (i h1, j h2, l h3); marked is the index triple of the marked
    point and must be interior; orientation is +-1 relative to the
    coordinate orientation.
    """

    values: np.ndarray
    spacings: tuple
    marked: tuple
    origin: tuple = (0.0, 0.0, 0.0)
    orientation: int = 1

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 5 or v.shape[3:] != (3, 3):
            raise ValueError("values must have shape (n1, n2, n3, 3, 3)")
        if min(v.shape[:3]) < 5:
            raise ValueError("patch needs at least 5 vertices per axis")
        if not all(h > 0 for h in self.spacings):
            raise ValueError("spacings must be positive")
        if self.orientation not in (1, -1):
            raise ValueError("orientation must be +-1")
        for a in range(3):
            if not 0 < self.marked[a] < v.shape[a] - 1:
                raise ValueError("marked point must be interior")
        if not np.allclose(v, np.swapaxes(v, -1, -2), atol=1e-12):
            raise NotPositiveDefinite("metric must be symmetric")
        eigs = np.linalg.eigvalsh(v)
        if np.min(eigs) <= 0:
            raise NotPositiveDefinite("metric must be positive definite")
        object.__setattr__(self, "values", v)

    @property
    def dims(self):
        return self.values.shape[:3]

    def h_max(self) -> float:
        return float(max(self.spacings))


@dataclass(frozen=True)
class NilFrame:
    """Orthonormal frame at the marked point; columns are f1, f2, f3 in
    coordinate components.  lam is the homothety scale of the patch, so the
    frame satisfies [f1, f2] = f3 / lam at the marked point."""

    matrix: np.ndarray
    lam: float
    bracket_component: float

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("frame matrix must be 3x3")
        object.__setattr__(self, "matrix", m)


@dataclass(frozen=True)
class Development:
    """Per-vertex developing map.  points[v] is the image of vertex v in the
    global chart; frames[v] the transported coordinate frame columns."""

    points: np.ndarray
    frames: np.ndarray
    lam: float
    max_defect: float
    defect_threshold: float


def patch_derivative(patch: MetricPatch, values: np.ndarray, axis: int) -> np.ndarray:
    return np.gradient(values, patch.spacings[axis], axis=axis, edge_order=2)


def _patch_christoffels(patch: MetricPatch) -> np.ndarray:
    ginv = np.linalg.inv(patch.values)
    dg = np.stack([patch_derivative(patch, patch.values, a) for a in range(3)], axis=-3)
    return meshmod._christoffels_from(ginv, dg)


def patch_curvature(patch: MetricPatch):
    """Riemann tensor, Ricci tensor and Christoffels on the whole box."""
    gamma = _patch_christoffels(patch)
    dgamma = np.stack(
        [patch_derivative(patch, gamma, a) for a in range(3)], axis=-4
    )
    R = meshmod.riemann_from(gamma, dgamma)
    ric = np.einsum("...ijki->...jk", R)
    return R, ric, gamma


def _interior(arr: np.ndarray, margin: int = 2) -> np.ndarray:
    m = margin
    return arr[m:-m, m:-m, m:-m]


def verify_local_nil(patch: MetricPatch, tol: float = 1e-2):
    """True iff the curvature matches lambda^2 g_Nil for some lambda.

    Compares the curvature-operator spectrum on the interior against the
    model (-3/4, 1/4, 1/4) / lambda^2; lambda comes from the curvature norm.
    """
    R, _, _ = patch_curvature(patch)
    op = meshmod.operator_from_riemann(R, patch.values)
    eigs = np.linalg.eigvalsh(_interior(op))
    sup = float(np.max(np.abs(eigs)))
    if sup < 1e-10:
        return False, float("inf")
    lam2 = 0.75 / sup
    dev = np.max(np.abs(eigs * lam2 - _NIL_OP_EIGS))
    return bool(dev < tol * 0.75), float(np.sqrt(lam2))


def _frame_field(patch: MetricPatch):
    """g-orthonormal frame field (f1, f2, f3 columns) with f3 the
    positive-Ricci eigendirection, sign-aligned across the box."""
    _, ric, _ = patch_curvature(patch)
    g = patch.values
    L = np.linalg.cholesky(g)
    M = np.swapaxes(np.linalg.inv(L), -1, -2)  # orthonormal frame = coords @ M
    ric_f = np.einsum("...ai,...ab,...bj->...ij", M, ric, M)
    mu, vec = np.linalg.eigh(ric_f)
    # Ricci spectrum of lambda^2 g_Nil in an orthonormal frame is
    # (-1/2, -1/2, +1/2) / lambda^2: demand an isolated top eigenvalue.
    spread = np.max(mu[..., 2] - mu[..., 0])
    gap = np.min(mu[..., 2] - mu[..., 1])
    if not (np.all(mu[..., 2] > 0) and gap > 0.25 * spread):
        raise DevelopError("degenerate Ricci spectrum: patch is not locally Nil")
    f3 = np.einsum("...ij,...j->...i", M, vec[..., 2])  # g-unit by construction

    # Deterministic sign at the marked point, continuity elsewhere.
    mi, mj, ml = patch.marked
    ref = f3[mi, mj, ml]
    ref = ref * np.sign(ref[np.argmax(np.abs(ref))])
    dots = np.einsum("...i,i->...", f3, ref)
    f3 = f3 * np.where(dots < 0, -1.0, 1.0)[..., None]

    # f1: the coordinate axis least aligned with f3 at the marked point,
    # projected g-orthogonal to f3 (same axis everywhere for continuity).
    align = np.abs(g[mi, mj, ml] @ f3[mi, mj, ml]) / np.sqrt(
        np.diagonal(g[mi, mj, ml])
    )
    c = int(np.argmin(align))
    e = np.zeros(3)
    e[c] = 1.0
    gf3 = np.einsum("...ij,...j->...i", g, f3)
    f1 = e - f3 * gf3[..., c : c + 1]  # e - <e, f3>_g f3 since |f3|_g = 1
    f1 = f1 / np.sqrt(np.einsum("...i,...ij,...j->...", f1, g, f1))[..., None]

    # f2: completion with coordinate determinant = patch orientation.
    gf1 = np.einsum("...ij,...j->...i", g, f1)
    c2 = (c + 1) % 3
    e2 = np.zeros(3)
    e2[c2] = 1.0
    f2 = e2 - f3 * gf3[..., c2 : c2 + 1] - f1 * gf1[..., c2 : c2 + 1]
    f2 = f2 / np.sqrt(np.einsum("...i,...ij,...j->...", f2, g, f2))[..., None]
    F = np.stack([f1, f2, f3], axis=-1)
    dets = np.linalg.det(F)
    flip = np.where(np.sign(dets) != patch.orientation, -1.0, 1.0)
    F[..., 1] *= flip[..., None]
    return F


def _bracket_component(patch: MetricPatch, F: np.ndarray) -> float:
    """<[f1, f2], f3>_g at the marked point, with the Lie bracket of the
    frame vector fields taken by finite differences."""
    f1, f2, f3 = F[..., 0], F[..., 1], F[..., 2]
    br = np.zeros_like(f1)
    for a in range(3):
        br += f1[..., a : a + 1] * patch_derivative(patch, f2, a)
        br -= f2[..., a : a + 1] * patch_derivative(patch, f1, a)
    comp = np.einsum("...i,...ij,...j->...", br, patch.values, f3)
    mi, mj, ml = patch.marked
    return float(comp[mi, mj, ml])


def find_frame(patch: MetricPatch) -> NilFrame:
    """Orthonormal frame at the marked point with f3 the center direction.

    The bracket of the completed frame field must have positive f3
    component; a negative value means the stated orientation is
    incompatible with the local Nil structure.
    """
    ok, lam = verify_local_nil(patch)
    if not ok:
        raise DevelopError("patch is not locally Nil to tolerance")
    F = _frame_field(patch)
    comp = _bracket_component(patch, F)
    if comp <= 0:
        raise DevelopError(
            "bracket normalization failed: orientation is incompatible "
            "with the local Nil structure"
        )
    mi, mj, ml = patch.marked
    return NilFrame(matrix=F[mi, mj, ml].copy(), lam=lam, bracket_component=comp)


def _mul_arr(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    out = p + q
    out[..., 2] += p[..., 0] * q[..., 1]
    return out


def _inv_arr(p: np.ndarray) -> np.ndarray:
    out = -p.copy()
    out[..., 2] += p[..., 0] * p[..., 1]
    return out


def _exp_arr(v: np.ndarray) -> np.ndarray:
    out = v.copy()
    out[..., 2] += 0.5 * v[..., 0] * v[..., 1]
    return out


def _log_arr(p: np.ndarray) -> np.ndarray:
    out = p.copy()
    out[..., 2] -= 0.5 * p[..., 0] * p[..., 1]
    return out


def _tree_edges(dims, marked):
    """Spanning-tree edges (u, v, axis, sign) in deterministic order: the
    axis-0 line through the marked point, then axis-1 lines, then axis-2."""
    n1, n2, n3 = dims
    mi, mj, ml = marked
    edges = []

    def line(fixed, axis, n, m):
        for t in range(m, n - 1):
            u = list(fixed)
            v = list(fixed)
            u[axis] = t
            v[axis] = t + 1
            edges.append((tuple(u), tuple(v), axis, 1))
        for t in range(m, 0, -1):
            u = list(fixed)
            v = list(fixed)
            u[axis] = t
            v[axis] = t - 1
            edges.append((tuple(u), tuple(v), axis, -1))

    line((mi, mj, ml), 0, n1, mi)
    for i in range(n1):
        line((i, mj, ml), 1, n2, mj)
    for i in range(n1):
        for j in range(n2):
            line((i, j, ml), 2, n3, ml)
    return edges


def _step(gamma_u, gamma_v, g_u, g_v, F_u, delta):
    """One transport step u -> v; midpoint rule for the frame equations.

    d f_b = -Gamma(delta, f_b) + sum_a c_a Lam[a, b, :] . f  with
    c = F^T g delta the frame components of the step.
    """

    def rhs(gamma, g, F):
        c = F.T @ (g @ delta)
        dF = -np.einsum("kij,i,jb->kb", gamma, delta, F)
        dF += np.einsum("a,abd,kd->kb", c, _LAM, F)
        return dF, c

    k1, _ = rhs(gamma_u, g_u, F_u)
    g_m = 0.5 * (g_u + g_v)
    gamma_m = 0.5 * (gamma_u + gamma_v)
    F_half = F_u + 0.5 * k1
    k2, c = rhs(gamma_m, g_m, F_half)
    F_v = F_u + k2
    # re-orthonormalize for g(v); the Cholesky correction is near-identity
    B = F_v.T @ g_v @ F_v
    F_v = F_v @ np.linalg.inv(np.linalg.cholesky(B)).T
    return F_v, c


def develop(patch: MetricPatch, frame: NilFrame, defect_factor: float = DEFECT_FACTOR):
    """Discrete developing map: integrates the frame field from the marked
    point along a spanning tree, sending the frame to the left-invariant
    frame of g_Nil at each image point.

    The marked point lands at the identity.  Holonomy defects on the
    non-tree edges beyond defect_factor * h^2 signal that the patch is not
    locally Nil (or not simply connected).
    """
    lam = frame.lam
    if not np.isfinite(lam) or lam <= 0:
        raise DevelopError("frame has no valid homothety scale")
    # rescale so the model is g_Nil itself; the frame stays orthonormal
    scaled = MetricPatch(
        values=patch.values / lam**2,
        spacings=patch.spacings,
        marked=patch.marked,
        origin=patch.origin,
        orientation=patch.orientation,
    )
    g = scaled.values
    gamma = _patch_christoffels(scaled)  # scale-invariant, but stay uniform
    dims = scaled.dims

    F = np.zeros(dims + (3, 3))
    y = np.zeros(dims + (3,))
    done = np.zeros(dims, dtype=bool)
    mi, mj, ml = patch.marked
    F[mi, mj, ml] = frame.matrix * lam
    done[mi, mj, ml] = True

    for u, v, axis, sign in _tree_edges(dims, patch.marked):
        if done[v]:
            continue
        delta = np.zeros(3)
        delta[axis] = sign * patch.spacings[axis]
        F_v, c = _step(gamma[u], gamma[v], g[u], g[v], F[u], delta)
        F[v] = F_v
        y[v] = _mul_arr(y[u], _exp_arr(c))
        done[v] = True
    if not done.all():
        raise DevelopError("spanning tree did not cover the patch")

    # holonomy: predicted step on every grid edge vs. the assigned vertex
    max_defect = 0.0
    for axis in range(3):
        sl_u = [slice(None)] * 3
        sl_v = [slice(None)] * 3
        sl_u[axis] = slice(0, -1)
        sl_v[axis] = slice(1, None)
        sl_u, sl_v = tuple(sl_u), tuple(sl_v)
        g_m = 0.5 * (g[sl_u] + g[sl_v])
        F_m = 0.5 * (F[sl_u] + F[sl_v])
        delta = np.zeros(3)
        delta[axis] = patch.spacings[axis]
        c = np.einsum("...ki,...kl,l->...i", F_m, g_m, delta)
        pred = _mul_arr(y[sl_u], _exp_arr(c))
        gap = _log_arr(_mul_arr(_inv_arr(pred), y[sl_v]))
        max_defect = max(max_defect, float(np.max(np.abs(gap))))
    threshold = defect_factor * patch.h_max() ** 2
    scale = float(np.sqrt(np.max(np.linalg.eigvalsh(g))))
    threshold *= max(1.0, scale)
    if max_defect > threshold:
        raise DevelopError(
            f"holonomy defect {max_defect:.3e} exceeds {threshold:.3e}: "
            "patch is not locally Nil or not simply connected"
        )
    return Development(
        points=y,
        frames=F,
        lam=lam,
        max_defect=max_defect,
        defect_threshold=threshold,
    )


def metric_residual(patch: MetricPatch, dev: Development) -> float:
    """Sup over grid edges of the gap between the pulled-back g_Nil edge
    length and the patch edge length, relative to the squared edge length.

    The developed image carries lam^2 g_Nil; edge vectors are compared
    through |log(y_u^-1 y_v)|^2 against delta^T g delta at the midpoint.
    """
    g = patch.values
    y = dev.points
    lam2 = dev.lam**2
    G_nil = np.eye(3)
    worst = 0.0
    for axis in range(3):
        sl_u = [slice(None)] * 3
        sl_v = [slice(None)] * 3
        sl_u[axis] = slice(0, -1)
        sl_v[axis] = slice(1, None)
        sl_u, sl_v = tuple(sl_u), tuple(sl_v)
        vec = _log_arr(_mul_arr(_inv_arr(y[sl_u]), y[sl_v]))
        q_dev = lam2 * np.einsum("...i,ij,...j->...", vec, G_nil, vec)
        h = patch.spacings[axis]
        q_g = 0.5 * (g[sl_u][..., axis, axis] + g[sl_v][..., axis, axis]) * h**2
        worst = max(worst, float(np.max(np.abs(q_dev - q_g) / q_g)))
    return worst
