"""Ricci flow through left-invariant metrics on Nil.

The flow dG/dt = -2 Ric(G) preserves left-invariance, so it reduces to an
ODE on symmetric positive-definite 3x3 matrices.  For diagonal data the
system closes up in u = C/(AB) with du/dt = -3 u^2, giving the explicit
solution used as this module's oracle; the derivation is reproduced in
closed_form_diagonal's docstring and re-verified by the test suite.

Also here: the scale-invariant almost-flatness ratio supRm * diam^2, with
the quotient diameter computed as a graph-geodesic diameter on a mesh of
the fundamental domain, and the empirical stability schedule whose
interval lengths double as the curvature scale halves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from . import core, lattice as lattice_mod
from .core import G_NIL, LeftInvariantMetric, NilPoint
from .lattice import Lattice


class FlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class FlowState:
    t: float
    metric: LeftInvariantMetric


@dataclass(frozen=True)
class FlowTrajectory:
    states: tuple
    sup_rm: tuple
    ratios: tuple = ()

    def __post_init__(self):
        times = [s.t for s in self.states]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise FlowError("trajectory times must be strictly increasing")

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    def final(self) -> LeftInvariantMetric:
        return self.states[-1].metric


# ---------------------------------------------------------------------------
# right-hand side and integration

_IDX = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def flow_rhs(g: LeftInvariantMetric) -> np.ndarray:
    """-2 Ric(G) as a symmetric matrix in the X-basis.

    For diagonal G = diag(A, B, C) this equals diag(A nu^2, B nu^2, -C nu^2)
    with nu^2 = C/(AB).
    """
    return -2.0 * core.ricci(g)


def _pack(G: np.ndarray) -> np.ndarray:
    return np.array([G[i, j] for i, j in _IDX])


def _unpack(y: np.ndarray) -> np.ndarray:
    G = np.empty((3, 3))
    for v, (i, j) in zip(y, _IDX):
        G[i, j] = G[j, i] = v
    return G


def integrate(
    g0: LeftInvariantMetric,
    t_end: float,
    tol: float = 1e-10,
    n_samples: int = 65,
    lattice: Lattice | None = None,
    diam_grid: int = 6,
) -> FlowTrajectory:
    """Adaptive embedded Runge-Kutta integration of the homogeneous flow.

    The flow is immortal for Nil, so loss of positivity at any sample is an
    integrator failure, not expected behavior.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")

    def rhs(t, y):
        return _pack(flow_rhs(LeftInvariantMetric(_unpack(y))))

    ts = np.linspace(0.0, t_end, n_samples)
    sol = solve_ivp(
        rhs,
        (0.0, t_end),
        _pack(g0.G),
        method="DOP853",
        rtol=tol,
        atol=tol * 1e-2,
        t_eval=ts,
        dense_output=True,
    )
    if not sol.success:
        raise FlowError(f"integration failed: {sol.message}")

    states = []
    sup = []
    ratios = []
    for t, y in zip(sol.t, sol.y.T):
        try:
            g = LeftInvariantMetric(_unpack(y))
        except core.NotPositiveDefinite as exc:
            raise FlowError(f"metric lost positivity at t={t}") from exc
        states.append(FlowState(float(t), g))
        sup.append(core.sup_rm(g))
        if lattice is not None:
            ratios.append(
                almost_flat_ratio(g, lattice, n=diam_grid, richardson=False)
            )
    return FlowTrajectory(tuple(states), tuple(sup), tuple(ratios))


def closed_form_diagonal(g0: LeftInvariantMetric, t: float) -> LeftInvariantMetric:
    """Explicit solution for diagonal initial data diag(A0, B0, C0).

    Derivation from flow_rhs: with nu^2 = u = C/(AB) the system reads
    A' = A u, B' = B u, C' = -C u, hence u'/u = C'/C - A'/A - B'/B = -3u,
    i.e. du/dt = -3 u^2 and u(t) = u0 / (1 + 3 u0 t).  Then
    (log A)' = u integrates to A = A0 (1 + 3 u0 t)^{1/3}, likewise B, and
    C = C0 (1 + 3 u0 t)^{-1/3}.
    """
    G = g0.G
    if np.max(np.abs(G - np.diag(np.diag(G)))) > 1e-12:
        raise ValueError("closed_form_diagonal requires diagonal input")
    A0, B0, C0 = np.diag(G)
    u0 = C0 / (A0 * B0)
    s = (1.0 + 3.0 * u0 * t) ** (1.0 / 3.0)
    return LeftInvariantMetric.diagonal(A0 * s, B0 * s, C0 / s)


def closed_form(g0: LeftInvariantMetric, t: float) -> LeftInvariantMetric:
    """Explicit solution for arbitrary left-invariant initial data.

    Any G0 is lam^2 D^T D for an automorphism derivative D (homothety
    decomposition), i.e. the pullback of lam^2 * id; naturality under the
    fixed automorphism plus parabolic rescaling reduce to the diagonal
    solution started at the identity.
    """
    lam, phi = core.homothety_decompose(g0)
    D = phi.D
    inner = closed_form_diagonal(LeftInvariantMetric.standard(), t / lam**2)
    return LeftInvariantMetric(lam**2 * D.T @ inner.G @ D)


# ---------------------------------------------------------------------------
# quotient diameter on a fundamental-domain mesh

_NEIGHBOR_OFFSETS = [
    (di, dj, dl)
    for di in (-1, 0, 1)
    for dj in (-1, 0, 1)
    for dl in (-1, 0, 1)
    if (di, dj, dl) > (0, 0, 0)
]


class _QuotientGrid:
    """Grid on a fundamental domain of the translation subgroup.

    Nodes are chart points ((i/n1) v1 + (j/n2) v2, l h3); wrapping across a
    face applies the corresponding generator, which must land back on the
    grid (raises otherwise: incompatible grid dimensions).
    """

    def __init__(self, sub: Lattice, dims):
        self.n1, self.n2, self.n3 = dims
        t1, t2, t3 = (g.translation for g in sub.generators)
        self.t = (t1, t2, t3)
        self.v1 = core.abelianize(t1)
        self.v2 = core.abelianize(t2)
        self.w0 = abs(t3.x3)
        self.h3 = self.w0 / self.n3
        self.M = np.column_stack([self.v1, self.v2])
        self.Minv = np.linalg.inv(self.M)

    @property
    def n_nodes(self):
        return self.n1 * self.n2 * self.n3

    def node_id(self, i, j, l):
        return (i * self.n2 + j) * self.n3 + l

    def chart_point(self, i, j, l) -> NilPoint:
        p = (i / self.n1) * self.v1 + (j / self.n2) * self.v2
        return NilPoint(p[0], p[1], l * self.h3)

    def _reduce(self, point: NilPoint) -> NilPoint:
        for gen, axis in ((self.t[0], 0), (self.t[1], 1)):
            alpha = self.Minv @ core.abelianize(point)
            m = int(np.floor(alpha[axis] + 1e-9))
            if m:
                shift = core.exp(core.LieVec.from_array(-m * core.log(gen).as_array()))
                point = core.mul(shift, point)
        m = int(np.floor(point.x3 / self.w0 + 1e-9))
        if m:
            point = core.mul(NilPoint(0.0, 0.0, -m * self.w0), point)
        return point

    def canonical_id(self, point: NilPoint, exact: bool = True) -> int:
        point = self._reduce(point)
        alpha = self.Minv @ core.abelianize(point)
        fi, fj = alpha[0] * self.n1, alpha[1] * self.n2
        fl = point.x3 / self.h3
        i, j, l = (int(round(v)) for v in (fi, fj, fl))
        if exact:
            err = max(abs(fi - i), abs(fj - j), abs(fl - l))
            if err > 1e-6:
                raise FlowError(
                    f"grid dims ({self.n1},{self.n2},{self.n3}) incompatible "
                    f"with lattice wrap (index error {err:.2e})"
                )
        return self.node_id(i % self.n1, j % self.n2, l % self.n3)


def _grid_dims(sub: Lattice, n: int):
    """Smallest n3 multiplier making the face wraps land on grid points."""
    for mult in (1, 2, 3, 4, 6, 8, 12):
        grid = _QuotientGrid(sub, (n, n, mult * n))
        try:
            for i, j, l in [(n, 1, 0), (n, n - 1, 1), (1, n, 0), (n - 1, n, 1)]:
                grid.canonical_id(grid.chart_point(i, j, l))
            return (n, n, mult * n)
        except FlowError:
            continue
    raise FlowError("no compatible grid dimensions found")


def _grid_graph(grid: _QuotientGrid, metric: LeftInvariantMetric):
    G = metric.G
    rows, cols, weights = [], [], []
    for i in range(grid.n1):
        for j in range(grid.n2):
            for l in range(grid.n3):
                src = grid.node_id(i, j, l)
                y = grid.chart_point(i, j, l)
                yinv = core.inv(y)
                for di, dj, dl in _NEIGHBOR_OFFSETS:
                    z = grid.chart_point(i + di, j + dj, l + dl)
                    v = core.log(core.mul(yinv, z)).as_array()
                    w = float(np.sqrt(v @ G @ v))
                    dst = grid.canonical_id(z)
                    rows.append(src)
                    cols.append(dst)
                    weights.append(w)
    n = grid.n_nodes
    return coo_matrix((weights, (rows, cols)), shape=(n, n)).tocsr()


def _coset_permutations(lat: Lattice, grid: _QuotientGrid, radius: int):
    """Node permutations induced by nontrivial point-group coset reps."""
    ball = lattice_mod.word_ball(lat, radius)
    reps = {}
    for elem, word in ball.values():
        key = tuple(np.round(elem.auto.planar_part, 6).ravel())
        if key not in reps or len(word) < len(reps[key][1]):
            reps[key] = (elem, word)
    perms = []
    for elem, word in reps.values():
        if not word:
            continue
        perm = np.empty(grid.n_nodes, dtype=np.int64)
        for i in range(grid.n1):
            for j in range(grid.n2):
                for l in range(grid.n3):
                    img = core.apply_map(elem, grid.chart_point(i, j, l))
                    # rotated images need not land on grid points exactly
                    perm[grid.node_id(i, j, l)] = grid.canonical_id(img, exact=False)
        perms.append(perm)
    return perms


def diameter(
    lat: Lattice,
    metric: LeftInvariantMetric = G_NIL,
    n: int = 8,
    richardson: bool = True,
    radius: int = lattice_mod.DEFAULT_RADIUS,
):
    """Graph-geodesic diameter of Nil/Gamma on a refined fundamental-domain
    mesh.  With richardson=True, extrapolates over grids n and 2n and
    returns (diameter, error_bound); otherwise the single-grid value.
    """
    sub, index = lattice_mod.translation_subgroup(lat, radius)

    def one(nn):
        grid = _QuotientGrid(sub, _grid_dims(sub, nn))
        W = _grid_graph(grid, metric)
        perms = _coset_permutations(lat, grid, radius) if index > 1 else []
        best = 0.0
        chunk = 512
        for start in range(0, grid.n_nodes, chunk):
            idx = np.arange(start, min(start + chunk, grid.n_nodes))
            D = dijkstra(W, directed=False, indices=idx)
            if perms:
                for perm in perms:
                    D = np.minimum(D, D[:, perm])
            best = max(best, float(D.max()))
        return best

    d1 = one(n)
    if not richardson:
        return d1
    d2 = one(2 * n)
    # first-order extrapolation: graph overestimate decays ~ linearly in h
    return 2 * d2 - d1, abs(d2 - d1)


def almost_flat_ratio(
    g: LeftInvariantMetric,
    lat: Lattice,
    n: int = 8,
    richardson: bool = True,
    radius: int = lattice_mod.DEFAULT_RADIUS,
) -> float:
    """Scale-invariant almost-flatness quantity supRm(G) * diam(Nil/Gamma)^2."""
    if richardson:
        diam, _ = diameter(lat, g, n, True, radius)
    else:
        diam = diameter(lat, g, n, False, radius)
    return core.sup_rm(g) * diam**2


# ---------------------------------------------------------------------------
# stability schedule and empirical constants

DEFAULT_STEPS = 8


@dataclass(frozen=True)
class StabilitySchedule:
    times: tuple
    A: float
    C: float
    eps0: float
    sup_rm: tuple
    ratios: tuple
    violations: tuple = ()

    def __post_init__(self):
        gaps = np.diff(self.times)
        if np.any(np.diff(gaps) < -1e-9 * gaps[:-1]):
            raise FlowError("schedule interval lengths must be nondecreasing")

    @property
    def intervals(self):
        return tuple(np.diff(self.times))


def _metric_at(g0: LeftInvariantMetric, t: float) -> LeftInvariantMetric:
    return g0 if t == 0 else closed_form(g0, t)


def stability_run(
    g0: LeftInvariantMetric,
    lat: Lattice,
    eps: float,
    eps0: float | None = None,
    n_steps: int = DEFAULT_STEPS,
    diam_grid: int = 6,
    interval_samples: int = 9,
) -> StabilitySchedule:
    """Iterate T_j = T_{j-1} + A / K_{T_{j-1}}, verifying per step that the
    curvature scale halves, that the almost-flat ratio stays <= C * eps on
    the interval, and that it is <= eps/2 at the endpoint.  Reports the
    smallest empirical A and C making all assertions hold.
    """
    if eps0 is None:
        eps0 = eps
    ratio0 = almost_flat_ratio(g0, lat, n=diam_grid, richardson=False)
    if ratio0 > eps0:
        raise FlowError(
            f"initial ratio {ratio0:.3e} exceeds the configured eps0 {eps0:.3e}"
        )

    # smallest A with K(T + A/K(T)) <= K(T)/2 at every step (bisection)
    def halves_everywhere(A):
        t = 0.0
        for _ in range(n_steps):
            K = core.sup_rm(_metric_at(g0, t))
            t_next = t + A / K
            if core.sup_rm(_metric_at(g0, t_next)) > 0.5 * K:
                return False
            t = t_next
        return True

    lo, hi = 0.0, 1.0
    while not halves_everywhere(hi):
        hi *= 2.0
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        if halves_everywhere(mid):
            hi = mid
        else:
            lo = mid
    A_emp = hi

    times = [0.0]
    sup = [core.sup_rm(g0)]
    ratios = [ratio0]
    violations = []
    peak_ratio = ratio0
    for j in range(n_steps):
        t_next = times[-1] + A_emp / sup[-1]
        for s in np.linspace(times[-1], t_next, interval_samples)[1:]:
            r = almost_flat_ratio(
                _metric_at(g0, float(s)), lat, n=diam_grid, richardson=False
            )
            peak_ratio = max(peak_ratio, r)
        g_next = _metric_at(g0, t_next)
        K_next = core.sup_rm(g_next)
        r_next = almost_flat_ratio(g_next, lat, n=diam_grid, richardson=False)
        if K_next > 0.5 * sup[-1] * (1 + 1e-9):
            violations.append((j, "curvature scale failed to halve"))
        if r_next > 0.5 * eps:
            violations.append((j, f"endpoint ratio {r_next:.3e} > eps/2"))
        times.append(t_next)
        sup.append(K_next)
        ratios.append(r_next)

    C_emp = peak_ratio / eps
    return StabilitySchedule(
        tuple(times),
        float(A_emp),
        float(C_emp),
        float(eps0),
        tuple(sup),
        tuple(ratios),
        tuple(violations),
    )


def claim_constants(
    g0: LeftInvariantMetric, t_max: float = 1e4, tol: float = 1e-10
) -> tuple[float, float]:
    """Empirical (C'_emp, A'_emp) for a flow normalized to supRm = 1.

    C'_emp is the sup over time of the curvature-operator norm; A'_emp is
    the first time with supRm <= 1/8 and supRm * G_t <= (1/16) G_0 as a
    bilinear-form inequality in the X-basis.
    """
    K0 = core.sup_rm(g0)
    if abs(K0 - 1.0) > 1e-9:
        g0 = g0.scale(K0)  # supRm(c G) = supRm(G)/c
    G0 = g0.G

    def K(t):
        return core.sup_rm(_metric_at(g0, t))

    ts = np.geomspace(1e-3, t_max, 400)
    Ks = np.array([K(float(t)) for t in ts])
    C_emp = max(1.0, float(Ks.max()))

    def admissible(t):
        g = _metric_at(g0, float(t))
        k = core.sup_rm(g)
        if k > 0.125 + tol:
            return False
        gap = G0 / 16.0 - k * g.G
        return bool(np.linalg.eigvalsh(gap).min() >= -tol)

    # first passage by bisection once a bracketing time is found
    t_hi = None
    for t in ts:
        if admissible(t):
            t_hi = float(t)
            break
    if t_hi is None:
        raise FlowError("claim constants: admissible time not reached")
    t_lo = 0.0
    for _ in range(60):
        mid = 0.5 * (t_lo + t_hi)
        if admissible(mid):
            t_hi = mid
        else:
            t_lo = mid
    return C_emp, t_hi
