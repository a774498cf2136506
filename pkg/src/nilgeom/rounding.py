"""Rounding of almost-flat metric fields to unit-volume Nil structures.

Pipeline: curvature normalization, Ricci-DeTurck smoothing, harmonic
1-forms, flat torus, period map, circle fibers, averaged connection,
parallel curvature correction, frame assembly, volume normalization.
For translation lattices the cover step is trivial (covering order 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import hodge, mesh as mesh_mod
from .core import LeftInvariantMetric, homothety_decompose
from .hodge import DiscreteForm, HarmonicBasis, HodgeError, TorusData
from .lattice import Lattice
from .mesh import Mesh, MeshError


class RoundingError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class FibrationData:
    phi: np.ndarray  # (n1, n2, n3, 2) period-map values
    ell: np.ndarray  # (n1, n2) fiber lengths
    V: np.ndarray  # (n1, n2, n3, 3) vertical field, |V| = ell

    def __post_init__(self):
        if np.min(self.ell) <= 0:
            raise ValueError("fiber lengths must be positive")


@dataclass
class StageReport:
    stages: list = dc_field(default_factory=list)

    def add(self, name: str, **diag):
        self.stages.append({"stage": name, **diag})

    def to_json(self):
        return {"stages": self.stages}


def fiber_extraction(mesh: Mesh, field: np.ndarray, phi: np.ndarray) -> FibrationData:
    """Fibers are the grid columns in the central direction; checks that the
    period map is constant on them to half a base cell and that its
    differential has planar rank 2."""
    h3 = mesh.spacings[2]
    half_cell = 0.5 * max(1.0 / mesh.n1, 1.0 / mesh.n2)
    drift = np.max(np.abs(phi - phi.mean(axis=2, keepdims=True)))
    if drift > half_cell:
        raise HodgeError(
            f"period map varies by {drift:.3e} along fibers (tol {half_cell:.3e})"
        )
    # rank of d(phi) restricted to the horizontal grid directions
    dphi1 = (np.roll(phi, -1, axis=0) - np.roll(phi, 1, axis=0)) * (mesh.n1 / 2.0)
    dphi2 = (np.roll(phi, -1, axis=1) - np.roll(phi, 1, axis=1)) * (mesh.n2 / 2.0)
    det = dphi1[..., 0] * dphi2[..., 1] - dphi1[..., 1] * dphi2[..., 0]
    # interior determinant; the wrap rows of the naive roll cross the seam
    if np.min(np.abs(det[1:-1, 1:-1])) < 1e-6:
        raise HodgeError("period map differential is rank deficient on a fiber")

    g33 = field[..., 2, 2]
    ell = np.sum(np.sqrt(g33) * h3, axis=2)
    V = np.zeros(mesh.dims + (3,))
    V[..., 2] = ell[..., None] / np.sqrt(g33)  # oriented by the +X3 generator
    return FibrationData(phi, ell, V)


@dataclass(frozen=True)
class ConnectionData:
    theta: np.ndarray  # (n1,n2,n3,3) pointwise coordinate components of theta'
    omega: np.ndarray  # base 2-cochain of d(theta_conn)
    omega_prime: np.ndarray  # parallel base 2-cochain, cohomologous to omega
    total_curvature: float  # integral of omega over Y
    theta_bar: np.ndarray  # base 1-cochain correction


def _theta_pointwise(mesh: Mesh, field: np.ndarray, fib: FibrationData):
    """S^1-averaged connection components with theta(V/ell) = 1 pointwise.

    Averaging along the fiber flow reparametrized to unit period weights a
    vertex by its local fiber speed sqrt(g33)."""
    g33 = field[..., 2, 2]
    sq = np.sqrt(g33)
    w = sq / np.sum(sq, axis=2, keepdims=True)
    th = np.stack(
        [field[..., 0, 2] / sq, field[..., 1, 2] / sq, sq], axis=-1
    )
    planar = np.sum(th[..., :2] * w[..., None], axis=2, keepdims=True)
    out = np.empty_like(th)
    out[..., :2] = np.broadcast_to(planar, th[..., :2].shape)
    out[..., 2] = sq  # enforces theta(V/ell) = 1 at every vertex
    return out


def connection_and_curvature(
    mesh: Mesh, field: np.ndarray, fib: FibrationData, torus: TorusData
) -> ConnectionData:
    h = mesh.spacings
    theta = _theta_pointwise(mesh, field, fib)
    scale = 2.0 * np.pi / fib.ell[..., None, None]  # unit -> 2pi fiber period
    theta_conn = theta * scale

    # edge cochain of theta_conn and its discrete d
    vals = np.empty(mesh.dims + (3,))
    for a in range(3):
        vals[..., a] = theta_conn[..., a] * h[a]
    d1 = hodge.d1_matrix(mesh)
    dtheta = (d1 @ vals.reshape(-1)).reshape(mesh.dims + (3,))

    # push to the base: fiber-average of the (e1,e2)-face components
    omega = dtheta[..., 2].mean(axis=2).reshape(-1)
    torus_area_cell = 1.0  # cochain values integrate the form already
    total = float(omega.sum()) * torus_area_cell
    omega_prime = np.full_like(omega, total / omega.size)

    # parallel correction: solve d(theta_bar) = omega' - omega on the base;
    # the coexact ansatz theta_bar = W1^-1 d1^T eta is the L2-orthogonal
    # gauge for the g_Y inner product
    base_dims = (mesh.n1, mesh.n2)
    _, d1y = hodge.d_base_matrices(base_dims)
    W1, _ = hodge.base_star_weights(torus)
    rhs = omega_prime - omega
    A = (d1y.astype(float).multiply(1.0 / W1) @ d1y.T.astype(float)).tocsr()
    eta, info = spla.cg(A, rhs, rtol=hodge.SOLVER_TOL, atol=1e-15, maxiter=20000)
    if info != 0:
        raise HodgeError(f"base Poisson solver did not converge (info={info})")
    theta_bar = (d1y.T.astype(float) @ eta) / W1
    resid = float(np.max(np.abs(d1y @ theta_bar - rhs)))
    if resid > 1e-8 * max(1.0, float(np.max(np.abs(rhs)))):
        raise HodgeError(f"curvature correction residual {resid:.3e}")

    # pointwise theta' = theta_conn + pullback of theta_bar
    tb = theta_bar.reshape(mesh.n1, mesh.n2, 2)
    theta_prime = theta_conn.copy()
    theta_prime[..., 0] += (tb[..., 0] * mesh.n1)[..., None]
    theta_prime[..., 1] += (tb[..., 1] * mesh.n2)[..., None]

    return ConnectionData(
        theta=theta_prime,
        omega=omega,
        omega_prime=omega_prime,
        total_curvature=total,
        theta_bar=theta_bar,
    )


def _dphi_pointwise(mesh: Mesh, basis: HarmonicBasis) -> np.ndarray:
    """Coordinate components of the two harmonic forms at vertices."""
    h = mesh.spacings
    out = np.empty(mesh.dims + (2, 3))
    for c, form in enumerate(basis.forms):
        v = form.values.reshape(mesh.dims + (3,))
        for a in range(3):
            back = np.roll(v[..., a], 1, axis=a)
            # component values are chart scalars for every edge type (the
            # seam transport fixes e1 components and e2/e3 do not cross it)
            out[..., c, a] = 0.5 * (v[..., a] + back) / h[a]
    return out


def assemble_frames(
    mesh: Mesh,
    basis: HarmonicBasis,
    torus: TorusData,
    fib: FibrationData,
    conn: ConnectionData,
    a: float,
) -> np.ndarray:
    """Coordinate frame field (U1 | U2 | U3) of the candidate metric ghat_a."""
    dphi = _dphi_pointwise(mesh, basis)
    M = np.concatenate([dphi, conn.theta[..., None, :]], axis=-2)

    Lc = np.linalg.cholesky(torus.g_y)
    Ubar = np.linalg.inv(Lc).T  # columns orthonormal for g_Y

    # omega' density w.r.t. the flat volume form of Y
    area_y = float(np.sqrt(np.linalg.det(torus.g_y)))
    omega_bar = conn.total_curvature / area_y

    rhs = np.zeros(mesh.dims + (3, 3))
    rhs[..., 0, 0] = a * Ubar[0, 0]
    rhs[..., 1, 0] = a * Ubar[1, 0]
    rhs[..., 0, 1] = a * Ubar[0, 1]
    rhs[..., 1, 1] = a * Ubar[1, 1]
    # U3 = -a^2 omega_bar' sigma, with sigma solving M sigma = (0, 0, 1)
    rhs[..., 2, 2] = -(a**2) * omega_bar
    F = np.linalg.solve(M, rhs)
    return F


def assemble_and_normalize(
    mesh: Mesh,
    basis: HarmonicBasis,
    torus: TorusData,
    fib: FibrationData,
    conn: ConnectionData,
    covering_order: int = 1,
):
    """Output metric field of the rounding map plus diagnostics."""
    F1 = assemble_frames(mesh, basis, torus, fib, conn, 1.0)
    Finv = np.linalg.inv(F1)
    g1 = np.einsum("...ki,...kj->...ij", Finv, Finv)
    vol1 = mesh_mod.volume(mesh, g1)
    a_bar = (vol1 / covering_order) ** 0.25
    Fa = assemble_frames(mesh, basis, torus, fib, conn, a_bar)
    Finv = np.linalg.inv(Fa)
    out = np.einsum("...ki,...kj->...ij", Finv, Finv)
    mesh_mod.check_spd(out)
    return out, {"a_bar": a_bar, "vol_unit_a": vol1}


def volume_scaling_samples(
    mesh: Mesh, basis, torus, fib, conn, a_values=(0.5, 1.0, 2.0)
):
    """vol(ghat_a) at sampled a; log-log slope must be -4."""
    vols = []
    for a in a_values:
        F = assemble_frames(mesh, basis, torus, fib, conn, a)
        Finv = np.linalg.inv(F)
        g = np.einsum("...ki,...kj->...ij", Finv, Finv)
        vols.append(mesh_mod.volume(mesh, g))
    return np.asarray(a_values, dtype=float), np.asarray(vols)


def local_nil_residual(mesh: Mesh, field: np.ndarray) -> float:
    """Deviation of the frame-averaged output from an exact Nil structure."""
    avg = mesh_mod.frame_average(mesh, field)
    lam, phi = homothety_decompose(avg)
    rebuilt = lam**2 * phi.D.T @ phi.D
    return float(np.max(np.abs(avg.G - rebuilt)) / np.max(np.abs(avg.G)))


def round_field(
    field: np.ndarray,
    lattice: Lattice,
    dims=None,
    tau: float | None = None,
    report: StageReport | None = None,
) -> np.ndarray:
    """Full rounding map on a metric field over the lattice's mesh.

    tau defaults to 2 h^2: a resolution-limited stand-in for the paper's
    uniform smoothing time, keeping explicit-step counts bounded.
    """
    if report is None:
        report = StageReport()
    if dims is None:
        dims = field.shape[:3]

    def stage(name):
        def wrap(fn, *args, **kw):
            try:
                return fn(*args, **kw)
            except (MeshError, HodgeError, ValueError) as exc:
                raise RoundingError(name, str(exc)) from exc

        return wrap

    mesh = stage("mesh")(mesh_mod.build_mesh, lattice, dims)
    h = min(mesh.spacings)
    if tau is None:
        tau = 2.0 * h * h

    sup0, _ = stage("normalize-curvature")(mesh_mod.discrete_curvature, mesh, field)
    f = field * sup0  # scaling g by K multiplies curvature bounds by 1/K
    report.add("normalize-curvature", sup_rm_in=sup0)

    f = stage("smooth")(mesh_mod.smooth, mesh, f, tau)
    sup1, _ = mesh_mod.discrete_curvature(mesh, f)
    report.add("smooth", tau=tau, sup_rm_after=sup1)

    report.add("cover", covering_order=1, note="translation lattice, trivial cover")

    basis = stage("harmonic")(hodge.harmonic_one_forms, mesh, f)
    report.add(
        "harmonic",
        gram=basis.gram.tolist(),
        coclosed_residual=hodge.coclosed_residual(mesh, f, basis.forms[0]),
    )

    torus = stage("torus")(hodge.build_torus, basis, mesh)
    report.add("torus", periods=torus.periods.tolist(), g_y=torus.g_y.tolist())

    phi = stage("period-map")(hodge.period_map, mesh, basis)
    fib = stage("fibers")(fiber_extraction, mesh, f, phi)
    report.add(
        "fibers",
        ell_min=float(fib.ell.min()),
        ell_max=float(fib.ell.max()),
    )

    conn = stage("connection")(connection_and_curvature, mesh, f, fib, torus)
    report.add(
        "connection",
        total_curvature=conn.total_curvature,
        correction_norm=float(np.max(np.abs(conn.theta_bar))),
    )

    out, diag = stage("assemble")(
        assemble_and_normalize, mesh, basis, torus, fib, conn, 1
    )
    vol_out = mesh_mod.volume(mesh, out)
    resid = local_nil_residual(mesh, out)
    report.add("assemble", a_bar=diag["a_bar"], volume=vol_out, nil_residual=resid)
    return out
