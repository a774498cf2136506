import numpy as np
import pytest

from nilgeom import core, flow, hodge, mesh, rounding
from nilgeom.core import G_NIL, LeftInvariantMetric
from nilgeom.lattice import builtin_catalog
from nilgeom.mesh import build_mesh
from nilgeom.rounding import RoundingError, StageReport, round_field

CATALOG = {lat.label: lat for lat in builtin_catalog()}
GAMMA1 = CATALOG["gamma1"]
GAMMA2 = CATALOG["gamma2"]

RNG = np.random.default_rng(20240821)


def met_nil_member(k: int) -> LeftInvariantMetric:
    # unit-volume homogeneous structures fixed by the rounding map:
    # diag(A, B, C) with C = AB and AB = k
    s = float(np.sqrt(k))
    return LeftInvariantMetric.diagonal(s, s, float(k))


def perturbed_field(m, eps, rng=RNG):
    """Seam-compatible inhomogeneous perturbation of the g_Nil pullback.

    The conformal factor depends on x1, x2 only: an x3-dependent factor
    would not descend through the twisted x1-face identification.
    """
    g = mesh.pullback_homogeneous(met_nil_member(m.k), m)
    x1, x2, _ = m.coords()
    f = 1.0 + eps * (np.sin(2 * np.pi * x2) + 0.5 * np.cos(2 * np.pi * x1))
    return g * f[..., None, None]


class TestPipelineStages:
    def test_fiber_extraction_constant_data(self):
        m = build_mesh(GAMMA1, (8, 8, 8))
        g = mesh.pullback_homogeneous(G_NIL, m)
        basis = hodge.harmonic_one_forms(m, g)
        phi = hodge.period_map(m, basis)
        fib = rounding.fiber_extraction(m, g, phi)
        assert np.max(np.abs(fib.ell - 1.0)) < 1e-12
        assert np.max(np.abs(fib.V[..., 2] - 1.0)) < 1e-12
        assert np.max(np.abs(fib.V[..., :2])) == 0.0

    @pytest.mark.parametrize("label,k", [("gamma1", 1), ("gamma2", 2), ("gamma3", 3)])
    def test_total_connection_curvature(self, label, k):
        # integral of the curvature form is -2 pi k: the Euler number of the
        # Seifert fibration, exact because the correction is cohomologically
        # trivial on the base
        m = build_mesh(CATALOG[label], (8, 8, 8 * k))
        g = mesh.pullback_homogeneous(met_nil_member(k), m)
        basis = hodge.harmonic_one_forms(m, g)
        torus = hodge.build_torus(basis, m)
        phi = hodge.period_map(m, basis)
        fib = rounding.fiber_extraction(m, g, phi)
        conn = rounding.connection_and_curvature(m, g, fib, torus)
        assert abs(conn.total_curvature + 2 * np.pi * k) < 1e-9 * k

    def test_uniform_correction_matches_total(self):
        m = build_mesh(GAMMA2, (8, 8, 16))
        g = perturbed_field(m, 0.02)
        g = mesh.smooth(m, g, 0.01)
        basis = hodge.harmonic_one_forms(m, g)
        torus = hodge.build_torus(basis, m)
        phi = hodge.period_map(m, basis)
        fib = rounding.fiber_extraction(m, g, phi)
        conn = rounding.connection_and_curvature(m, g, fib, torus)
        assert np.ptp(conn.omega_prime) < 1e-12
        assert abs(conn.omega_prime.sum() - conn.omega.sum()) < 1e-9

    def test_volume_scaling_slope(self):
        m = build_mesh(GAMMA1, (8, 8, 8))
        g = perturbed_field(m, 0.02)
        basis = hodge.harmonic_one_forms(m, g)
        torus = hodge.build_torus(basis, m)
        phi = hodge.period_map(m, basis)
        fib = rounding.fiber_extraction(m, g, phi)
        conn = rounding.connection_and_curvature(m, g, fib, torus)
        a, vols = rounding.volume_scaling_samples(m, basis, torus, fib, conn)
        slopes = np.diff(np.log(vols)) / np.diff(np.log(a))
        assert np.max(np.abs(slopes + 4.0)) < 1e-10


class TestRoundField:
    @pytest.mark.parametrize("label,k", [("gamma1", 1), ("gamma2", 2)])
    def test_fixed_point_at_met_nil(self, label, k):
        # members of the rounded family are recovered to machine precision:
        # every stage is exact on homogeneous pullbacks
        m = build_mesh(CATALOG[label], (8, 8, 8 * k))
        g = mesh.pullback_homogeneous(met_nil_member(k), m)
        out = round_field(g, CATALOG[label])
        assert np.max(np.abs(out - g)) < 1e-10

    def test_output_is_unit_volume(self):
        m = build_mesh(GAMMA1, (8, 8, 8))
        g = perturbed_field(m, 0.03)
        out = round_field(g, GAMMA1)
        assert abs(mesh.volume(m, out) - 1.0) < 1e-10

    def test_output_is_nil_structure(self):
        m = build_mesh(GAMMA1, (8, 8, 8))
        g = perturbed_field(m, 0.03)
        out = round_field(g, GAMMA1)
        assert rounding.local_nil_residual(m, out) < 1e-10

    def test_scale_invariance(self):
        # curvature normalization makes the map scale-free
        m = build_mesh(GAMMA1, (8, 8, 8))
        g = perturbed_field(m, 0.02)
        a = round_field(g, GAMMA1)
        b = round_field(4.0 * g, GAMMA1)
        assert np.max(np.abs(a - b)) < 1e-8

    def test_report_covers_all_stages(self):
        m = build_mesh(GAMMA1, (8, 8, 8))
        g = mesh.pullback_homogeneous(G_NIL, m)
        report = StageReport()
        round_field(g, GAMMA1, report=report)
        names = [entry["stage"] for entry in report.stages]
        assert names == [
            "normalize-curvature",
            "smooth",
            "cover",
            "harmonic",
            "torus",
            "fibers",
            "connection",
            "assemble",
        ]

    def test_stage_identified_on_failure(self):
        g = np.tile(np.eye(3), (8, 8, 8, 1, 1))
        g[0, 0, 0] = 0.0
        with pytest.raises(RoundingError) as err:
            round_field(g, GAMMA1)
        assert err.value.stage == "normalize-curvature"

    def test_mesh_stage_failure(self):
        g = np.tile(np.eye(3), (4, 8, 4, 1, 1))  # twist not integral
        with pytest.raises(RoundingError) as err:
            round_field(g, GAMMA1)
        assert err.value.stage == "mesh"

    def test_idempotence_small_mesh(self):
        m = build_mesh(GAMMA1, (8, 8, 8))
        g = perturbed_field(m, 0.03)
        once = round_field(g, GAMMA1)
        twice = round_field(once, GAMMA1)
        move1 = np.max(np.abs(once - g))
        move2 = np.max(np.abs(twice - once))
        assert move2 < 2.0 * move1

    def test_flow_invariance_homogeneous(self):
        # Psi(g(t)) = Psi(g(0)) for the homogeneous flow: the diagonal
        # closed form preserves A/B, the only input to the rounded shape
        m = build_mesh(GAMMA1, (8, 8, 8))
        g0 = LeftInvariantMetric.diagonal(1.3, 0.8, 1.1)
        a = round_field(mesh.pullback_homogeneous(g0, m), GAMMA1)
        gt = flow.closed_form_diagonal(g0, 1.5)
        b = round_field(mesh.pullback_homogeneous(gt, m), GAMMA1)
        assert np.max(np.abs(a - b)) < 1e-9
