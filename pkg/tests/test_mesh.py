import numpy as np
import pytest

import oracles
from nilgeom import core, flow, mesh
from nilgeom.core import G_NIL, LeftInvariantMetric
from nilgeom.lattice import builtin_catalog
from nilgeom.mesh import Mesh, MeshError, build_mesh

CATALOG = {lat.label: lat for lat in builtin_catalog()}
GAMMA1 = CATALOG["gamma1"]
GAMMA2 = CATALOG["gamma2"]

RNG = np.random.default_rng(20240819)


def random_metric(rng=RNG):
    return LeftInvariantMetric(oracles.random_spd(rng))


class TestMeshGeometry:
    def test_spacings_cover_fundamental_domain(self):
        m = build_mesh(GAMMA2, (8, 8, 8))
        h1, h2, h3 = m.spacings
        assert h1 * m.n1 == 1.0
        assert h2 * m.n2 == 1.0
        assert h3 * m.n3 == pytest.approx(m.w0)

    def test_twist_integrality_enforced(self):
        # k n3 / n2 is the fiber shear per x2-step; must be an integer
        with pytest.raises(MeshError):
            Mesh(1, (4, 8, 4))
        assert Mesh(2, (4, 4, 4)).twist == 2

    def test_minimum_resolution(self):
        with pytest.raises(MeshError):
            Mesh(1, (4, 4, 2))

    def test_build_requires_normal_form(self):
        with pytest.raises(MeshError):
            build_mesh(CATALOG["screw2"], (4, 4, 4))

    def test_canonical_is_idempotent(self):
        m = Mesh(2, (4, 4, 8))
        rng = np.random.default_rng(7)
        for _ in range(200):
            I, J, L = rng.integers(-12, 12, size=3)
            i, j, l, _ = m.canonical(I, J, L)
            i2, j2, l2, m2 = m.canonical(i, j, l)
            assert (i2, j2, l2, m2) == (i, j, l, 0)
            assert 0 <= i < m.n1 and 0 <= j < m.n2 and 0 <= l < m.n3

    def test_canonical_realizes_deck_translation(self):
        # wrapping the x1-face is the left action of (1,0,0): x3 gains x2
        m = Mesh(1, (4, 4, 4))
        for j in range(4):
            for l in range(4):
                i2, j2, l2, _ = m.canonical(4, j, l)
                assert (i2, j2) == (0, j)
                assert l2 == (l - j * m.twist) % m.n3


class TestTransport:
    def test_scalar_shift_is_periodic_function_readout(self):
        m = build_mesh(GAMMA1, (8, 8, 8))
        _, x2, _ = m.coords()
        f = np.sin(2 * np.pi * x2)  # seam-compatible: no x3 dependence
        for axis in range(3):
            s = mesh.shifted(m, f, axis, +1, "scalar")
            back = mesh.shifted(m, s, axis, -1, "scalar")
            assert np.array_equal(back, f)

    def test_metric_transport_matches_global_field(self):
        # a left-invariant pullback is globally defined on the quotient, so
        # ghost transport must reproduce the neighbouring vertex exactly
        m = build_mesh(GAMMA2, (8, 8, 8))
        g = mesh.pullback_homogeneous(random_metric(), m)
        for axis in range(3):
            for step in (+1, -1):
                s = mesh.shifted(m, g, axis, step, "metric")
                rolled = np.roll(g, -step, axis=axis)
                interior = [slice(None)] * 3
                interior[axis] = slice(1, -1)
                assert np.allclose(
                    s[tuple(interior)], rolled[tuple(interior)], atol=1e-15
                )
        # seam slab included
        s = mesh.shifted(m, g, 0, +1, "metric")
        x1, x2, _ = m.coords()
        J = mesh.coframe_matrix(x1[-1] + m.spacings[0])
        G = mesh.frame_average(m, g).G
        expect = np.einsum("...ai,ab,...bj->...ij", J, G, J)
        assert np.max(np.abs(s[-1] - expect[-1])) < 1e-13

    def test_derivative_exact_on_quadratic_pullback(self):
        # J is affine in x1, so the pullback is quadratic and central
        # differences are exact, seam crossing included
        m = build_mesh(GAMMA1, (8, 8, 8))
        G = random_metric().G
        x1, _, _ = m.coords()
        J = mesh.coframe_matrix(x1)
        g = np.einsum("...ai,ab,...bj->...ij", J, G, J)
        dJ = np.zeros_like(J)
        dJ[..., 2, 1] = -1.0
        expect = np.einsum("...ai,ab,...bj->...ij", dJ, G, J) + np.einsum(
            "...ai,ab,...bj->...ij", J, G, dJ
        )
        got = mesh.derivative(m, g, 0, "metric")
        assert np.max(np.abs(got - expect)) < 1e-12
        for axis in (1, 2):
            assert np.max(np.abs(mesh.derivative(m, g, axis, "metric"))) < 1e-12

    def test_unknown_kind_rejected(self):
        m = Mesh(1, (4, 4, 4))
        with pytest.raises(ValueError):
            mesh.shifted(m, np.zeros(m.dims), 0, 1, "density")


class TestFieldHelpers:
    def test_volume_of_homogeneous_pullback(self):
        for label in ("gamma1", "gamma2", "gamma3"):
            lat = CATALOG[label]
            m = build_mesh(lat, (4, 4, 4 * m_k(label)))
            g = mesh.pullback_homogeneous(G_NIL, m)
            assert mesh.volume(m, g) == pytest.approx(1.0 / m.k, abs=1e-14)

    def test_frame_average_inverts_pullback(self):
        m = build_mesh(GAMMA1, (6, 6, 6))
        G0 = random_metric()
        g = mesh.pullback_homogeneous(G0, m)
        assert np.max(np.abs(mesh.frame_average(m, g).G - G0.G)) < 1e-13

    def test_check_spd_rejects_degenerate(self):
        m = build_mesh(GAMMA1, (4, 4, 4))
        g = mesh.pullback_homogeneous(G_NIL, m)
        g[0, 0, 0] = 0.0
        with pytest.raises(MeshError):
            mesh.check_spd(g)


def m_k(label: str) -> int:
    return int(label.removeprefix("gamma"))


class TestCurvature:
    def test_sup_rm_exact_on_pullbacks(self):
        # homogeneous pullbacks are quadratic in the coordinates, so the
        # two-pass central-difference curvature carries no truncation error
        m = build_mesh(GAMMA1, (8, 8, 8))
        for _ in range(5):
            G0 = random_metric()
            g = mesh.pullback_homogeneous(G0, m)
            sup, _ = mesh.discrete_curvature(m, g)
            assert abs(sup - core.sup_rm(G0)) < 1e-10 * max(1.0, core.sup_rm(G0))

    def test_operator_spectrum_of_g_nil(self):
        m = build_mesh(GAMMA1, (8, 8, 8))
        g = mesh.pullback_homogeneous(G_NIL, m)
        _, w = mesh.discrete_curvature(m, g)
        expect = np.array([-0.75, 0.25, 0.25])
        assert np.max(np.abs(w - expect)) < 1e-12

    def test_ricci_matches_oracle(self):
        m = build_mesh(GAMMA1, (8, 8, 8))
        for _ in range(3):
            G0 = random_metric()
            g = mesh.pullback_homogeneous(G0, m)
            ric = mesh.ricci_field(m, g)
            # oracle works in the X-basis; convert via the coframe
            x1, _, _ = m.coords()
            J = mesh.coframe_matrix(x1)
            expect_X = oracles.koszul_ricci(G0.G)
            expect = np.einsum("...ai,ab,...bj->...ij", J, expect_X, J)
            assert np.max(np.abs(ric - expect)) < 1e-10

    def test_resolution_floor(self):
        m = build_mesh(GAMMA1, (4, 4, 4))
        g = mesh.pullback_homogeneous(G_NIL, m)
        with pytest.raises(MeshError):
            mesh.discrete_curvature(m, g)


class TestSmooth:
    def test_tau_zero_is_copy(self):
        m = build_mesh(GAMMA1, (8, 8, 8))
        g = mesh.pullback_homogeneous(G_NIL, m)
        out = mesh.smooth(m, g, 0.0)
        assert out is not g
        assert np.array_equal(out, g)

    def test_homogeneous_input_follows_ricci_flow(self):
        # gauge term vanishes on homogeneous fields: explicit Euler tracks
        # the diagonal closed form at first order in the step count
        m = build_mesh(GAMMA1, (8, 8, 8))
        g0 = LeftInvariantMetric.diagonal(1.1, 0.9, 1.2)
        tau = 0.05
        out = mesh.smooth(m, mesh.pullback_homogeneous(g0, m), tau)
        expect = mesh.pullback_homogeneous(flow.closed_form_diagonal(g0, tau), m)
        assert np.max(np.abs(out - expect)) < 2e-4

    def test_perturbation_energy_decays(self):
        m = build_mesh(GAMMA1, (8, 8, 8))
        g = mesh.pullback_homogeneous(G_NIL, m)
        _, x2, _ = m.coords()
        pert = 0.05 * np.sin(2 * np.pi * x2)
        g = g * (1.0 + pert)[..., None, None]
        # inhomogeneous energy: deviation from the instantaneous average,
        # so the drift of the homogeneous part does not enter
        energies = []
        f = g
        for _ in range(3):
            f = mesh.smooth(m, f, 0.01)
            avg = mesh.pullback_homogeneous(mesh.frame_average(m, f), m)
            energies.append(float(np.mean((f - avg) ** 2)))
        assert energies[0] > energies[1] > energies[2]

    def test_negative_tau_rejected(self):
        m = build_mesh(GAMMA1, (8, 8, 8))
        g = mesh.pullback_homogeneous(G_NIL, m)
        with pytest.raises(ValueError):
            mesh.smooth(m, g, -1.0)
