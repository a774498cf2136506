import numpy as np
import pytest

from nilgeom import core
from nilgeom.core import (
    G_NIL,
    LeftInvariantMetric,
    LieVec,
    NilAffineMap,
    NilAutomorphism,
    NilPoint,
    NotAnAutomorphism,
    NotPositiveDefinite,
)

import oracles

RNG = np.random.default_rng(20240817)


def random_point(rng=RNG, scale=2.0):
    x = rng.normal(scale=scale, size=3)
    return NilPoint(*x)


def random_isometry(rng=RNG):
    theta = rng.uniform(0, 2 * np.pi)
    det = 1 if rng.uniform() < 0.5 else -1
    return NilAffineMap(random_point(rng), core.rotation_isometry(theta, det))


def random_affine(rng=RNG):
    A = rng.normal(size=(2, 2))
    while abs(np.linalg.det(A)) < 0.2:
        A = rng.normal(size=(2, 2))
    auto = NilAutomorphism.from_factors(A, *rng.normal(size=2))
    return NilAffineMap(random_point(rng), auto)


class TestGroupLaw:
    def test_identity(self):
        e = NilPoint.identity()
        for _ in range(20):
            p = random_point()
            assert core.mul(e, p) == p
            assert core.mul(p, e) == p

    def test_simple_product(self):
        assert core.mul(NilPoint(1, 0, 0), NilPoint(0, 1, 0)) == NilPoint(1, 1, 1)

    def test_commutator_is_center_generator(self):
        # commutator of exp X1 and exp X2 equals exp X3
        a, b = NilPoint(1, 0, 0), NilPoint(0, 1, 0)
        comm = core.mul(core.mul(core.mul(a, b), core.inv(a)), core.inv(b))
        assert comm == NilPoint(0, 0, 1)

    def test_associativity(self):
        for _ in range(200):
            p, q, r = (random_point() for _ in range(3))
            lhs = core.mul(core.mul(p, q), r).as_array()
            rhs = core.mul(p, core.mul(q, r)).as_array()
            assert np.max(np.abs(lhs - rhs)) < 1e-14

    def test_inverse(self):
        assert core.inv(NilPoint.identity()) == NilPoint.identity()
        assert core.inv(NilPoint(1, 1, 1)) == NilPoint(-1, -1, 0)
        for _ in range(50):
            p = random_point()
            assert np.max(np.abs(core.mul(p, core.inv(p)).as_array())) < 1e-14
            pp = core.inv(core.inv(p))
            assert np.max(np.abs(pp.as_array() - p.as_array())) < 1e-14

    def test_matrix_model_agrees(self):
        for _ in range(20):
            p, q = random_point(), random_point()
            assert np.allclose(
                core.mul(p, q).as_matrix(), p.as_matrix() @ q.as_matrix()
            )


class TestExpLog:
    def test_exp_at_zero(self):
        assert core.exp(LieVec(0, 0, 0)) == NilPoint.identity()

    def test_exp_example(self):
        assert core.exp(LieVec(1, 1, 0)) == NilPoint(1, 1, 0.5)

    def test_log_example(self):
        assert core.log(NilPoint(1, 1, 1)) == LieVec(1, 1, 0.5)

    def test_mutually_inverse(self):
        for _ in range(50):
            p = random_point()
            q = core.exp(core.log(p))
            assert np.max(np.abs(q.as_array() - p.as_array())) < 1e-14
            v = LieVec(*RNG.normal(size=3))
            w = core.log(core.exp(v))
            assert np.max(np.abs(w.as_array() - v.as_array())) < 1e-15


class TestBracket:
    def test_basis_brackets(self):
        x1, x2, x3 = LieVec(1, 0, 0), LieVec(0, 1, 0), LieVec(0, 0, 1)
        assert core.bracket(x1, x2) == x3
        assert core.bracket(x1, x3) == LieVec(0, 0, 0)
        assert core.bracket(x2, x3) == LieVec(0, 0, 0)

    def test_antisymmetry(self):
        for _ in range(20):
            v = LieVec(*RNG.normal(size=3))
            w = LieVec(*RNG.normal(size=3))
            assert core.bracket(v, v) == LieVec(0, 0, 0)
            lhs = core.bracket(v, w).as_array()
            rhs = -core.bracket(w, v).as_array()
            assert np.allclose(lhs, rhs)


class TestAutomorphisms:
    def test_identity_factors(self):
        A, b1, b2 = core.factor_automorphism(np.eye(3))
        assert np.allclose(A, np.eye(2)) and b1 == 0 and b2 == 0

    def test_carnot_dilation_factors(self):
        lam = 1.7
        A, b1, b2 = core.factor_automorphism(np.diag([lam, lam, lam**2]))
        assert np.allclose(A, lam * np.eye(2))
        assert abs(b1) < 1e-14 and abs(b2) < 1e-14

    def test_rotation_is_isometry(self):
        phi = core.rotation_isometry(np.pi / 5)
        A, b1, b2 = phi.factors()
        assert np.allclose(A.T @ A, np.eye(2))
        assert phi.is_isometric()

    def test_factor_compose_roundtrip(self):
        for _ in range(200):
            A = RNG.normal(size=(2, 2))
            if abs(np.linalg.det(A)) < 0.1:
                continue
            b1, b2 = RNG.normal(size=2)
            D = core.compose_factors(A, b1, b2)
            A2, c1, c2 = core.factor_automorphism(D)
            D2 = core.compose_factors(A2, c1, c2)
            assert np.max(np.abs(D2 - D)) < 1e-12 * max(1, np.max(np.abs(D)))

    def test_bracket_preservation_of_accepted(self):
        for _ in range(100):
            phi = random_affine().auto
            v = RNG.normal(size=3)
            w = RNG.normal(size=3)
            lhs = phi.D @ core._bracket_arrays(v, w)
            rhs = core._bracket_arrays(phi.D @ v, phi.D @ w)
            assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(1, np.max(np.abs(phi.D)) ** 2)

    def test_rejects_non_automorphism(self):
        bad = np.eye(3)
        bad = bad.copy()
        bad[0, 2] = 0.5  # X3 column must stay central
        with pytest.raises(NotAnAutomorphism):
            core.factor_automorphism(bad)
        with pytest.raises(NotAnAutomorphism):
            core.factor_automorphism(np.zeros((3, 3)))


class TestAffineAction:
    def test_translation_pushforward_fixes_metric(self):
        g = LeftInvariantMetric(oracles.random_spd(RNG))
        phi = core.translation(random_point())
        assert np.allclose(core.push_metric(phi, g).G, g.G)

    def test_carnot_pullback_of_gnil(self):
        phi = NilAffineMap(NilPoint.identity(), core.carnot_dilation(2.0))
        assert np.allclose(core.pull_metric(phi, G_NIL).G, np.diag([4.0, 4.0, 16.0]))

    def test_push_then_pull_is_identity(self):
        for _ in range(30):
            phi = random_affine()
            g = LeftInvariantMetric(oracles.random_spd(RNG))
            gg = core.pull_metric(phi, core.push_metric(phi, g))
            assert np.max(np.abs(gg.G - g.G)) < 1e-10 * np.max(np.abs(g.G))

    def test_action_axiom(self):
        for _ in range(100):
            phi, psi = random_affine(), random_affine()
            p = random_point()
            lhs = core.apply_map(phi.compose(psi), p).as_array()
            rhs = core.apply_map(phi, core.apply_map(psi, p)).as_array()
            assert np.max(np.abs(lhs - rhs)) < 1e-10 * max(1, np.max(np.abs(lhs)))

    def test_inverse_map(self):
        for _ in range(30):
            phi = random_affine()
            p = random_point()
            q = core.apply_map(phi.inverse(), core.apply_map(phi, p))
            assert np.max(np.abs(q.as_array() - p.as_array())) < 1e-10


class TestAbelianization:
    def test_center_maps_to_origin(self):
        for t in np.linspace(-5, 5, 11):
            p = core.exp(LieVec(0, 0, t))
            assert np.allclose(core.abelianize(p), [0, 0])

    def test_translation_induces_planar_translation(self):
        phi = core.translation(NilPoint(1, 0, 0))
        A, t = core.induced_planar(phi)
        assert np.allclose(A, np.eye(2)) and np.allclose(t, [1, 0])

    def test_equivariance(self):
        for _ in range(100):
            phi = random_affine()
            p = random_point()
            A, t = core.induced_planar(phi)
            lhs = core.abelianize(core.apply_map(phi, p))
            rhs = A @ core.abelianize(p) + t
            assert np.max(np.abs(lhs - rhs)) < 1e-10 * max(1, np.max(np.abs(lhs)))


class TestCurvature:
    def test_gnil_sectional_and_ricci(self):
        assert np.allclose(core.sectional_curvatures(G_NIL), [-0.75, 0.25, 0.25])
        assert np.allclose(core.ricci(G_NIL), np.diag([-0.5, -0.5, 0.5]))

    def test_scaling_law(self):
        for _ in range(20):
            g = LeftInvariantMetric(oracles.random_spd(RNG))
            lam = RNG.uniform(0.3, 3.0)
            assert np.isclose(
                core.sup_rm(g.scale(lam**2)), core.sup_rm(g) / lam**2, rtol=1e-12
            )

    def test_oracle_equivalence(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            G = oracles.random_spd(rng)
            g = LeftInvariantMetric(G)
            ric = core.ricci(g)
            ric_oracle = oracles.koszul_ricci(G)
            scale = np.max(np.abs(ric_oracle))
            assert np.max(np.abs(ric - ric_oracle)) < 1e-10 * scale
            s, s_oracle = core.sup_rm(g), oracles.koszul_sup_rm(G)
            assert abs(s - s_oracle) < 1e-10 * s_oracle

    def test_isometry_invariance_of_sup_rm(self):
        for _ in range(30):
            g = LeftInvariantMetric(oracles.random_spd(RNG))
            phi = random_isometry()
            assert np.isclose(
                core.sup_rm(core.push_metric(phi, g)), core.sup_rm(g), rtol=1e-12
            )

    def test_ricci_naturality_under_isometry(self):
        for _ in range(30):
            g = LeftInvariantMetric(oracles.random_spd(RNG))
            phi = random_isometry()
            Dinv = np.linalg.inv(phi.auto.D)
            pushed = Dinv.T @ core.ricci(g) @ Dinv
            assert np.allclose(core.ricci(core.push_metric(phi, g)), pushed, atol=1e-11)

    def test_rejects_non_spd(self):
        with pytest.raises(NotPositiveDefinite):
            LeftInvariantMetric(np.diag([1.0, -1.0, 1.0]))


class TestHomothety:
    def test_identity(self):
        lam, phi = core.homothety_decompose(G_NIL)
        assert np.isclose(lam, 1.0)
        assert np.allclose(phi.D, np.eye(3))

    def test_carnot_examples(self):
        lam, phi = core.homothety_decompose(LeftInvariantMetric.diagonal(4, 4, 16))
        assert np.isclose(lam, 1.0)
        assert np.allclose(phi.D, np.diag([2, 2, 4]))
        lam, phi = core.homothety_decompose(LeftInvariantMetric.diagonal(1, 1, 4))
        assert np.isclose(lam, 0.5)
        assert np.allclose(phi.D, np.diag([2, 2, 4]))

    def test_roundtrip_residual(self):
        for _ in range(100):
            g = LeftInvariantMetric(oracles.random_spd(RNG))
            lam, phi = core.homothety_decompose(g)
            recon = lam**2 * (phi.D.T @ phi.D)
            assert np.max(np.abs(recon - g.G)) < 1e-10 * np.max(np.abs(g.G))

    def test_lambda_scaling(self):
        for _ in range(20):
            g = LeftInvariantMetric(oracles.random_spd(RNG))
            c = RNG.uniform(0.1, 10.0)
            lam, _ = core.homothety_decompose(g)
            lam_c, _ = core.homothety_decompose(g.scale(c))
            assert np.isclose(lam_c, np.sqrt(c) * lam, rtol=1e-12)


class TestSerialization:
    def test_point_roundtrip(self):
        p = random_point()
        assert NilPoint.from_json(p.to_json()) == p

    def test_metric_roundtrip(self):
        g = LeftInvariantMetric(oracles.random_spd(RNG))
        assert np.allclose(LeftInvariantMetric.from_json(g.to_json()).G, g.G)

    def test_affine_roundtrip(self):
        phi = random_affine()
        phi2 = NilAffineMap.from_json(phi.to_json())
        assert np.allclose(phi2.auto.D, phi.auto.D)
        assert np.allclose(
            phi2.translation.as_array(), phi.translation.as_array()
        )
