"""Exact arithmetic and differential geometry of the Heisenberg group.

Points live in the global coordinate chart (x1, x2, x3) of the group of
unipotent upper-triangular 3x3 matrices.  The Lie algebra basis is
X1 = E12, X2 = E23, X3 = E13 with [X1, X2] = X3 and X3 central.
Left-invariant metrics are represented by their Gram matrix in this basis;
the standard metric g_nil is the identity Gram matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "NilPoint",
    "LieVec",
    "NilAutomorphism",
    "NilAffineMap",
    "LeftInvariantMetric",
    "mul",
    "inv",
    "exp",
    "log",
    "bracket",
    "factor_automorphism",
    "compose_factors",
    "carnot_dilation",
    "rotation_isometry",
    "translation",
    "apply_map",
    "push_metric",
    "pull_metric",
    "abelianize",
    "induced_planar",
    "curvature",
    "sup_rm",
    "ricci",
    "sectional_curvatures",
    "homothety_decompose",
    "G_NIL",
    "BRACKET_TOL",
]

# Tolerance for algebraic identity checks (bracket preservation, factorization).
BRACKET_TOL = 1e-12


@dataclass(frozen=True)
class NilPoint:
    """Group element in the global chart of the unipotent matrix model."""

    x1: float
    x2: float
    x3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3], dtype=float)

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [[1.0, self.x1, self.x3], [0.0, 1.0, self.x2], [0.0, 0.0, 1.0]]
        )

    @staticmethod
    def identity() -> "NilPoint":
        return NilPoint(0.0, 0.0, 0.0)

    def to_json(self) -> dict:
        return {"x1": self.x1, "x2": self.x2, "x3": self.x3}

    @staticmethod
    def from_json(obj: dict) -> "NilPoint":
        return NilPoint(float(obj["x1"]), float(obj["x2"]), float(obj["x3"]))


@dataclass(frozen=True)
class LieVec:
    """Lie algebra element, coefficients in the basis X1, X2, X3."""

    a1: float
    a2: float
    a3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3], dtype=float)

    @staticmethod
    def from_array(a) -> "LieVec":
        return LieVec(float(a[0]), float(a[1]), float(a[2]))


def mul(p: NilPoint, q: NilPoint) -> NilPoint:
    """Group product: multiply the corresponding unipotent matrices."""
    return NilPoint(p.x1 + q.x1, p.x2 + q.x2, p.x3 + q.x3 + p.x1 * q.x2)


def inv(p: NilPoint) -> NilPoint:
    """Group inverse: mul(p, inv(p)) is exactly the identity."""
    return NilPoint(-p.x1, -p.x2, -p.x3 + p.x1 * p.x2)


def exp(v: LieVec) -> NilPoint:
    """Exponential of a strictly upper-triangular matrix (the series ends at M^2)."""
    return NilPoint(v.a1, v.a2, v.a3 + 0.5 * v.a1 * v.a2)


def log(p: NilPoint) -> LieVec:
    """Exact inverse of :func:`exp`."""
    return LieVec(p.x1, p.x2, p.x3 - 0.5 * p.x1 * p.x2)


def bracket(v: LieVec, w: LieVec) -> LieVec:
    """[v, w] = (v1 w2 - v2 w1) X3."""
    return LieVec(0.0, 0.0, v.a1 * w.a2 - v.a2 * w.a1)


def _bracket_arrays(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.array([0.0, 0.0, v[0] * w[1] - v[1] * w[0]])


class NotAnAutomorphism(ValueError):
    """Raised when a matrix fails the bracket-preservation check."""


@dataclass(frozen=True)
class NilAutomorphism:
    """Lie algebra automorphism, as a 3x3 matrix acting on X-coordinates.

    Every automorphism factors uniquely as (unipotent shear) o (block matrix
    diag(A, det A)) with A in GL(2, R); the matrix is then
    [[A, 0], [b @ A, det A]].
    """

    D: np.ndarray

    def __post_init__(self):
        D = np.asarray(self.D, dtype=float)
        object.__setattr__(self, "D", D)
        _check_bracket_preserving(D)

    @staticmethod
    def identity() -> "NilAutomorphism":
        return NilAutomorphism(np.eye(3))

    @staticmethod
    def from_factors(A, b1: float = 0.0, b2: float = 0.0) -> "NilAutomorphism":
        return NilAutomorphism(compose_factors(A, b1, b2))

    def factors(self):
        return factor_automorphism(self.D)

    @property
    def planar_part(self) -> np.ndarray:
        return self.D[:2, :2].copy()

    def is_isometric(self, tol: float = BRACKET_TOL) -> bool:
        """True iff the automorphism preserves g_nil: A in O(2) and no shear."""
        A, b1, b2 = self.factors()
        return (
            abs(b1) <= tol
            and abs(b2) <= tol
            and np.max(np.abs(A.T @ A - np.eye(2))) <= tol
        )

    def compose(self, other: "NilAutomorphism") -> "NilAutomorphism":
        return NilAutomorphism(self.D @ other.D)

    def inverse(self) -> "NilAutomorphism":
        return NilAutomorphism(np.linalg.inv(self.D))

    def act_vec(self, v: LieVec) -> LieVec:
        return LieVec.from_array(self.D @ v.as_array())

    def act_point(self, p: NilPoint) -> NilPoint:
        """Induced group automorphism: exp o D o log."""
        return exp(LieVec.from_array(self.D @ log(p).as_array()))

    def to_json(self) -> dict:
        return {"D": self.D.reshape(-1).tolist()}

    @staticmethod
    def from_json(obj: dict) -> "NilAutomorphism":
        return NilAutomorphism(np.array(obj["D"], dtype=float).reshape(3, 3))


def _check_bracket_preserving(D: np.ndarray, tol: float = BRACKET_TOL) -> None:
    if D.shape != (3, 3):
        raise NotAnAutomorphism(f"expected 3x3 matrix, got {D.shape}")
    if abs(np.linalg.det(D)) <= tol:
        raise NotAnAutomorphism("matrix is singular")
    basis = np.eye(3)
    for i in range(3):
        for j in range(i + 1, 3):
            lhs = D @ _bracket_arrays(basis[i], basis[j])
            rhs = _bracket_arrays(D @ basis[i], D @ basis[j])
            if np.max(np.abs(lhs - rhs)) > tol * max(1.0, np.max(np.abs(D)) ** 2):
                raise NotAnAutomorphism(
                    f"bracket not preserved on (X{i+1}, X{j+1})"
                )


def compose_factors(A, b1: float = 0.0, b2: float = 0.0) -> np.ndarray:
    """Assemble the automorphism matrix (shear) @ (block diag(A, det A))."""
    A = np.asarray(A, dtype=float)
    D = np.zeros((3, 3))
    D[:2, :2] = A
    D[2, 2] = np.linalg.det(A)
    D[2, :2] = np.array([b1, b2]) @ A
    return D


def factor_automorphism(D) -> tuple[np.ndarray, float, float]:
    """Unique factorization of an automorphism matrix into (A, b1, b2).

    Raises :class:`NotAnAutomorphism` if D does not preserve the bracket
    to within ``BRACKET_TOL``.
    """
    D = np.asarray(D, dtype=float)
    _check_bracket_preserving(D)
    A = D[:2, :2]
    b = np.linalg.solve(A.T, D[2, :2])
    return A.copy(), float(b[0]), float(b[1])


def carnot_dilation(mu: float) -> NilAutomorphism:
    """Dilation scaling the plane by mu and the center by mu^2."""
    return NilAutomorphism(np.diag([mu, mu, mu * mu]))


def rotation_isometry(theta: float, det: int = 1) -> NilAutomorphism:
    """Isometric automorphism with planar part a rotation (det=+1) or
    reflection composed with a rotation (det=-1)."""
    c, s = np.cos(theta), np.sin(theta)
    A = np.array([[c, -s], [s, c]])
    if det == -1:
        A = A @ np.diag([1.0, -1.0])
    return NilAutomorphism.from_factors(A)


@dataclass(frozen=True)
class NilAffineMap:
    """Element of Aff(Nil): left translation composed with an automorphism.

    Acts by p -> translation * phi(p) where phi is the group automorphism
    induced by ``auto``.
    """

    translation: NilPoint
    auto: NilAutomorphism

    @staticmethod
    def identity() -> "NilAffineMap":
        return NilAffineMap(NilPoint.identity(), NilAutomorphism.identity())

    def compose(self, other: "NilAffineMap") -> "NilAffineMap":
        # (c, D) o (c', D') = (c * phi_D(c'), D D')
        return NilAffineMap(
            mul(self.translation, self.auto.act_point(other.translation)),
            self.auto.compose(other.auto),
        )

    def inverse(self) -> "NilAffineMap":
        Dinv = self.auto.inverse()
        return NilAffineMap(Dinv.act_point(inv(self.translation)), Dinv)

    def is_isometry(self, tol: float = BRACKET_TOL) -> bool:
        return self.auto.is_isometric(tol)

    def to_json(self) -> dict:
        return {
            "translation": self.translation.to_json(),
            "auto": self.auto.to_json(),
        }

    @staticmethod
    def from_json(obj: dict) -> "NilAffineMap":
        return NilAffineMap(
            NilPoint.from_json(obj["translation"]),
            NilAutomorphism.from_json(obj["auto"]),
        )


def translation(p: NilPoint) -> NilAffineMap:
    return NilAffineMap(p, NilAutomorphism.identity())


def apply_map(phi: NilAffineMap, p: NilPoint) -> NilPoint:
    return mul(phi.translation, phi.auto.act_point(p))


def abelianize(p: NilPoint) -> np.ndarray:
    """Projection to the abelianization Nil / exp(R X3) = R^2."""
    return np.array([p.x1, p.x2])


def induced_planar(phi: NilAffineMap) -> tuple[np.ndarray, np.ndarray]:
    """Affine map (A, t) of R^2 making the abelianization equivariant:
    abelianize(apply(phi, p)) = A @ abelianize(p) + t."""
    return phi.auto.planar_part, abelianize(phi.translation)


class NotPositiveDefinite(ValueError):
    """Raised when a Gram matrix fails the SPD check."""


@dataclass(frozen=True)
class LeftInvariantMetric:
    """Left-invariant metric with Gram matrix G in the basis X1, X2, X3."""

    G: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.G, dtype=float)
        if G.shape != (3, 3):
            raise NotPositiveDefinite(f"expected 3x3 Gram matrix, got {G.shape}")
        if np.max(np.abs(G - G.T)) > 1e-12 * max(1.0, np.max(np.abs(G))):
            raise NotPositiveDefinite("Gram matrix not symmetric")
        G = 0.5 * (G + G.T)
        if np.any(np.linalg.eigvalsh(G) <= 0):
            raise NotPositiveDefinite("Gram matrix not positive definite")
        object.__setattr__(self, "G", G)

    @staticmethod
    def standard() -> "LeftInvariantMetric":
        return LeftInvariantMetric(np.eye(3))

    @staticmethod
    def diagonal(a: float, b: float, c: float) -> "LeftInvariantMetric":
        return LeftInvariantMetric(np.diag([float(a), float(b), float(c)]))

    def scale(self, factor: float) -> "LeftInvariantMetric":
        return LeftInvariantMetric(factor * self.G)

    def to_json(self) -> dict:
        return {"G": self.G.reshape(-1).tolist()}

    @staticmethod
    def from_json(obj: dict) -> "LeftInvariantMetric":
        return LeftInvariantMetric(np.array(obj["G"], dtype=float).reshape(3, 3))


G_NIL = LeftInvariantMetric.standard()


def push_metric(phi: NilAffineMap, g: LeftInvariantMetric) -> LeftInvariantMetric:
    """Pushforward of a left-invariant metric: Gram -> D^{-T} G D^{-1}."""
    Dinv = np.linalg.inv(phi.auto.D)
    return LeftInvariantMetric(Dinv.T @ g.G @ Dinv)


def pull_metric(phi: NilAffineMap, g: LeftInvariantMetric) -> LeftInvariantMetric:
    """Pullback: Gram -> D^T G D.  Inverse of :func:`push_metric`."""
    D = phi.auto.D
    return LeftInvariantMetric(D.T @ g.G @ D)


def _orthonormal_frame(G: np.ndarray) -> np.ndarray:
    """Matrix M whose columns give an orthonormal frame f_i = sum_j M[j,i] X_j."""
    L = np.linalg.cholesky(G)
    return np.linalg.inv(L).T


_PAIRS = [(0, 1), (0, 2), (1, 2)]


def curvature(g: LeftInvariantMetric):
    """Full curvature tensor of the left-invariant metric in an orthonormal frame.

    Returns ``(R, frame)`` where ``R[i,j,k,l] = <Rm(f_i, f_j) f_k, f_l>`` in
    the orthonormal frame given by the columns of ``frame`` (X-coordinates).
    Levi-Civita connection from the Koszul formula on a frame with constant
    structure coefficients.
    """
    G = g.G
    M = _orthonormal_frame(G)
    Minv = np.linalg.inv(M)
    # c[i,j,k]: [f_i, f_j] = sum_k c[i,j,k] f_k
    c = np.zeros((3, 3, 3))
    for i in range(3):
        for j in range(3):
            m = M[0, i] * M[1, j] - M[1, i] * M[0, j]
            for k in range(3):
                c[i, j, k] = m * Minv[k, 2]
    # Gamma[i,j,k] = <nabla_{f_i} f_j, f_k>
    gamma = 0.5 * (c - np.transpose(c, (2, 0, 1)) + np.transpose(c, (1, 2, 0)))
    # R[i,j,k,l] = <R(f_i,f_j) f_k, f_l>
    R = (
        np.einsum("jkm,iml->ijkl", gamma, gamma)
        - np.einsum("ikm,jml->ijkl", gamma, gamma)
        - np.einsum("ijm,mkl->ijkl", c, gamma)
    )
    return R, M


def _curvature_operator(R: np.ndarray) -> np.ndarray:
    """Symmetric matrix of the curvature operator on Lambda^2 in the frame
    basis (f1^f2, f1^f3, f2^f3)."""
    op = np.zeros((3, 3))
    for a, (i, j) in enumerate(_PAIRS):
        for b, (k, l) in enumerate(_PAIRS):
            # <R(f_i ^ f_j), f_k ^ f_l> with diagonal = sectional curvature
            op[a, b] = R[i, j, l, k]
    return 0.5 * (op + op.T)


def sup_rm(g: LeftInvariantMetric) -> float:
    """Operator sup-norm of the curvature operator on 2-forms."""
    R, _ = curvature(g)
    return float(np.max(np.abs(np.linalg.eigvalsh(_curvature_operator(R)))))


def sectional_curvatures(g: LeftInvariantMetric) -> np.ndarray:
    """Sectional curvatures of the orthonormal frame planes (12, 13, 23)."""
    R, _ = curvature(g)
    return np.array([R[i, j, j, i] for (i, j) in _PAIRS])


def ricci(g: LeftInvariantMetric) -> np.ndarray:
    """Ricci tensor as a symmetric bilinear form in the X-basis."""
    R, M = curvature(g)
    ric_frame = np.einsum("ijki->jk", R)
    Minv = np.linalg.inv(M)
    ric = Minv.T @ ric_frame @ Minv
    return 0.5 * (ric + ric.T)


def homothety_decompose(g: LeftInvariantMetric) -> tuple[float, NilAutomorphism]:
    """Write G = lambda^2 * (pullback of g_nil under phi) in closed form.

    The center direction X3 is bracket-canonical; the planar block is the
    Schur complement of G33.  lambda is unique; phi is unique up to an
    isometric automorphism (we return the one with symmetric positive
    planar factor).
    """
    G = g.G
    v = G[:2, 2]
    g33 = G[2, 2]
    S = G[:2, :2] - np.outer(v, v) / g33
    lam2 = np.linalg.det(S) / g33
    lam = float(np.sqrt(lam2))
    d = float(np.sqrt(g33) / lam)
    # bottom row of D is c = v / (lam^2 d); the shear factor is b = c A^{-1}
    c = v / (lam2 * d)
    # principal square root of S / lam^2 (SPD), so det A = d > 0
    w, U = np.linalg.eigh(S / lam2)
    A = U @ np.diag(np.sqrt(w)) @ U.T
    b = np.linalg.solve(A.T, c)
    phi = NilAutomorphism.from_factors(A, float(b[0]), float(b[1]))
    return lam, phi
