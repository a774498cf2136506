"""Independent oracles used only by the test suite.

The curvature oracle evaluates the Koszul formula symbolically with sympy,
working directly in the (non-orthonormal) X-basis.  This is a different
code path from nilgeom.core.curvature, which orthonormalizes the frame
first and uses real structure-coefficient arithmetic.
"""

import numpy as np
import sympy as sp

# structure constants in the X-basis: [X1, X2] = X3, everything else zero
_STRUCT = np.zeros((3, 3, 3))
_STRUCT[0, 1, 2] = 1.0
_STRUCT[1, 0, 2] = -1.0


def _build_symbolic():
    gs = sp.symbols("g11 g12 g13 g22 g23 g33", real=True)
    g11, g12, g13, g22, g23, g33 = gs
    G = sp.Matrix([[g11, g12, g13], [g12, g22, g23], [g13, g23, g33]])
    Ginv = G.inv()

    def ip_bracket(i, j, k):
        # <[X_i, X_j], X_k> with constant structure coefficients
        return sum(sp.Rational(_STRUCT[i, j, m]) * G[m, k] for m in range(3))

    # Koszul formula; all derivative terms vanish for left-invariant data
    # 2 <nabla_{X_i} X_j, X_k> = <[X_i,X_j],X_k> - <[X_j,X_k],X_i> + <[X_k,X_i],X_j>
    nabla = [[None] * 3 for _ in range(3)]
    for i in range(3):
        for j in range(3):
            rhs = sp.Matrix(
                [
                    sp.Rational(1, 2)
                    * (ip_bracket(i, j, k) - ip_bracket(j, k, i) + ip_bracket(k, i, j))
                    for k in range(3)
                ]
            )
            nabla[i][j] = Ginv * rhs  # coefficients of nabla_{X_i} X_j in X-basis

    def nabla_vec(i, w):
        # nabla_{X_i} (w^j X_j) for constant-coefficient w
        out = sp.zeros(3, 1)
        for j in range(3):
            out += w[j] * nabla[i][j]
        return out

    # R(X_i, X_j) X_k = nabla_i nabla_j X_k - nabla_j nabla_i X_k - nabla_{[X_i,X_j]} X_k
    Rup = {}
    for i in range(3):
        for j in range(3):
            for k in range(3):
                term = nabla_vec(i, nabla[j][k]) - nabla_vec(j, nabla[i][k])
                for m in range(3):
                    cm = sp.Rational(_STRUCT[i, j, m])
                    if cm != 0:
                        term -= cm * nabla[m][k]
                Rup[(i, j, k)] = term

    # lower the last index: R_{ijkl} = <R(X_i,X_j)X_k, X_l>
    Rdown = sp.MutableDenseNDimArray.zeros(3, 3, 3, 3)
    for i in range(3):
        for j in range(3):
            for k in range(3):
                v = Rup[(i, j, k)]
                for l in range(3):
                    Rdown[i, j, k, l] = sum(v[m] * G[m, l] for m in range(3))

    # Ricci: Ric(X_j, X_k) = sum_i <R(e_i, X_j) X_k, e_i> using Ginv contraction:
    # Ric_{jk} = R^i_{i j k ...}; with all-lower tensor: Ric_{jk} = G^{il} R_{ljki}
    Ric = sp.zeros(3, 3)
    for j in range(3):
        for k in range(3):
            Ric[j, k] = sum(
                Ginv[i, l] * Rdown[l, j, k, i] for i in range(3) for l in range(3)
            )

    flat = [Rdown[i, j, k, l] for i in range(3) for j in range(3) for k in range(3) for l in range(3)]
    f_R = sp.lambdify(gs, flat, "numpy")
    f_Ric = sp.lambdify(gs, Ric, "numpy")
    return f_R, f_Ric


_F_R, _F_RIC = _build_symbolic()


def _unpack(G):
    G = np.asarray(G, dtype=float)
    return G[0, 0], G[0, 1], G[0, 2], G[1, 1], G[1, 2], G[2, 2]


def koszul_riemann(G):
    """All-lower Riemann tensor R_{ijkl} = <R(X_i,X_j)X_k, X_l> in the X-basis."""
    vals = _F_R(*_unpack(G))
    return np.array(vals, dtype=float).reshape(3, 3, 3, 3)


def koszul_ricci(G):
    """Ricci tensor (lower indices) in the X-basis."""
    return np.array(_F_RIC(*_unpack(G)), dtype=float)


def riemann_orthonormal(G):
    """Convert the X-basis Riemann tensor to an orthonormal frame f = X M."""
    R = koszul_riemann(G)
    L = np.linalg.cholesky(np.asarray(G, dtype=float))
    M = np.linalg.inv(L).T
    return np.einsum("abcd,ai,bj,ck,dl->ijkl", R, M, M, M, M)


def koszul_sup_rm(G):
    """Curvature-operator sup norm via the symbolic route."""
    R = riemann_orthonormal(G)
    pairs = [(0, 1), (0, 2), (1, 2)]
    op = np.zeros((3, 3))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            op[a, b] = R[i, j, l, k]
    op = 0.5 * (op + op.T)
    return float(np.max(np.abs(np.linalg.eigvalsh(op))))


def numeric_ricci(G, struct=None):
    """Koszul Ricci for an arbitrary constant structure tensor (default Nil).

    Passing struct=0 gives the abelian comparison model, where every
    left-invariant metric is flat.
    """
    G = np.asarray(G, dtype=float)
    struct = _STRUCT if struct is None else np.asarray(struct, dtype=float)
    Ginv = np.linalg.inv(G)

    ip = np.einsum("ijm,mk->ijk", struct, G)  # <[X_i,X_j], X_k>
    # note transpose axis semantics: transpose(a,(2,0,1))[i,j,k] = a[j,k,i]
    rhs = 0.5 * (ip - np.transpose(ip, (2, 0, 1)) + np.transpose(ip, (1, 2, 0)))
    nabla = np.einsum("kl,ijl->ijk", Ginv, rhs)  # nabla_{X_i} X_j components

    Rup = (
        np.einsum("jkm,iml->ijkl", nabla, nabla)
        - np.einsum("ikm,jml->ijkl", nabla, nabla)
        - np.einsum("ijm,mkl->ijkl", struct, nabla)
    )
    Rdown = np.einsum("ijkm,ml->ijkl", Rup, G)
    return np.einsum("il,ljki->jk", Ginv, Rdown)


def random_spd(rng, scale=1.0):
    X = rng.normal(size=(3, 3))
    G = X @ X.T + 0.5 * np.eye(3)
    return scale * G
