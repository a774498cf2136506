"""Lattices in Isom(Nil), quotient nilmanifolds, and base orbifolds.

A lattice is given by an explicit list of isometric affine generators.
Group-theoretic properties (freeness, discreteness, point-group closure)
are verified on a word-ball of configurable radius rather than decided in
general; the shipped catalog is small enough that radius 6 suffices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import core
from .core import (
    G_NIL,
    LeftInvariantMetric,
    NilAffineMap,
    NilPoint,
)

DEFAULT_RADIUS = 6
_KEY_DECIMALS = 9
_ID_TOL = 1e-6  # discreteness proxy: no nontrivial element this close to id
_FIX_TOL = 1e-9  # central-shift threshold for fixed-point detection

# cone orders of the orientable flat 2-orbifolds with cyclic point group
_CONE_ORDERS = {
    1: (),
    2: (2, 2, 2, 2),
    3: (3, 3, 3),
    4: (2, 4, 4),
    6: (2, 3, 6),
}


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class Lattice:
    generators: tuple
    label: str = ""

    def __post_init__(self):
        gens = tuple(self.generators)
        object.__setattr__(self, "generators", gens)
        for g in gens:
            if not g.is_isometry(1e-9):
                raise LatticeError(f"{self.label}: generator is not an isometry")

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "generators": [g.to_json() for g in self.generators],
        }

    @staticmethod
    def from_json(obj: dict) -> "Lattice":
        gens = tuple(NilAffineMap.from_json(g) for g in obj["generators"])
        return Lattice(gens, obj.get("label", ""))


@dataclass(frozen=True)
class Nilmanifold:
    lattice: Lattice
    metric: LeftInvariantMetric
    covering_order: int
    volume: float

    def __post_init__(self):
        if self.volume <= 0 or self.covering_order < 1:
            raise LatticeError("volume must be positive and covering order >= 1")


@dataclass(frozen=True)
class FlatOrbifoldBase:
    kind: str  # "torus" or "sphere-with-cone-points"
    cone_orders: tuple = ()

    def __post_init__(self):
        orders = tuple(sorted(self.cone_orders))
        object.__setattr__(self, "cone_orders", orders)
        if self.kind == "torus":
            if orders:
                raise LatticeError("torus base carries no cone points")
        elif self.kind == "sphere-with-cone-points":
            # flat orbifold Euler characteristic zero
            if abs(sum(1.0 - 1.0 / q for q in orders) - 2.0) > 1e-12:
                raise LatticeError(f"cone orders {orders} are not flat")
        else:
            raise LatticeError(f"unknown base kind {self.kind!r}")


# ---------------------------------------------------------------------------
# word-ball enumeration


def _element_key(phi: NilAffineMap) -> tuple:
    vals = np.concatenate([phi.translation.as_array(), phi.auto.D.ravel()])
    rounded = np.round(vals, _KEY_DECIMALS)
    rounded[rounded == 0.0] = 0.0  # collapse -0.0
    return tuple(rounded)


def _is_identity(phi: NilAffineMap, tol: float) -> bool:
    d = max(
        np.max(np.abs(phi.translation.as_array())),
        np.max(np.abs(phi.auto.D - np.eye(3))),
    )
    return d < tol


def word_ball(lattice: Lattice, radius: int = DEFAULT_RADIUS):
    """All distinct group elements expressible as words of length <= radius.

    Returns a dict key -> (element, word) where the word is a tuple of
    signed generator indices (1-based; negative means inverse).
    """
    letters = []
    for i, g in enumerate(lattice.generators):
        letters.append((i + 1, g))
        letters.append((-(i + 1), g.inverse()))

    e = NilAffineMap.identity()
    ball = {_element_key(e): (e, ())}
    frontier = [(e, ())]
    for _ in range(radius):
        new_frontier = []
        for elem, word in frontier:
            for idx, g in letters:
                nxt = elem.compose(g)
                key = _element_key(nxt)
                if key not in ball:
                    ball[key] = (nxt, word + (idx,))
                    new_frontier.append((nxt, word + (idx,)))
        frontier = new_frontier
    return ball


def _fixed_point_shift(phi: NilAffineMap):
    """Central displacement of phi along the fiber over its planar fixed point.

    Returns None when the induced planar map has no fixed point (free for
    trivial rotation part and nonzero translation).  Otherwise returns the
    amount phi shifts the x3-fiber over the fixed point; phi has a fixed
    point in Nil iff this shift vanishes.
    """
    A, t = core.induced_planar(phi)
    if np.max(np.abs(phi.auto.D - np.eye(3))) < 1e-9:
        # left translations act freely; only the identity fixes anything
        return 0.0 if _is_identity(phi, 1e-12) else None
    M = np.eye(2) - A
    if abs(np.linalg.det(M)) < 1e-12:
        # rotation-free planar part with a nontrivial automorphism cannot
        # occur for isometric generators; treat as free
        return None
    x = np.linalg.solve(M, t)
    p = NilPoint(x[0], x[1], 0.0)
    return core.apply_map(phi, p).x3 - p.x3


def validate_lattice(lattice: Lattice, radius: int = DEFAULT_RADIUS) -> dict:
    """Word-ball validation: freeness, discreteness proxy, point-group closure.

    Returns {"valid": bool, "failures": [...], "point_group_order": int,
    "ball_size": int}.  Each failure records the offending word.
    """
    ball = word_ball(lattice, radius)
    failures = []
    rng = np.random.default_rng(0)
    samples = [NilPoint(*rng.normal(size=3)) for _ in range(5)]

    point_keys = set()
    for key, (elem, word) in ball.items():
        A = elem.auto.planar_part
        point_keys.add(tuple(np.round(A, _KEY_DECIMALS).ravel()))
        if not word:
            continue
        if _is_identity(elem, _ID_TOL):
            failures.append({"word": word, "reason": "discreteness: word near identity"})
            continue
        shift = _fixed_point_shift(elem)
        if shift is not None and abs(shift) < _FIX_TOL:
            failures.append({"word": word, "reason": "freeness: word fixes a point"})
            continue
        for p in samples:
            q = core.apply_map(elem, p)
            if np.max(np.abs(q.as_array() - p.as_array())) < _FIX_TOL:
                failures.append(
                    {"word": word, "reason": "freeness: word fixes a sample point"}
                )
                break

    # closure of the planar point group within the ball
    mats = [np.array(k).reshape(2, 2) for k in point_keys]
    for A in mats:
        for B in mats:
            key = tuple(np.round(A @ B, _KEY_DECIMALS - 1).ravel())
            if not any(np.max(np.abs(np.array(key).reshape(2, 2) - C)) < 1e-7 for C in mats):
                failures.append(
                    {"word": None, "reason": "point group not closed within ball"}
                )
                break

    return {
        "valid": not failures,
        "failures": failures,
        "point_group_order": len(point_keys),
        "ball_size": len(ball) - 1,
    }


# ---------------------------------------------------------------------------
# translation subgroup, volumes


def _cross2(u, v) -> float:
    return float(u[0] * v[1] - u[1] * v[0])


def _canonical_sign(v):
    lead = v[0] if abs(v[0]) > 1e-9 else v[1]
    return -v if lead < 0 else v


def _gauss_reduce(vectors):
    """Shortest basis of the planar lattice spanned by the given vectors."""
    vs = [v for v in vectors if np.linalg.norm(v) > 1e-9]
    if not vs:
        raise LatticeError("no planar translations found in word-ball")
    vs.sort(key=lambda v: (np.linalg.norm(v), tuple(np.round(v, 9))))
    v1 = vs[0]
    v2 = None
    for v in vs[1:]:
        if abs(_cross2(v1, v)) > 1e-9:
            v2 = v
            break
    if v2 is None:
        raise LatticeError("planar translations do not span the plane")
    # Gauss reduction
    for _ in range(64):
        m = round(float(np.dot(v2, v1) / np.dot(v1, v1)))
        v2 = v2 - m * v1
        if np.dot(v2, v2) >= np.dot(v1, v1):
            break
        v1, v2 = v2, v1
    return _canonical_sign(v1), _canonical_sign(v2)


def translation_subgroup(
    lattice: Lattice, radius: int = DEFAULT_RADIUS
) -> tuple[Lattice, int]:
    """Kernel of the point-group homomorphism, as a lattice, with its index."""
    ball = word_ball(lattice, radius)
    kernel = []
    point_keys = set()
    for key, (elem, word) in ball.items():
        A = elem.auto.planar_part
        point_keys.add(tuple(np.round(A, _KEY_DECIMALS).ravel()))
        if np.max(np.abs(elem.auto.D - np.eye(3))) < 1e-9 and word:
            kernel.append(elem)
    index = len(point_keys)
    if index > 1 and not kernel:
        raise LatticeError("point group does not close within the word-ball")

    planar = [core.abelianize(e.translation) for e in kernel]
    v1, v2 = _gauss_reduce(planar)

    def closest(target):
        best = min(
            kernel,
            key=lambda e: np.linalg.norm(core.abelianize(e.translation) - target),
        )
        if np.linalg.norm(core.abelianize(best.translation) - target) > 1e-9:
            raise LatticeError("planar basis vector not realized in kernel")
        return best

    central = [
        abs(e.translation.x3)
        for e in kernel
        if np.linalg.norm(core.abelianize(e.translation)) < 1e-9
        and abs(e.translation.x3) > 1e-9
    ]
    if not central:
        raise LatticeError("no central translation found in word-ball")
    w0 = min(central)
    gens = (
        closest(v1),
        closest(v2),
        core.translation(NilPoint(0.0, 0.0, w0)),
    )
    return Lattice(gens, label=f"{lattice.label}:translations"), index


def point_group_order(lattice: Lattice, radius: int = DEFAULT_RADIUS) -> int:
    return translation_subgroup(lattice, radius)[1]


def quotient_volume(
    lattice: Lattice,
    metric: LeftInvariantMetric = G_NIL,
    radius: int = DEFAULT_RADIUS,
) -> float:
    """Riemannian volume of Nil/Gamma.

    Volume of a translation-subgroup fundamental domain (planar covolume
    times central period times sqrt(det G)) divided by the point-group index.
    """
    sub, index = translation_subgroup(lattice, radius)
    t1, t2, t3 = sub.generators
    v1 = core.abelianize(t1.translation)
    v2 = core.abelianize(t2.translation)
    covol = abs(_cross2(v1, v2))
    w0 = abs(t3.translation.x3)
    return covol * w0 * float(np.sqrt(np.linalg.det(metric.G))) / index


def conjugate_lattice(lattice: Lattice, phi: NilAffineMap, label=None) -> Lattice:
    inv = phi.inverse()
    gens = tuple(phi.compose(g).compose(inv) for g in lattice.generators)
    return Lattice(gens, label if label is not None else lattice.label)


def normalize_unit_volume(
    lattice: Lattice,
    metric: LeftInvariantMetric = G_NIL,
    radius: int = DEFAULT_RADIUS,
) -> tuple[Lattice, LeftInvariantMetric, float]:
    """Conjugate by a Carnot dilation so the quotient has unit volume.

    Volume scales as mu^4 under conjugation by the dilation with factor mu.
    Returns (conjugated lattice, metric, dilation factor).
    """
    vol = quotient_volume(lattice, metric, radius)
    mu = float(vol ** -0.25)
    if abs(mu - 1.0) < 1e-13:
        return lattice, metric, 1.0
    delta = NilAffineMap(NilPoint.identity(), core.carnot_dilation(mu))
    out = conjugate_lattice(lattice, delta, label=f"{lattice.label}:unit")
    return out, metric, mu


def nilmanifold(
    lattice: Lattice,
    metric: LeftInvariantMetric = G_NIL,
    radius: int = DEFAULT_RADIUS,
) -> Nilmanifold:
    _, index = translation_subgroup(lattice, radius)
    vol = quotient_volume(lattice, metric, radius)
    return Nilmanifold(lattice, metric, index, vol)


# ---------------------------------------------------------------------------
# base orbifold and Haken detection


def base_orbifold(lattice: Lattice, radius: int = DEFAULT_RADIUS) -> FlatOrbifoldBase:
    """Classify the quotient of the induced planar action among orientable
    flat 2-orbifolds (torus, or sphere with cone points)."""
    _, order = translation_subgroup(lattice, radius)
    if order not in _CONE_ORDERS:
        raise LatticeError(f"unrecognized planar point group of order {order}")
    if order == 1:
        return FlatOrbifoldBase("torus")
    return FlatOrbifoldBase("sphere-with-cone-points", _CONE_ORDERS[order])


def is_non_haken(lattice: Lattice, radius: int = DEFAULT_RADIUS) -> bool:
    """True iff the base orbifold is a sphere with exactly three cone points."""
    return len(base_orbifold(lattice, radius).cone_orders) == 3


# ---------------------------------------------------------------------------
# conjugacy verification


def check_conjugacy(
    lat1: Lattice,
    lat2: Lattice,
    phi: NilAffineMap,
    radius: int = DEFAULT_RADIUS,
    tol: float = 1e-8,
) -> dict:
    """Verify that phi conjugates lat1 into lat2 on the word-ball.

    Reports the planar conformal factor lam of phi, det of its derivative,
    and whether equal quotient volumes force lam = 1 (they do, since volume
    scales by lam^4 under conjugation).
    """
    ball1 = [e for e, _ in word_ball(lat1, radius).values()]
    ball2 = [e for e, _ in word_ball(lat2, radius).values()]
    inv = phi.inverse()

    def nearest(img, ball):
        return min(
            max(
                np.max(np.abs(img.translation.as_array() - e.translation.as_array())),
                np.max(np.abs(img.auto.D - e.auto.D)),
            )
            for e in ball
        )

    failures = []
    # both inclusions on generator words: phi lat1 phi^-1 = lat2
    for i, g in enumerate(lat1.generators):
        dist = nearest(phi.compose(g).compose(inv), ball2)
        if dist > tol:
            failures.append({"direction": "forward", "generator": i, "distance": float(dist)})
    for i, g in enumerate(lat2.generators):
        dist = nearest(inv.compose(g).compose(phi), ball1)
        if dist > tol:
            failures.append({"direction": "reverse", "generator": i, "distance": float(dist)})

    A = phi.auto.planar_part
    AtA = A.T @ A
    conformal = np.max(np.abs(AtA - AtA[0, 0] * np.eye(2))) < 1e-9
    lam = float(np.sqrt(abs(np.linalg.det(A))))
    det_D = float(np.linalg.det(phi.auto.D))
    vol1 = quotient_volume(lat1, G_NIL, radius)
    vol2 = quotient_volume(lat2, G_NIL, radius)
    return {
        "conjugate": not failures,
        "failures": failures,
        "lam": lam,
        "conformal": bool(conformal),
        "det_derivative": det_D,
        "volume_ratio": vol2 / vol1,
        "equal_volumes_force_isometry": bool(abs(vol2 / vol1 - 1.0) < 1e-9),
    }


# ---------------------------------------------------------------------------
# shipped catalog


def _screw(theta: float, tau: float) -> NilAffineMap:
    """Central translation by tau composed with rotation by theta about X3."""
    return NilAffineMap(NilPoint(0.0, 0.0, tau), core.rotation_isometry(theta))


def _translations(*points) -> tuple:
    return tuple(core.translation(NilPoint(*p)) for p in points)


_S3 = float(np.sqrt(3.0))


def builtin_catalog() -> list[Lattice]:
    """Translation lattices Gamma_k (k = 1..4) plus one extension per cyclic
    planar point group of order 2, 3, 4, 6."""
    out = []
    for k in range(1, 5):
        out.append(
            Lattice(
                _translations((1, 0, 0), (0, 1, 0), (0, 0, 1.0 / k)),
                label=f"gamma{k}",
            )
        )
    # square planar lattice; screw parameters chosen so every rotational
    # word has nonzero central shift at its axis (word-ball verified)
    square = _translations((1, 0, 0), (0, 1, 0))
    out.append(Lattice(square + (_screw(np.pi, 0.25),), label="screw2"))
    out.append(Lattice(square + (_screw(np.pi / 2, 0.125),), label="screw4"))
    # hexagonal planar lattice for the order 3 and 6 point groups
    hexa = _translations((1, 0, 0), (0.5, _S3 / 2, 0))
    out.append(Lattice(hexa + (_screw(2 * np.pi / 3, _S3 / 12),), label="screw3"))
    out.append(Lattice(hexa + (_screw(np.pi / 3, _S3 / 72),), label="screw6"))
    return out


def load_catalog(path) -> list[Lattice]:
    with open(path) as fh:
        data = json.load(fh)
    return [Lattice.from_json(obj) for obj in data]


def save_catalog(lattices, path) -> None:
    with open(path, "w") as fh:
        json.dump([lat.to_json() for lat in lattices], fh, indent=2)
        fh.write("\n")
