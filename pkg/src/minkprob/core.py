"""Minkowski-space linear algebra and group machinery.

Everything here lives in R^{d,1}: R^{d+1} with the bilinear form
``<X,Y> = sum_i X_i Y_i - X_{d+1} Y_{d+1}``.  The module provides the
inner product, the hyperboloid/Klein-ball coordinate maps, linear and
affine isometries, finitely generated lattices with translation cocycles,
the induced projective action on the ball and the action on ball support
functions, orbit enumeration, and Dirichlet fundamental polygons (d=2).

Vectors are plain numpy arrays; all operations are pure functions.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

LORENTZ_TOL = 1e-8
RELATOR_TOL = 1e-8
DEDUP_TOL = 1e-9

_GEN_LETTERS = "abcdefghijklmnopqrstuvwxyz"


def minkowski_metric(d: int) -> np.ndarray:
    J = np.eye(d + 1)
    J[d, d] = -1.0
    return J


def mink_inner(X, Y) -> float:
    """Minkowski product sum_i X_i Y_i - X_{d+1} Y_{d+1} (last coord time-like)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    return float(np.dot(X[:-1], Y[:-1]) - X[-1] * Y[-1])


def mink_norm(X) -> float:
    """|X|_- = sqrt(-<X,X>) for time-like X."""
    q = -mink_inner(X, X)
    if q < 0:
        raise ValueError("mink_norm requires a time-like vector")
    return float(np.sqrt(q))


def hat(x) -> np.ndarray:
    """Lift x in R^d to (x, 1)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.concatenate([x, [1.0]])


def ball_lambda(x) -> float:
    """lambda(x) = sqrt(1 - |x|^2) = |(x,1)|_- for x in the closed ball."""
    x = np.asarray(x, dtype=float)
    s = 1.0 - float(np.dot(x, x))
    if s < -1e-12:
        raise ValueError(f"point outside the closed unit ball: |x|={np.linalg.norm(x)}")
    return float(np.sqrt(max(s, 0.0)))


def radial_map(x) -> np.ndarray:
    """Klein ball -> hyperboloid: v(x) = (x,1)/lambda(x)."""
    x = np.asarray(x, dtype=float)
    lam = ball_lambda(x)
    if lam == 0.0:
        raise ValueError("radial_map undefined on the boundary sphere")
    return hat(x) / lam


def radial_map_inverse(X) -> np.ndarray:
    """Hyperboloid -> Klein ball: (x, x_{d+1}) -> x / x_{d+1}."""
    X = np.asarray(X, dtype=float)
    if X[-1] <= 0:
        raise ValueError("not a future time-like vector")
    return X[:-1] / X[-1]


def _check_lorentz(g: np.ndarray, tol: float = LORENTZ_TOL):
    d = g.shape[0] - 1
    J = minkowski_metric(d)
    err = np.abs(g.T @ J @ g - J).max()
    if err > tol:
        raise ValueError(f"matrix is not Lorentz within {tol:g} (err={err:.2e})")
    if abs(np.linalg.det(g) - 1.0) > 1e-8:
        raise ValueError("matrix must have determinant +1")
    if g[-1, -1] <= 0:
        raise ValueError("matrix must preserve the future cone")


def lorentz_inverse(g: np.ndarray) -> np.ndarray:
    """Exact inverse J g^T J of a Lorentz matrix."""
    d = g.shape[0] - 1
    J = minkowski_metric(d)
    return J @ g.T @ J


@dataclass(frozen=True)
class Isometry:
    """Affine isometry of R^{d,1}: x -> linear @ x + translation.

    Validation runs on construction; word products built internally via
    ``compose``/``inverse`` skip it (entry growth of long boost words makes
    the absolute Gram check meaningless there).
    """

    linear: np.ndarray
    translation: np.ndarray
    _validate: bool = True

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float)
        tr = np.asarray(self.translation, dtype=float)
        if lin.shape[0] != lin.shape[1] or tr.shape != (lin.shape[0],):
            raise ValueError("inconsistent isometry shapes")
        if self._validate:
            _check_lorentz(lin)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", tr)

    @property
    def d(self) -> int:
        return self.linear.shape[0] - 1

    @classmethod
    def identity(cls, d: int) -> "Isometry":
        return cls(np.eye(d + 1), np.zeros(d + 1))

    @classmethod
    def translation_by(cls, t) -> "Isometry":
        t = np.asarray(t, dtype=float)
        return cls(np.eye(len(t)), t)

    @classmethod
    def linear_part(cls, g) -> "Isometry":
        g = np.asarray(g, dtype=float)
        return cls(g, np.zeros(g.shape[0]))

    def __call__(self, p) -> np.ndarray:
        return self.linear @ np.asarray(p, dtype=float) + self.translation

    def compose(self, other: "Isometry") -> "Isometry":
        """self after other: (self*other)(p) = self(other(p))."""
        return Isometry(self.linear @ other.linear,
                        self.linear @ other.translation + self.translation,
                        _validate=False)

    def inverse(self) -> "Isometry":
        gi = lorentz_inverse(self.linear)
        return Isometry(gi, -(gi @ self.translation), _validate=False)


def projective_action(gamma: np.ndarray, x) -> np.ndarray:
    """Induced action on the Klein ball: gamma_bar(x) = (gamma(x,1)) / time component."""
    X = np.asarray(gamma, dtype=float) @ hat(x)
    return X[:-1] / X[-1]


def projective_action_many(gamma: np.ndarray, xs: np.ndarray) -> np.ndarray:
    xs = np.asarray(xs, dtype=float)
    X = np.column_stack([xs, np.ones(len(xs))]) @ np.asarray(gamma, dtype=float).T
    return X[:, :-1] / X[:, -1:]


def act_on_ball_function(sigma: Isometry, h, boundary: bool = False):
    """Action of an isometry on a ball support function, as an evaluator.

    Returns ``x -> (lambda(x)/lambda(gb^-1 x)) h(gb^-1 x) + <(x,1), tau>``
    where ``gb`` is the projective action of the linear part.  With
    ``boundary=True`` the evaluator takes unit vectors and applies the
    finite limit rule ``l -> (gamma^-1 (l,1))_{d+1} g(gb^-1 l) + <(l,1), tau>``
    for boundary traces.
    """
    gi = lorentz_inverse(sigma.linear)
    tau = sigma.translation

    def acted(x):
        X = gi @ hat(x)
        z = X[-1]
        y = X[:-1] / z
        val = z * h(y) + mink_inner(hat(x), tau)
        if not np.isfinite(val):
            raise FloatingPointError("degenerate evaluation of acted support function")
        return val

    # On the boundary the lambda ratio degenerates but z stays finite.
    return acted


def act_on_hyperbolic_function(sigma: Isometry, hbar):
    """Action on hyperbolic support functions: eta -> hbar(gamma^-1 eta) + <tau, eta>."""
    gi = lorentz_inverse(sigma.linear)
    tau = sigma.translation

    def acted(eta):
        eta = np.asarray(eta, dtype=float)
        return hbar(gi @ eta) + mink_inner(tau, eta)

    return acted


def _word_letters(word, n_gens: int):
    """Normalize a word to a list of generator letters, validating symbols."""
    valid = set(_GEN_LETTERS[:n_gens]) | set(_GEN_LETTERS[:n_gens].upper())
    letters = list(word)
    for ch in letters:
        if ch not in valid:
            raise KeyError(f"unknown generator symbol {ch!r}")
    return letters


@dataclass
class Lattice:
    """Finitely generated lattice in SO^+(d,1) with numerically checked relators.

    Generators are letters 'a', 'b', ...; inverses are the uppercase letters.
    """

    generators: list
    relators: list = field(default_factory=list)
    preset_name: str | None = None

    def __post_init__(self):
        gens = [np.asarray(g, dtype=float) for g in self.generators]
        for g in gens:
            _check_lorentz(g, LORENTZ_TOL)
        self.generators = gens
        for rel in self.relators:
            m = self.word_matrix(rel)
            err = np.abs(m - np.eye(self.d + 1)).max()
            if err > RELATOR_TOL:
                raise ValueError(f"relator {rel!r} fails: err={err:.2e}")

    @property
    def d(self) -> int:
        return self.generators[0].shape[0] - 1

    @property
    def letters(self) -> str:
        return _GEN_LETTERS[: len(self.generators)]

    def matrix(self, letter: str) -> np.ndarray:
        idx = _GEN_LETTERS.index(letter.lower())
        g = self.generators[idx]
        return lorentz_inverse(g) if letter.isupper() else g

    def word_matrix(self, word) -> np.ndarray:
        m = np.eye(self.d + 1)
        for ch in _word_letters(word, len(self.generators)):
            m = m @ self.matrix(ch)
        return m


@dataclass
class Cocycle:
    """Translation parts tau_gamma attached to a lattice.

    Stored per generator and extended to arbitrary words through
    ``tau_{alpha beta} = tau_alpha + alpha tau_beta`` (inverse letters use
    ``tau_{g^-1} = -g^-1 tau_g``).  The relator condition is checked at
    construction.
    """

    lattice: Lattice
    vectors: list

    def __post_init__(self):
        vecs = [np.asarray(v, dtype=float) for v in self.vectors]
        if len(vecs) != len(self.lattice.generators):
            raise ValueError("one translation vector per generator required")
        for v in vecs:
            if v.shape != (self.lattice.d + 1,):
                raise ValueError("cocycle vector of wrong dimension")
        self.vectors = vecs
        for rel in self.lattice.relators:
            t = self.extend(rel)
            if np.abs(t).max() > RELATOR_TOL:
                raise ValueError(f"cocycle fails relator {rel!r}: |tau|={np.abs(t).max():.2e}")

    @classmethod
    def zero(cls, lattice: Lattice) -> "Cocycle":
        return cls(lattice, [np.zeros(lattice.d + 1) for _ in lattice.generators])

    @classmethod
    def coboundary(cls, lattice: Lattice, t0) -> "Cocycle":
        """Trivial deformation fixing the point t0: tau_g = t0 - g t0."""
        t0 = np.asarray(t0, dtype=float)
        return cls(lattice, [t0 - g @ t0 for g in lattice.generators])

    @property
    def is_zero(self) -> bool:
        return max(np.abs(v).max() for v in self.vectors) < 1e-14

    def coboundary_point(self):
        """Least-squares t0 with tau_g = t0 - g t0; None if not a coboundary."""
        d1 = self.lattice.d + 1
        rows = [np.eye(d1) - g for g in self.lattice.generators]
        rhs = np.concatenate(self.vectors)
        A = np.vstack(rows)
        t0, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        if np.abs(A @ t0 - rhs).max() < 1e-10:
            return t0
        return None

    def letter(self, ch: str) -> np.ndarray:
        idx = _GEN_LETTERS.index(ch.lower())
        if ch.islower():
            return self.vectors[idx]
        gi = lorentz_inverse(self.lattice.generators[idx])
        return -(gi @ self.vectors[idx])

    def extend(self, word) -> np.ndarray:
        """tau_w for a word over generators and inverses."""
        tau = np.zeros(self.lattice.d + 1)
        m = np.eye(self.lattice.d + 1)
        for ch in _word_letters(word, len(self.lattice.generators)):
            tau = tau + m @ self.letter(ch)
            m = m @ self.lattice.matrix(ch)
        return tau

    def isometry(self, word) -> Isometry:
        return Isometry(self.lattice.word_matrix(word), self.extend(word), _validate=False)


def reduced_words(n_gens: int, depth: int):
    """Breadth-first reduced words (left-inverse cancellation only) up to depth."""
    letters = _GEN_LETTERS[:n_gens] + _GEN_LETTERS[:n_gens].upper()
    words = [""]
    frontier = [""]
    for _ in range(depth):
        nxt = []
        for w in frontier:
            for ch in letters:
                if w and w[-1] == ch.swapcase():
                    continue
                nxt.append(w + ch)
        words.extend(nxt)
        frontier = nxt
    return words


def orbit(cocycle: Cocycle, p, depth: int, dedup_tol: float = DEDUP_TOL):
    """Distinct images gamma_tau(p) over reduced words of length <= depth.

    Returns (points, words); deduplication is by coordinate proximity.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    p = np.asarray(p, dtype=float)
    lat = cocycle.lattice
    seen = {}
    pts, words = [], []
    frontier = [(np.eye(lat.d + 1), np.zeros(lat.d + 1), "")]
    letters = lat.letters + lat.letters.upper()

    def visit(mat, tau, word):
        q = mat @ p + tau
        key = tuple(np.round(q / dedup_tol).astype(np.int64))
        if key in seen:
            return False
        seen[key] = word
        pts.append(q)
        words.append(word)
        return True

    visit(*frontier[0])
    for _ in range(depth):
        nxt = []
        for mat, tau, w in frontier:
            for ch in letters:
                if w and w[-1] == ch.swapcase():
                    continue
                m2 = mat @ lat.matrix(ch)
                t2 = tau + mat @ cocycle.letter(ch)
                if visit(m2, t2, w + ch):
                    nxt.append((m2, t2, w + ch))
        frontier = nxt
    return np.asarray(pts), words


def group_elements(lattice: Lattice, depth: int, dedup_tol: float = DEDUP_TOL):
    """Distinct group elements (matrices) with their words, up to word length depth."""
    seen = {}
    out = []
    frontier = [(np.eye(lattice.d + 1), "")]
    letters = lattice.letters + lattice.letters.upper()

    def visit(mat, word):
        key = tuple(np.round(mat / dedup_tol).astype(np.int64).ravel())
        if key in seen:
            return False
        seen[key] = word
        out.append((mat, word))
        return True

    visit(*frontier[0])
    for _ in range(depth):
        nxt = []
        for mat, w in frontier:
            for ch in letters:
                if w and w[-1] == ch.swapcase():
                    continue
                m2 = mat @ lattice.matrix(ch)
                if visit(m2, w + ch):
                    nxt.append((m2, w + ch))
        frontier = nxt
    return out


class FundamentalDomainError(ValueError):
    """Raised when the Dirichlet polygon does not close at the given depth."""


@dataclass
class DirichletPolygon:
    """Convex fundamental polygon for a lattice acting on H^2, in Klein coordinates.

    ``vertices`` are ordered counterclockwise.  ``pairings[k]`` is the word of
    the group element gamma whose bisector carries edge k (from vertex k to
    vertex k+1); gamma^-1 maps edge k isometrically onto its partner edge.
    """

    vertices: np.ndarray
    pairings: list
    partner: list
    lattice: Lattice

    @property
    def n_sides(self) -> int:
        return len(self.pairings)

    def hyperbolic_area(self) -> float:
        """Gauss-Bonnet: (n-2) pi - sum of interior angles."""
        V = [radial_map(v) for v in self.vertices]
        n = len(V)
        total = 0.0
        for k in range(n):
            p = V[k]
            u = V[(k - 1) % n]
            w = V[(k + 1) % n]
            # tangent projections at p
            a = u + mink_inner(u, p) * p
            b = w + mink_inner(w, p) * p
            ca = mink_inner(a, b) / np.sqrt(mink_inner(a, a) * mink_inner(b, b))
            total += float(np.arccos(np.clip(ca, -1.0, 1.0)))
        return (n - 2) * np.pi - total

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        n = len(self.vertices)
        for k in range(n):
            a = self.vertices[k]
            b = self.vertices[(k + 1) % n]
            e = b - a
            if e[0] * (x[1] - a[1]) - e[1] * (x[0] - a[0]) < -tol:
                return False
        return True


def dirichlet_polygon(lattice: Lattice, basepoint=None, depth: int = 3) -> DirichletPolygon:
    """Dirichlet fundamental polygon about a basepoint of H^2, in the Klein ball.

    The polygon is ``{x : d(v(x), p0) <= d(v(x), gamma p0)}`` over the orbit
    ball of the given depth; in Klein coordinates each constraint is the
    half-plane ``x . q_s <= q_t - 1`` for the orbit point ``(q_s, q_t)``.
    """
    if lattice.d != 2:
        raise ValueError("Dirichlet polygons are implemented for d=2 only")
    if basepoint is None:
        basepoint = np.array([0.0, 0.0, 1.0])
    p0 = np.asarray(basepoint, dtype=float)
    pts, words = orbit(Cocycle.zero(lattice), p0, depth)
    # bring the basepoint to the origin: conjugate constraints through a boost
    F = _frame_at(p0)
    Fi = lorentz_inverse(F)
    normals, offsets, keep_words = [], [], []
    for q, w in zip(pts, words):
        if not w:
            continue
        qq = Fi @ q
        if abs(qq[2] - 1.0) < 1e-12:
            continue
        normals.append(qq[:2])
        offsets.append(qq[2] - 1.0)
        keep_words.append(w)
    normals = np.asarray(normals)
    offsets = np.asarray(offsets)
    verts, edge_ids = _halfplane_polygon(normals, offsets)
    if verts is None:
        raise FundamentalDomainError(
            f"Dirichlet polygon not closed at depth {depth}; increase depth")
    pairings = [keep_words[e] for e in edge_ids]
    # map vertices back from the conjugated frame
    back = np.array([projective_action(F, v) for v in verts])
    # partner edge: the edge whose pairing word is the inverse word
    inv = {w: "".join(ch.swapcase() for ch in reversed(w)) for w in pairings}
    partner = []
    for w in pairings:
        try:
            partner.append(pairings.index(inv[w]))
        except ValueError:
            raise FundamentalDomainError(
                "side pairing incomplete; increase depth") from None
    return DirichletPolygon(back, pairings, partner, lattice)


def _frame_at(p):
    """A Lorentz matrix sending (0,0,1) to the hyperboloid point p."""
    p = np.asarray(p, dtype=float)
    if np.allclose(p, [0.0, 0.0, 1.0]):
        return np.eye(3)
    x = p[:2]
    r = np.linalg.norm(x)
    u = x / r
    s = np.arcsinh(r)
    c, sh = np.cosh(s), np.sinh(s)
    boost = np.array([[1 + (c - 1) * u[0] ** 2, (c - 1) * u[0] * u[1], sh * u[0]],
                      [(c - 1) * u[0] * u[1], 1 + (c - 1) * u[1] ** 2, sh * u[1]],
                      [sh * u[0], sh * u[1], c]])
    return boost


def _halfplane_polygon(normals, offsets, box: float = 2.0, min_edge: float = 1e-9):
    """Intersect half-planes n.x <= o (all containing 0); None if unbounded.

    Robust to tangent constraints: each constraint's line is clipped
    one-dimensionally against all the others, and only segments longer than
    min_edge survive.  Returns (vertices ccw, constraint index per edge).
    """
    normals = np.asarray(normals, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    m = len(normals)
    edges = []
    for j in range(m):
        n_ = normals[j]
        o = offsets[j]
        nn = np.dot(n_, n_)
        if nn <= 0:
            continue
        p0 = n_ * (o / nn)                    # foot of the line
        t_dir = np.array([-n_[1], n_[0]]) / np.sqrt(nn)
        lo, hi = -box, box
        ok = True
        for k in range(m):
            if k == j:
                continue
            a = np.dot(normals[k], t_dir)
            b = np.dot(normals[k], p0) - offsets[k]
            # constraint: a t + b <= 0
            if abs(a) < 1e-15:
                if b > 1e-12:
                    ok = False
                    break
            elif a > 0:
                hi = min(hi, -b / a)
            else:
                lo = max(lo, -b / a)
            if hi - lo <= min_edge:
                ok = False
                break
        if ok and hi - lo > min_edge:
            edges.append((j, p0 + lo * t_dir, p0 + hi * t_dir))
    if len(edges) < 3:
        return None, None
    # order edges counterclockwise by midpoint angle
    mids = np.array([(0.5 * (a + b)) for _, a, b in edges])
    ang = np.arctan2(mids[:, 1], mids[:, 0])
    order = np.argsort(ang)
    verts, ids = [], []
    for t in order:
        j, a, b = edges[t]
        # orient the segment ccw
        if a[0] * b[1] - a[1] * b[0] < 0:
            a, b = b, a
        verts.append(a)
        ids.append(int(j))
    # consecutive edges must share endpoints (within tolerance)
    n_e = len(verts)
    for t in range(n_e):
        j, a, b = edges[order[t]]
        if a[0] * b[1] - a[1] * b[0] < 0:
            a, b = b, a
        nxt = verts[(t + 1) % n_e]
        if np.linalg.norm(b - nxt) > 1e-6:
            return None, None
    if any(np.linalg.norm(v) > box - 1e-6 for v in verts):
        return None, None
    return np.asarray(verts), ids


def genus2_lattice() -> Lattice:
    """Genus-2 surface group from the regular hyperbolic octagon.

    Generators a1, b1, a2, b2 are the side pairings of the regular octagon
    with interior angle pi/4 (in-radius arccosh(cot pi/8)), arranged so the
    single relator is the commutator product [a1,b1][a2,b2].
    """
    r_in = np.arccosh(1.0 / np.tan(np.pi / 8.0))
    r = np.arctanh(np.tanh(r_in) / np.cos(np.pi / 8.0))
    V = []
    for k in range(8):
        phi = 2.0 * np.pi * k / 8.0
        V.append(np.array([np.sinh(r) * np.cos(phi),
                           np.sinh(r) * np.sin(phi),
                           np.cosh(r)]))

    def pair(side_pos, side_inv):
        P, Q = V[side_inv], V[(side_inv + 1) % 8]
        Pp, Qp = V[(side_pos + 1) % 8], V[side_pos]
        return _iso_from_segments(P, Q, Pp, Qp)

    a1 = pair(0, 2)
    b1 = lorentz_inverse(pair(1, 3))
    a2 = pair(4, 6)
    b2 = lorentz_inverse(pair(5, 7))
    return Lattice([a1, b1, a2, b2], relators=["abABcdCD"], preset_name="genus2")


def _iso_from_segments(P, Q, Pp, Qp) -> np.ndarray:
    """Orientation-preserving isometry of H^2 with P -> Pp, Q -> Qp."""

    def frame(p, q):
        t = q + mink_inner(q, p) * p
        t = t / np.sqrt(mink_inner(t, t))
        J = minkowski_metric(2)
        w = np.cross(J @ p, J @ t)
        w = w / np.sqrt(mink_inner(w, w))
        return np.column_stack([t, w, p])

    F1 = frame(np.asarray(P, float), np.asarray(Q, float))
    F2 = frame(np.asarray(Pp, float), np.asarray(Qp, float))
    return F2 @ np.linalg.inv(F1)


def load_lattice_json(source) -> tuple[Lattice, Cocycle]:
    """Load a lattice + cocycle from a JSON document (path, file, or dict).

    Schema: {"generators": [[row-major (d+1)^2]...], "relators": [["a","b",...]],
    "cocycle": [[d+1 vector]...]} with "cocycle" optional (defaults to zero).
    """
    if isinstance(source, dict):
        doc = source
    elif hasattr(source, "read"):
        doc = json.load(source)
    else:
        with open(source) as f:
            doc = json.load(f)
    gens = []
    for g in doc["generators"]:
        g = np.asarray(g, dtype=float)
        if g.ndim == 1:
            n = int(round(np.sqrt(g.size)))
            g = g.reshape(n, n)
        gens.append(g)
    relators = ["".join(r) if not isinstance(r, str) else r
                for r in doc.get("relators", [])]
    lat = Lattice(gens, relators=relators, preset_name=doc.get("name"))
    if doc.get("cocycle") is not None:
        coc = Cocycle(lat, [np.asarray(v, dtype=float) for v in doc["cocycle"]])
    else:
        coc = Cocycle.zero(lat)
    return lat, coc
