"""Concave nondecreasing functions on balance space as minima of affine pieces.

A PwlConcaveFn stores pieces (slope vector a, intercept c) and evaluates to
min_l (a_l . b + c_l). Slopes are componentwise nonnegative, so the function
is nondecreasing; a min of affine functions is concave by construction.

Fitting: fit_lower interpolates sampled values by the upper surface of their
convex hull (a lower bound between samples of a concave source); fit_upper
takes tangent planes built from supergradients (an upper bound everywhere).
adaptive_approximate drives both from an evaluator until the sandwich gap at
refinement points is below kappa times the largest sampled value.
"""

from __future__ import annotations

import itertools
from collections import deque
from typing import NamedTuple

import numpy as np

ACTIVE_TOL = 1e-9
SLOPE_TOL = 1e-7


class PwlError(ValueError):
    """Bad piece data or samples that cannot come from a concave source."""


class ConcavityError(PwlError):
    """Sandwich violated at a refinement point: evaluator is not concave."""


class PwlConcaveFn:
    """min of affine pieces; immutable after construction."""

    __slots__ = ("slopes", "intercepts", "box")

    def __init__(self, pieces, box):
        slopes = []
        intercepts = []
        for a, c in pieces:
            slopes.append(np.atleast_1d(np.asarray(a, dtype=float)))
            intercepts.append(float(c))
        if not slopes:
            raise PwlError("a PwlConcaveFn needs at least one piece")
        S = np.vstack(slopes)
        C = np.array(intercepts)
        if not (np.isfinite(S).all() and np.isfinite(C).all()):
            raise PwlError("non-finite piece data")
        if (S < -SLOPE_TOL).any():
            raise PwlError(f"negative slope in pieces (min {S.min()!r}); source not nondecreasing")
        box = np.atleast_1d(np.asarray(box, dtype=float))
        # tiny negative slopes are solver noise; clamp on the safe (lower) side
        neg = np.minimum(S, 0.0)
        if neg.any():
            C = C + neg @ box
            S = np.maximum(S, 0.0)
        order = np.lexsort(np.column_stack([C, S[:, ::-1]]).T)
        S, C = S[order], C[order]
        keep = np.ones(len(C), dtype=bool)
        for r in range(1, len(C)):
            if C[r] == C[r - 1] and (S[r] == S[r - 1]).all():
                keep[r] = False
        self.slopes = S[keep]
        self.intercepts = C[keep]
        self.box = box

    @property
    def n_pieces(self):
        return len(self.intercepts)

    @property
    def k(self):
        return self.slopes.shape[1]

    @property
    def is_zero(self):
        return (self.n_pieces == 1 and not self.slopes.any()
                and self.intercepts[0] == 0.0)

    def value(self, b) -> float:
        b = np.asarray(b, dtype=float)
        return float(np.min(self.slopes @ b + self.intercepts))

    def values(self, B) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        return np.min(B @ self.slopes.T + self.intercepts, axis=1)

    def supergradient(self, b) -> np.ndarray:
        """Slope of the piece attaining the min; ties to the lexicographically
        smallest slope vector (pieces are stored slope-sorted)."""
        b = np.asarray(b, dtype=float)
        vals = self.slopes @ b + self.intercepts
        m = vals.min()
        active = np.flatnonzero(vals <= m + ACTIVE_TOL * (1.0 + abs(m)))
        return self.slopes[active[0]].copy()

    def value_and_supergradient(self, b):
        b = np.asarray(b, dtype=float)
        vals = self.slopes @ b + self.intercepts
        m = vals.min()
        active = np.flatnonzero(vals <= m + ACTIVE_TOL * (1.0 + abs(m)))
        return float(m), self.slopes[active[0]].copy()

    @classmethod
    def zero(cls, k, box):
        return cls([(np.zeros(k), 0.0)], box)

    def to_dict(self):
        return {"pieces": [{"slope": list(map(float, a)), "intercept": float(c)}
                           for a, c in zip(self.slopes, self.intercepts)],
                "box": [float(x) for x in self.box]}

    @classmethod
    def from_dict(cls, d):
        return cls([(p["slope"], p["intercept"]) for p in d["pieces"]], d["box"])

    def __repr__(self):
        return f"PwlConcaveFn(k={self.k}, pieces={self.n_pieces})"


def _dedupe_points(points):
    """Merge duplicate balance points; conflicting values are an input error."""
    seen = {}
    out = []
    for b, y in points:
        b = np.atleast_1d(np.asarray(b, dtype=float))
        y = float(y)
        key = tuple(np.round(b, 12))
        if key in seen:
            if abs(seen[key] - y) > 1e-9 * (1.0 + abs(y)):
                raise PwlError(f"conflicting values {seen[key]!r} vs {y!r} at balance {key}")
            continue
        seen[key] = y
        out.append((b, y))
    return out


def fit_lower(points, box=None) -> PwlConcaveFn:
    """Concave hull interpolant of (balance, value) samples.

    Interpolates the samples exactly and underestimates a concave source
    everywhere inside the convex hull of the sampled balances. Supply samples
    spanning the domain (box corners) for a bound valid on the whole box.
    """
    pts = _dedupe_points(points)
    k = len(pts[0][0])
    if box is None:
        box = np.max(np.vstack([b for b, _ in pts]), axis=0)
    if len(pts) == 1:
        return PwlConcaveFn([(np.zeros(k), pts[0][1])], box)
    if k == 1:
        return _fit_lower_1d(pts, box)
    return _fit_lower_nd(pts, k, box)


def _fit_lower_1d(pts, box):
    pts = sorted(pts, key=lambda p: p[0][0])
    hull = []  # indices into pts forming the upper concave envelope
    for b, y in pts:
        hull.append((b[0], y))
        while len(hull) >= 3:
            (b0, y0), (b1, y1), (b2, y2) = hull[-3:]
            # middle point at or below the chord -> not a hull vertex
            if (y1 - y0) * (b2 - b1) <= (y2 - y1) * (b1 - b0) + 1e-15:
                hull.pop(-2)
            else:
                break
    pieces = []
    for (b0, y0), (b1, y1) in zip(hull, hull[1:]):
        a = (y1 - y0) / (b1 - b0)
        pieces.append((np.array([a]), y0 - a * b0))
    if not pieces:  # single hull vertex
        pieces = [(np.zeros(1), hull[0][1])]
    # merge collinear neighbours
    merged = [pieces[0]]
    for a, c in pieces[1:]:
        a0, c0 = merged[-1]
        if abs(a[0] - a0[0]) <= 1e-12 * (1.0 + abs(a0[0])) and abs(c - c0) <= 1e-9 * (1.0 + abs(c0)):
            continue
        merged.append((a, c))
    return PwlConcaveFn(merged, box)


def _fit_lower_nd(pts, k, box):
    from scipy.spatial import ConvexHull, QhullError

    B = np.vstack([b for b, _ in pts])
    y = np.array([v for _, v in pts])
    # ghost each sample to the box edge per axis subset at equal height: valid
    # lower-bound points of a nondecreasing source that keep hull facets from
    # tilting downward along under-sampled boundary strips
    ghosts = [np.column_stack([B, y])]
    for mask in itertools.product((False, True), repeat=k):
        if not any(mask):
            continue
        G = B.copy()
        for i, on in enumerate(mask):
            if on:
                G[:, i] = box[i]
        ghosts.append(np.column_stack([G, y]))
    cloud = np.unique(np.vstack(ghosts), axis=0)
    pieces = []
    if len(pts) >= k + 2:
        try:
            hull = ConvexHull(cloud)
            for eq in hull.equations:
                normal, offset = eq[:-1], eq[-1]
                if normal[k] > 1e-12:  # upper facet: interior lies below
                    a = -normal[:k] / normal[k]
                    c = -offset / normal[k]
                    pieces.append((a, c))
        except QhullError:
            pieces = []
    if not pieces:
        # affinely dependent samples: a single plane through them
        A = np.column_stack([B, np.ones(len(y))])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        resid = float(np.max(np.abs(A @ coef - y)))
        if resid > 1e-7 * (1.0 + np.max(np.abs(y))):
            raise PwlError("degenerate sample cloud that no single plane interpolates")
        pieces = [(coef[:k], coef[k])]
    return PwlConcaveFn(pieces, box)


def fit_upper(points_with_supergradients, box=None) -> PwlConcaveFn:
    """Tangent-plane envelope from (balance, value, supergradient) samples.

    Each tangent overestimates a concave source everywhere, so their min is
    a global upper bound that touches the source at every sample.
    """
    pieces = []
    maxb = None
    for b, y, a in points_with_supergradients:
        b = np.atleast_1d(np.asarray(b, dtype=float))
        a = np.atleast_1d(np.asarray(a, dtype=float))
        # clamp solver noise on the safe (upper) side
        neg = np.minimum(a, 0.0)
        c = float(y) - float((a - neg) @ b)
        pieces.append((np.maximum(a, 0.0), c))
        maxb = b if maxb is None else np.maximum(maxb, b)
    if not pieces:
        raise PwlError("fit_upper needs at least one sample")
    if box is None:
        box = maxb
    return PwlConcaveFn(pieces, box)


class SandwichFit(NamedTuple):
    lower: PwlConcaveFn
    upper: PwlConcaveFn
    samples: list       # (balance tuple, value, supergradient tuple)
    stats: dict


def adaptive_approximate(evaluator, kappa, box, *, depth_cap=60, eval_cap=4000,
                         extra_points=()) -> SandwichFit:
    """Sandwich a concave nondecreasing evaluator between PWL bounds.

    evaluator(b) -> (value, supergradient). Cells of the box are bisected
    while the local tangent-vs-secant gap at the cell midpoint exceeds
    kappa * (largest value seen so far). In one dimension the split point is
    the intersection of the endpoint tangents, which recovers piecewise-linear
    evaluators exactly in a few evaluations per piece.
    """
    box = np.atleast_1d(np.asarray(box, dtype=float))
    k = len(box)
    cache = {}

    def ev(b):
        b = np.asarray(b, dtype=float)
        key = tuple(np.round(b, 12))
        hit = cache.get(key)
        if hit is None:
            val, grad = evaluator(b)
            hit = (float(val), np.atleast_1d(np.asarray(grad, dtype=float)), b)
            cache[key] = hit
        return hit

    corners0 = list(itertools.product(*[(0.0, float(hi)) for hi in box]))
    for c in corners0:
        ev(np.array(c))
    for p in extra_points:
        ev(np.asarray(p, dtype=float))

    queue = deque([(np.zeros(k), box.copy(), 0)])
    saturated = 0
    while queue:
        lo, hi, depth = queue.popleft()
        if (hi - lo <= 1e-12 * (1.0 + box)).all():
            continue
        corner_pts = [np.array(c) for c in itertools.product(*zip(lo, hi))]
        evs = [ev(c) for c in corner_pts]
        vals = np.array([e[0] for e in evs])
        grads = np.vstack([e[1] for e in evs])
        curmax = max(abs(v) for v, _, _ in cache.values())
        scale = 1.0 + curmax
        center = (lo + hi) / 2.0
        tangent_min = min(v + float(g @ (center - c)) for (v, g, _), c in zip(evs, corner_pts))
        secant = float(vals.mean())  # center is the equal-weight corner mix
        gap = tangent_min - secant
        if gap <= kappa * curmax + 1e-12 * scale:
            continue
        if depth >= depth_cap or len(cache) >= eval_cap:
            saturated += 1
            continue

        if k == 1:
            done = _refine_1d(ev, evs, corner_pts, lo, hi, depth, queue, scale)
            if done:
                continue
        else:
            cval, _, _ = ev(center)
            if cval < secant - 1e-7 * scale:
                raise ConcavityError(f"midpoint value {cval} below corner mix {secant}")
            if cval > tangent_min + 1e-7 * scale:
                raise ConcavityError(f"midpoint value {cval} above tangent bound {tangent_min}")
            if k == 2 and _crease_resolved(ev, evs, corner_pts, lo, hi, scale):
                continue
            spread = (grads.max(axis=0) - grads.min(axis=0)) * (hi - lo)
            axis = int(np.argmax(spread))
            cut = _axis_cut(evs, corner_pts, axis, lo, hi, center)
            left_hi, right_lo = hi.copy(), lo.copy()
            left_hi[axis] = cut
            right_lo[axis] = cut
            queue.append((lo, left_hi, depth + 1))
            queue.append((right_lo, hi, depth + 1))

    pts = [(b, v) for v, _, b in cache.values()]
    tris = [(b, v, g) for v, g, b in cache.values()]
    lower = fit_lower(pts, box)
    upper = fit_upper(tris, box)
    sample_B = np.vstack([b for _, _, b in cache.values()])
    gaps = upper.values(sample_B) - lower.values(sample_B)
    stats = {
        "evals": len(cache),
        "pieces_lower": lower.n_pieces,
        "pieces_upper": upper.n_pieces,
        "max_value": float(max((v for v, _, _ in cache.values()), default=0.0)),
        "max_gap_at_samples": float(gaps.max()),
        "saturated_cells": saturated,
        "kappa": kappa,
    }
    samples = [(tuple(b), v, tuple(g)) for v, g, b in cache.values()]
    return SandwichFit(lower, upper, samples, stats)


def _refine_1d(ev, evs, corner_pts, lo, hi, depth, queue, scale):
    """Split a 1-D cell at the endpoint-tangent intersection when possible.

    Returns True when the cell is resolved exactly (both tangents meet on the
    evaluator, i.e. the cell holds a single kink), False when children were
    queued.
    """
    (vl, gl, _), (vh, gh, _) = evs
    bl, bh = corner_pts[0][0], corner_pts[1][0]
    sl, sh = float(gl[0]), float(gh[0])
    width = bh - bl
    if abs(sl - sh) <= 1e-12 * scale:
        return True  # parallel tangents on a concave function: linear cell
    bstar = (vh - sh * bh - (vl - sl * bl)) / (sl - sh)
    if not (bl + 1e-9 * width < bstar < bh - 1e-9 * width):
        bstar = (bl + bh) / 2.0
        exactable = False
    else:
        exactable = True
    vstar, _, _ = ev(np.array([bstar]))
    line = vl + sl * (bstar - bl)
    if vstar > line + 1e-7 * scale:
        raise ConcavityError(f"value {vstar} above tangent bound {line} at {bstar}")
    if exactable and abs(vstar - line) <= 1e-8 * scale:
        return True  # tangents meet on the function: cell is exactly two pieces
    mid = np.array([bstar])
    queue.append((lo, mid, depth + 1))
    queue.append((mid.copy(), hi, depth + 1))
    return False


def _crease_resolved(ev, evs, corner_pts, lo, hi, scale):
    """Exactness test for a 2-D cell whose corner tangents form two planes.

    If the evaluator matches both planes where their intersection line crosses
    the cell boundary, concavity pins it to min(plane1, plane2) on the whole
    cell (it meets each plane at that side's vertices and tangency bounds it
    above), so the cell needs no further splitting.
    """
    planes = {}
    for (v, g, _), c in zip(evs, corner_pts):
        key = (round(float(g[0]), 9), round(float(g[1]), 9),
               round(float(v - g @ c), 9))
        planes.setdefault(key, (np.array(g, dtype=float), float(v - g @ c)))
    if len(planes) != 2:
        return len(planes) == 1
    (a1, c1), (a2, c2) = planes.values()
    d = a1 - a2
    rhs = c2 - c1
    crossings = []
    for axis in (0, 1):
        other = 1 - axis
        if abs(d[other]) < 1e-14:
            continue
        for edge in (lo[axis], hi[axis]):
            t = (rhs - d[axis] * edge) / d[other]
            if lo[other] - 1e-12 <= t <= hi[other] + 1e-12:
                p = np.empty(2)
                p[axis] = edge
                p[other] = min(max(t, lo[other]), hi[other])
                crossings.append(p)
    if len(crossings) < 2:
        return False
    uniq = []
    for p in crossings:
        if all(np.max(np.abs(p - q)) > 1e-10 for q in uniq):
            uniq.append(p)
    if len(uniq) < 2:
        return False
    for p in uniq[:2] + [(uniq[0] + uniq[1]) / 2.0]:
        val, _, _ = ev(p)
        want = min(float(a1 @ p + c1), float(a2 @ p + c2))
        if abs(val - want) > 1e-8 * scale:
            return False
    return True


def _axis_cut(evs, corner_pts, axis, lo, hi, center):
    """Cut coordinate along one axis: endpoint-tangent intersection restricted
    to the center line, clamped into the middle half of the cell."""
    slopes = [float(g[axis]) for _, g, _ in evs]
    ilo = int(np.argmin([c[axis] for c in corner_pts]))
    ihi = int(np.argmax([c[axis] for c in corner_pts]))
    vlo, glo, _ = evs[ilo]
    vhi, ghi, _ = evs[ihi]
    plo, phi = corner_pts[ilo], corner_pts[ihi]
    # tangent values restricted to the line through center along `axis`
    def at(t, v, g, p):
        q = center.copy()
        q[axis] = t
        return v + float(g @ (q - p))
    sl, sh = float(glo[axis]), float(ghi[axis])
    if abs(sl - sh) > 1e-12:
        # solve at(t, lo-tangent) == at(t, hi-tangent)
        c_l = at(0.0, vlo, glo, plo)
        c_h = at(0.0, vhi, ghi, phi)
        t = (c_h - c_l) / (sl - sh)
    else:
        t = center[axis]
    w = hi[axis] - lo[axis]
    return float(min(max(t, lo[axis] + 0.25 * w), hi[axis] - 0.25 * w))
