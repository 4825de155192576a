"""Attraction-basin geometry probes built on certified fate verdicts."""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .degree import safe_radius
from .dynamics import FateClassifier, Verdict
from .equilibria import enumerate_equilibria
from .errors import GeometryError, InvalidParameterError
from .model import SystemSpec, counterexample_system

# reference points of the counterexample; CX_P3 is the midpoint of the other two
CX_P1 = np.array([-1.080860, -0.487008, -0.804244])
CX_P2 = np.array([0.514148, -0.183494, 0.797384])
CX_P3 = np.array([-0.283356, -0.335251, -0.003430])

GRID_POINTS = 8
MAX_BISECTIONS = 60
MAX_UNDECIDED = 8


class Membership(enum.Enum):
    IN = "In"
    OUT = "Out"
    UNDECIDED = "Undecided"


_FROM_VERDICT = {
    Verdict.CONVERGED: Membership.IN,
    Verdict.NOT_CONVERGED: Membership.OUT,
    Verdict.UNDECIDED: Membership.UNDECIDED,
}


def _classifier(spec, classifier):
    if classifier is None:
        return FateClassifier(spec)
    if classifier.spec is not spec and not classifier.spec.allclose(spec, atol=0):
        raise InvalidParameterError("classifier was built for a different system")
    return classifier


def in_basin(spec: SystemSpec, x, classifier: FateClassifier | None = None) -> Membership:
    return _FROM_VERDICT[_classifier(spec, classifier)(x).verdict]


def is_counterexample_system(spec: SystemSpec) -> bool:
    return spec.n == 3 and spec.m == 1 and spec.allclose(counterexample_system(1.0))


@dataclass
class RayScanResult:
    direction: np.ndarray
    r_lo: float
    r_hi: float
    iterations: int
    undecided_hits: int
    flag: str = "ok"

    @property
    def width(self) -> float:
        return self.r_hi - self.r_lo

    @property
    def radius(self) -> float:
        return 0.5 * (self.r_lo + self.r_hi)

    def to_dict(self) -> dict:
        return {
            "direction": self.direction.tolist(),
            "r_lo": self.r_lo,
            "r_hi": self.r_hi,
            "iterations": self.iterations,
            "undecided_hits": self.undecided_hits,
            "flag": self.flag,
        }


def boundary_ray_scan(spec: SystemSpec, direction, tol: float = 1e-3,
                      classifier: FateClassifier | None = None) -> RayScanResult:
    """Bracket the innermost basin-boundary crossing along a ray from the origin.

    The inner seed sits inside the Lyapunov ellipsoid, the outer seed at
    ``2 max(safe_radius, R_div)``. A coarse outward grid locates the first
    certified exit before bisection, so rays crossing the boundary several
    times report the innermost crossing (up to grid resolution).
    """
    clf = _classifier(spec, classifier)
    v = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(v)
    if v.shape != (spec.n,) or not norm > 0:
        raise InvalidParameterError("direction must be a nonzero vector of length n")
    v = v / norm

    def fate(r):
        return _FROM_VERDICT[clf(r * v).verdict]

    lo = 0.999 * np.sqrt(clf.inner.c / (v @ clf.inner.P @ v))
    hi = 2 * max(safe_radius(spec), clf.outer.R_div)
    f_lo, f_hi = fate(lo), fate(hi)
    if f_lo is not Membership.IN or f_hi is not Membership.OUT:
        raise GeometryError(f"seed fates along {v}: r={lo:.6g} -> {f_lo.value}, r={hi:.6g} -> {f_hi.value}")

    undecided = 0
    iterations = 0
    seen_non_in = False
    for r in np.linspace(lo, hi, GRID_POINTS + 2)[1:-1]:
        iterations += 1
        f = fate(r)
        if f is Membership.OUT:
            hi = r
            break
        if f is Membership.UNDECIDED:
            undecided += 1
            seen_non_in = True
        elif not seen_non_in:
            lo = r

    while hi - lo > tol and iterations < MAX_BISECTIONS and undecided <= MAX_UNDECIDED:
        iterations += 1
        mid = 0.5 * (lo + hi)
        f = fate(mid)
        if f is Membership.IN:
            lo = mid
        elif f is Membership.OUT:
            hi = mid
        else:
            # undecided band: tighten from both sides without crossing it
            undecided += 1
            moved = False
            left = 0.5 * (lo + mid)
            fl = fate(left)
            if fl is Membership.IN:
                lo, moved = left, True
            elif fl is Membership.OUT:
                hi, moved = left, True
                continue
            right = 0.5 * (mid + hi)
            fr = fate(right)
            if fr is Membership.OUT:
                hi, moved = right, True
            elif fr is Membership.IN:
                lo, moved = right, True
            if not moved:
                break
    flag = "ok" if hi - lo <= tol else "wide"
    return RayScanResult(v, float(lo), float(hi), iterations, undecided, flag)


@dataclass
class ConvexityReport:
    trials: int
    violations: list = field(default_factory=list)
    contains_reference_pair: bool = False
    skipped: int = 0

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "skipped": self.skipped,
            "contains_reference_pair": self.contains_reference_pair,
            "violations": [
                {
                    "p": p.tolist(),
                    "q": q.tolist(),
                    "midpoint": mid.tolist(),
                    "fates": [f.value for f in fates],
                }
                for p, q, mid, fates in self.violations
            ],
        }


def _box_half_width(spec):
    eqs = enumerate_equilibria(spec)
    far = max((np.linalg.norm(e.x) for e in eqs), default=0.0)
    return far if far > 0 else safe_radius(spec)


def convexity_probe(spec: SystemSpec, pairs=None, count: int = 0, seed: int = 0,
                    classifier: FateClassifier | None = None) -> ConvexityReport:
    """Look for pairs of basin points whose midpoint leaves the basin.

    ``pairs`` is an explicit list of ``(p, q)``; ``count`` extra pairs are
    drawn uniformly from a box reaching the farthest equilibrium. For the
    three-dimensional counterexample system the reference pair is always
    tested as well.
    """
    clf = _classifier(spec, classifier)
    todo = [(np.asarray(p, float), np.asarray(q, float)) for p, q in (pairs or [])]
    if count:
        L = _box_half_width(spec)
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-L, L, (count, 2, spec.n))
        todo += [(a, b) for a, b in pts]
    cx = is_counterexample_system(spec)
    if cx:
        todo.append((CX_P1.copy(), CX_P2.copy()))

    report = ConvexityReport(trials=0)
    for p, q in todo:
        fp, fq = in_basin(spec, p, clf), in_basin(spec, q, clf)
        if fp is not Membership.IN or fq is not Membership.IN:
            report.skipped += 1
            continue
        report.trials += 1
        mid = 0.5 * (p + q)
        fm = in_basin(spec, mid, clf)
        if fm is Membership.OUT:
            report.violations.append((p, q, mid, (fp, fq, fm)))
            if cx and np.array_equal(p, CX_P1) and np.array_equal(q, CX_P2):
                report.contains_reference_pair = True
    return report


def ray_directions(n: int, num_rays: int, seed: int) -> np.ndarray:
    """Quasi-uniform unit directions; for even counts row ``i + N/2`` is ``-row i``."""
    if n == 2:
        offset = np.random.default_rng(seed).uniform(0, 2 * np.pi / num_rays)
        t = offset + 2 * np.pi * np.arange(num_rays) / num_rays
        return np.column_stack([np.cos(t), np.sin(t)])
    if n != 3:
        raise InvalidParameterError("ray directions are generated for n in {2, 3}")
    half = num_rays // 2
    if num_rays % 2 == 0:
        i = np.arange(half) + 0.5
        z = 1 - i / half  # upper hemisphere
    else:
        i = np.arange(num_rays) + 0.5
        z = 1 - 2 * i / num_rays
    phi = np.pi * (1 + 5**0.5) * i
    rho = np.sqrt(1 - z**2)
    V = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    if num_rays % 2 == 0:
        V = np.vstack([V, -V])
    return Rotation.random(random_state=seed).apply(V)


@dataclass
class PointCloud:
    directions: np.ndarray
    scans: list  # RayScanResult or None when the scan raised a geometry error
    tol: float
    seed: int

    @property
    def flags(self):
        return [s.flag if s is not None else "geometry_error" for s in self.scans]

    def points(self) -> np.ndarray:
        """Bracket midpoints along each ray (NaN rows for failed scans)."""
        out = np.full_like(self.directions, np.nan)
        for i, s in enumerate(self.scans):
            if s is not None:
                out[i] = s.radius * s.direction
        return out

    def to_csv(self) -> str:
        n = self.directions.shape[1]
        buf = io.StringIO()
        buf.write(",".join(["dir_index"] + [f"vx{i + 1}" for i in range(n)] + ["r_lo", "r_hi", "flag"]) + "\n")
        for i, (v, s, flag) in enumerate(zip(self.directions, self.scans, self.flags)):
            lo, hi = (s.r_lo, s.r_hi) if s is not None else (float("nan"), float("nan"))
            buf.write(",".join([str(i)] + [f"{c:.17g}" for c in v] + [f"{lo:.17g}", f"{hi:.17g}", flag]) + "\n")
        return buf.getvalue()


def basin_point_cloud(spec: SystemSpec, num_rays: int, seed: int = 0, tol: float = 1e-3,
                      classifier: FateClassifier | None = None) -> PointCloud:
    clf = _classifier(spec, classifier)
    V = ray_directions(spec.n, num_rays, seed)
    scans = []
    for v in V:
        try:
            scans.append(boundary_ray_scan(spec, v, tol, clf))
        except GeometryError:
            scans.append(None)
    return PointCloud(V, scans, tol, seed)


@dataclass
class SymmetryReport:
    pairs: int
    matched: int
    mismatched: list
    undecided: int

    @property
    def passed(self) -> bool:
        return not self.mismatched

    def to_dict(self) -> dict:
        return {
            "pairs": self.pairs,
            "matched": self.matched,
            "mismatched": [x.tolist() for x in self.mismatched],
            "undecided": self.undecided,
            "pass": self.passed,
        }


def symmetry_check(spec: SystemSpec, num_points: int, seed: int = 0,
                   classifier: FateClassifier | None = None) -> SymmetryReport:
    """Compare fates of ``x`` and ``-x`` for seeded points in a box."""
    clf = _classifier(spec, classifier)
    L = 2 * _box_half_width(spec)
    X = np.random.default_rng(seed).uniform(-L, L, (num_points, spec.n))
    matched, undecided, bad = 0, 0, []
    for x in X:
        a, b = in_basin(spec, x, clf), in_basin(spec, -x, clf)
        if Membership.UNDECIDED in (a, b):
            undecided += 1
        elif a is b:
            matched += 1
        else:
            bad.append(x)
    return SymmetryReport(num_points, matched, bad, undecided)


def sample_ellipsoid(P, c: float, count: int, seed: int = 0, surface: bool = True) -> np.ndarray:
    """Seeded samples on (or inside) the ellipsoid ``x^T P x = c``."""
    rng = np.random.default_rng(seed)
    n = P.shape[0]
    g = rng.standard_normal((count, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    if not surface:
        g *= rng.uniform(0, 1, (count, 1)) ** (1 / n)
    L = np.linalg.cholesky(P)  # P = L L^T, so x = sqrt(c) L^{-T} u has x^T P x = c |u|^2
    return np.sqrt(c) * np.linalg.solve(L.T, g.T).T
