"""Brouwer degree of the closed-loop field over balls.

Two independent routes are provided:

* :func:`winding_number_2d` tracks the angle of ``f/|f|`` around a circle
  (planar systems only, works for any vectorised field).
* :func:`piecewise_affine_degree` counts signed preimages of a small regular
  value region by region, using that the field is affine on each region.

:func:`index_sum_check` compares the sum of equilibrium indices inside a
ball with the degree over that ball.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .equilibria import enumerate_equilibria, is_singular
from .errors import (
    DegenerateEquilibriumError,
    DegenerateValueError,
    InvalidParameterError,
    ResolutionError,
    ZeroOnSphereError,
)
from .model import (
    Channel,
    SystemSpec,
    all_signatures,
    region_jacobian,
    region_offset,
    validate_spec,
)

ZERO_NORM = 1e-12
BOUNDARY_TOL = 1e-9
REGULAR_VALUE_SCALE = 1e-6
MAX_RETRIES = 16
MAX_WINDING_SAMPLES = 2**20


class DegreeMethod(enum.Enum):
    WINDING_2D = "Winding2D"
    PIECEWISE_AFFINE_PREIMAGE = "PiecewiseAffinePreimage"


@dataclass
class DegreeReport:
    value: int
    method: DegreeMethod
    radius: float
    regular_value: np.ndarray
    solutions: list = field(default_factory=list)  # (x, sign, signature) triples
    margin_ok: bool = True
    min_sphere_norm: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "method": self.method.value,
            "radius": self.radius,
            "regular_value": np.asarray(self.regular_value).tolist(),
            "solutions": [
                {"x": x.tolist(), "sign": s, "signature": sig} for x, s, sig in self.solutions
            ],
            "margin_ok": self.margin_ok,
            "min_sphere_norm": self.min_sphere_norm,
        }


def batch_field(spec: SystemSpec):
    """Vectorised closed-loop field acting on rows of an ``(N, n)`` array."""
    A, B, K, M = spec.A, spec.B, spec.K, spec.M

    def f(X):
        return X @ A.T + np.clip(X @ K.T, -M, M) @ B.T

    return f


def safe_radius(spec: SystemSpec) -> float:
    """Radius beyond which ``|A x|`` dominates the bounded saturated term."""
    s = np.linalg.svd(spec.A, compute_uv=False)
    if s[-1] <= 1e-14 * max(s[0], 1.0):
        raise InvalidParameterError("safe radius needs a nonsingular A")
    return float(np.linalg.norm(spec.B, 2) * spec.M * np.sqrt(spec.m) / s[-1])


def sphere_points(n: int, count: int | None = None, seed: int = 0) -> np.ndarray:
    """Deterministic, roughly uniform points on the unit sphere in R^n."""
    if count is None:
        count = 10_000 if n <= 3 else 100_000
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        t = 2 * np.pi * np.arange(count) / count
        return np.column_stack([np.cos(t), np.sin(t)])
    if n == 3:
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        phi = np.pi * (1 + 5**0.5) * i
        rho = np.sqrt(1 - z**2)
        return np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    # Sobol balance needs a power-of-two sample count
    u = qmc.Sobol(d=n, scramble=True, seed=seed).random_base2(int(np.ceil(np.log2(count))))
    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def min_norm_on_sphere(spec: SystemSpec, r: float, center=None) -> float:
    X = r * sphere_points(spec.n)
    if center is not None:
        X = X + np.asarray(center, dtype=float)
    return float(np.linalg.norm(batch_field(spec)(X), axis=1).min())


def _as_planar_field(fld):
    if isinstance(fld, SystemSpec):
        if fld.n != 2:
            raise InvalidParameterError(f"winding number needs n = 2, got n = {fld.n}")
        return batch_field(fld)
    if callable(fld):
        return fld
    A = np.asarray(fld, dtype=float)
    if A.shape != (2, 2):
        raise InvalidParameterError("raw field matrix must be 2x2")
    return lambda X: X @ A.T


def winding_number_2d(fld, r: float, min_samples: int = 4096, center=(0.0, 0.0)) -> int:
    """Winding number of ``f/|f|`` along the circle of radius ``r``.

    ``fld`` is a planar :class:`SystemSpec`, a 2x2 matrix (linear field) or a
    callable mapping ``(N, 2)`` points to ``(N, 2)`` vectors. Intervals are
    bisected until every angle increment is below pi/2.
    """
    f = _as_planar_field(fld)
    c = np.asarray(center, dtype=float)
    s = np.linspace(0.0, 1.0, int(min_samples) + 1)

    def angles(params):
        t = 2 * np.pi * params
        v = f(c + r * np.column_stack([np.cos(t), np.sin(t)]))
        norms = np.hypot(v[:, 0], v[:, 1])
        if norms.min() < ZERO_NORM:
            raise ZeroOnSphereError(f"field vanishes on circle of radius {r}")
        return np.arctan2(v[:, 1], v[:, 0])

    th = angles(s)
    while True:
        d = np.angle(np.exp(1j * np.diff(th)))
        bad = np.flatnonzero(np.abs(d) >= np.pi / 2)
        if bad.size == 0:
            break
        if s.size + bad.size > MAX_WINDING_SAMPLES:
            raise ResolutionError("winding refinement exceeded the sample cap")
        mids = 0.5 * (s[bad] + s[bad + 1])
        s = np.insert(s, bad + 1, mids)
        th = np.insert(th, bad + 1, angles(mids))
    turns = d.sum() / (2 * np.pi)
    w = round(turns)
    if abs(turns - w) >= 0.01:
        raise ResolutionError(f"winding sum {turns} is not close to an integer")
    return int(w)


def _inside_region(spec, kx, sig):
    """Signed clearance of ``kx`` to the walls of region ``sig`` (positive = inside)."""
    M = spec.M
    gaps = []
    for v, ch in zip(kx, sig.channels):
        if ch is Channel.LINEAR:
            gaps.append(M - abs(v))
        elif ch is Channel.POS_SAT:
            gaps.append(v - M)
        else:
            gaps.append(-M - v)
    return min(gaps)


def _preimages(spec, c, r):
    """Signed preimages of ``c`` in ``B(r)``; ``None`` if ``c`` is not clean."""
    sols = []
    for sig in all_signatures(spec.m):
        F = region_jacobian(spec, sig)
        rhs = c - region_offset(spec, sig)
        if is_singular(F):
            x, *_ = np.linalg.lstsq(F, rhs, rcond=None)
            if np.linalg.norm(F @ x - rhs) <= 1e-9 * (1 + np.linalg.norm(rhs)):
                return None  # continuum of preimages
            continue
        x = np.linalg.solve(F, rhs)
        clearance = _inside_region(spec, spec.K @ x, sig)
        radial = r - np.linalg.norm(x)
        if abs(clearance) <= BOUNDARY_TOL or abs(radial) <= BOUNDARY_TOL:
            return None
        if clearance > 0 and radial > 0:
            sols.append((x, int(np.sign(np.linalg.det(F))), str(sig)))
    return sols


def piecewise_affine_degree(spec: SystemSpec, r: float, c=None, seed: int = 0) -> DegreeReport:
    """Degree over ``B(r)`` as the signed count of preimages of a regular value ``c``.

    With ``c=None`` a value of norm ``1e-6 * min |f|`` on the sphere is drawn in
    a seeded random direction, and redrawn if a preimage falls within 1e-9 of
    a switching plane or of the sphere.
    """
    if not r > 0:
        raise InvalidParameterError(f"radius must be positive, got {r}")
    min_norm = min_norm_on_sphere(spec, r)
    if min_norm < ZERO_NORM:
        raise ZeroOnSphereError(f"field vanishes on sphere of radius {r}")

    if c is not None:
        c = np.asarray(c, dtype=float)
        if c.shape != (spec.n,):
            raise InvalidParameterError(f"regular value must have shape ({spec.n},)")
        sols = _preimages(spec, c, r)
        if sols is None:
            raise DegenerateValueError("given regular value has a preimage on a region wall or the sphere")
        return _report(sols, r, c, min_norm, margin_ok=np.linalg.norm(c) < min_norm)

    rng = np.random.default_rng(seed)
    for _ in range(MAX_RETRIES + 1):
        d = rng.standard_normal(spec.n)
        c = REGULAR_VALUE_SCALE * min_norm * d / np.linalg.norm(d)
        sols = _preimages(spec, c, r)
        if sols is not None:
            return _report(sols, r, c, min_norm, margin_ok=True)
    raise DegenerateValueError(f"no clean regular value after {MAX_RETRIES} retries")


def _report(sols, r, c, min_norm, margin_ok):
    return DegreeReport(
        value=sum(s for _, s, _ in sols),
        method=DegreeMethod.PIECEWISE_AFFINE_PREIMAGE,
        radius=float(r),
        regular_value=c,
        solutions=sols,
        margin_ok=bool(margin_ok),
        min_sphere_norm=min_norm,
    )


@dataclass
class IndexSumReport:
    lhs: int
    rhs: int
    passed: bool
    radius: float
    expected_total: int | None
    degree: DegreeReport

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "pass": self.passed,
            "radius": self.radius,
            "expected_total": self.expected_total,
            "degree": self.degree.to_dict(),
        }


def auto_radius(spec: SystemSpec, equilibria=None) -> float:
    if equilibria is None:
        equilibria = enumerate_equilibria(spec)
    far = max((np.linalg.norm(e.x) for e in equilibria), default=0.0)
    return 1.1 * max(safe_radius(spec), far + 1.0)


def index_sum_check(spec: SystemSpec, r: float | None = None, seed: int = 0) -> IndexSumReport:
    """Sum of equilibrium indices in ``B(r)`` versus the degree over ``B(r)``."""
    eqs = enumerate_equilibria(spec)
    if r is None:
        r = auto_radius(spec, eqs)
    lhs = 0
    for e in eqs:
        if np.linalg.norm(e.x) < r:
            if e.index is None:
                raise DegenerateEquilibriumError(f"equilibrium {e.x} has no defined index")
            lhs += e.index
    deg = piecewise_affine_degree(spec, r, seed=seed)
    expected = None
    v = validate_spec(spec)
    if v.anti_stable and r > safe_radius(spec):
        expected = 1
    passed = lhs == deg.value and (expected is None or deg.value == expected)
    return IndexSumReport(lhs, deg.value, passed, float(r), expected, deg)
