"""Equilibrium enumeration over region signatures, indices and the parity law."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateEquilibriumError, UnsupportedConfigurationError
from .model import (
    Channel,
    RegionSignature,
    SystemSpec,
    all_signatures,
    closed_loop_field,
    eigenvalues,
    region_jacobian,
    region_offset,
)

GP_TOL = 1e-9
MERGE_DIST = 1e-8
STABILITY_TOL = 1e-9
# relative det threshold below which a region matrix is treated as singular
SINGULAR_RTOL = 1e-12


class Stability(enum.Enum):
    ASYMPTOTICALLY_STABLE = "AsymptoticallyStable"
    REPELLING = "Repelling"
    SADDLE = "Saddle"
    MARGINAL = "Marginal"


@dataclass
class Equilibrium:
    x: np.ndarray
    signature: RegionSignature
    general_position: bool
    margin: float
    index: int | None
    jac_eigs: np.ndarray
    stability: Stability

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "signature": str(self.signature),
            "index": self.index,
            "stability": self.stability.value,
            "margin": self.margin,
            "general_position": self.general_position,
        }


@dataclass
class EnumerationResult:
    """Equilibria plus signatures whose region matrix is singular."""

    equilibria: list[Equilibrium]
    degenerate_regions: list[RegionSignature]

    def __iter__(self):
        return iter(self.equilibria)

    def __len__(self):
        return len(self.equilibria)

    def __getitem__(self, i):
        return self.equilibria[i]


def is_singular(F) -> bool:
    s = np.linalg.svd(F, compute_uv=False)
    return s[-1] <= SINGULAR_RTOL * max(s[0], 1.0)


def _matches(spec, kx, sig, tol):
    M = spec.M
    for v, c in zip(kx, sig.channels):
        if c is Channel.LINEAR and abs(v) > M + tol:
            return False
        if c is Channel.POS_SAT and v < M - tol:
            return False
        if c is Channel.NEG_SAT and v > -M + tol:
            return False
    return True


def classify_stability(eigs, tol: float = STABILITY_TOL) -> Stability:
    re = np.real(np.asarray(eigs))
    if np.all(re < -tol):
        return Stability.ASYMPTOTICALLY_STABLE
    if np.all(re > tol):
        return Stability.REPELLING
    if np.all(np.abs(re) > tol):
        return Stability.SADDLE
    return Stability.MARGINAL


def enumerate_equilibria(spec: SystemSpec, gp_tol: float = GP_TOL) -> EnumerationResult:
    """All zeros of ``A x + B sat(K x)``.

    For every signature the affine region equation is solved and kept only if
    the root really lies in that region (up to ``gp_tol``). Roots within
    ``gp_tol`` of a switching plane are kept but marked non-generic.
    """
    found: list[Equilibrium] = []
    degenerate = []
    for sig in all_signatures(spec.m):
        F = region_jacobian(spec, sig)
        if is_singular(F):
            degenerate.append(sig)
            continue
        x = np.linalg.solve(F, -region_offset(spec, sig))
        kx = spec.K @ x
        if not _matches(spec, kx, sig, gp_tol):
            continue
        if any(np.linalg.norm(e.x - x) <= MERGE_DIST for e in found):
            continue
        margin = float(np.min(np.abs(spec.M - np.abs(kx))))
        gp = margin > gp_tol
        eigs = eigenvalues(F)
        index = int(np.sign(np.linalg.det(F))) if gp else None
        found.append(Equilibrium(x, sig, gp, margin, index, eigs, classify_stability(eigs)))
    return EnumerationResult(found, degenerate)


def equilibrium_index(spec: SystemSpec, eq: Equilibrium) -> int:
    """Sign of the Jacobian determinant at a non-degenerate equilibrium."""
    if not eq.general_position:
        raise DegenerateEquilibriumError(f"equilibrium {eq.x} lies on a switching plane")
    F = region_jacobian(spec, eq.signature)
    if is_singular(F):
        raise DegenerateEquilibriumError(f"singular Jacobian at {eq.x}")
    return int(np.sign(np.linalg.det(F)))


def residual_ok(spec: SystemSpec, x) -> bool:
    return np.linalg.norm(closed_loop_field(spec, x)) <= 1e-9 * (1 + np.linalg.norm(x))


@dataclass
class ParityReport:
    count: int
    expected_count: int
    index_sum: int
    generic: bool
    passed: bool
    min_margin: float

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "expected_count": self.expected_count,
            "index_sum": self.index_sum,
            "generic": self.generic,
            "pass": self.passed,
            "min_margin": self.min_margin,
        }


def parity_check(spec: SystemSpec, gp_tol: float = GP_TOL) -> ParityReport:
    """Single-input equilibrium count: one for even ``n``, three for odd ``n``."""
    if spec.m != 1:
        raise UnsupportedConfigurationError("the parity law is stated for single-input systems")
    eqs = enumerate_equilibria(spec, gp_tol)
    generic = bool(eqs.equilibria) and all(e.general_position for e in eqs) and not eqs.degenerate_regions
    expected = 1 if spec.n % 2 == 0 else 3
    index_sum = sum(e.index for e in eqs if e.index is not None)
    passed = (not generic) or (len(eqs) == expected and index_sum == 1)
    return ParityReport(
        count=len(eqs),
        expected_count=expected,
        index_sum=index_sum,
        generic=generic,
        passed=passed,
        min_margin=saturated_candidate_margin(spec),
    )


def saturated_candidate_margin(spec: SystemSpec) -> float:
    """Smallest ``|M - |k_i x||`` over origin and the saturated candidate roots.

    Unlike equilibrium margins this includes rejected candidates, so it
    measures how close the system is to a fold of the equilibrium set.
    """
    margins = [spec.M]
    for sig in all_signatures(spec.m):
        if sig.is_linear:
            continue
        F = region_jacobian(spec, sig)
        if is_singular(F):
            return 0.0
        x = np.linalg.solve(F, -region_offset(spec, sig))
        margins.append(float(np.min(np.abs(spec.M - np.abs(spec.K @ x)))))
    return min(margins)


def sign_test_value(spec: SystemSpec) -> float:
    """``-K A^{-1} B`` for single input; saturated equilibria exist iff it is >= 1."""
    if spec.m != 1:
        raise UnsupportedConfigurationError("sign test needs a single input")
    return float(-(spec.K @ np.linalg.solve(spec.A, spec.B))[0, 0])
