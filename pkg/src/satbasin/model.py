"""System data model for linear plants under saturated state feedback.

The closed loop is ``x' = A x + B sat(K x)`` where ``sat`` clamps every input
channel to ``[-M, M]``. Each channel is either clamped low, linear or clamped
high, so state space splits into ``3**m`` polyhedral regions on which the
field is affine.
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import GeneratorError, InvalidParameterError, SingularControllabilityError

RANK_RTOL = 1e-9
POLE_MATCH_TOL = 1e-6


def _frozen(a, ndim):
    arr = np.array(a, dtype=float, ndmin=ndim)
    if arr.ndim != ndim:
        raise InvalidParameterError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Plant ``(A, B)``, feedback gain ``K`` (``u = K x``) and saturation bound ``M``."""

    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    M: float = 1.0

    def __post_init__(self):
        A = _frozen(self.A, 2)
        B = np.array(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        B = _frozen(B, 2)
        K = _frozen(self.K, 2)
        n = A.shape[0]
        if A.shape != (n, n) or n == 0:
            raise InvalidParameterError(f"A must be square and non-empty, got {A.shape}")
        m = B.shape[1]
        if B.shape[0] != n or m == 0:
            raise InvalidParameterError(f"B must be {n}x m with m >= 1, got {B.shape}")
        if K.shape != (m, n):
            raise InvalidParameterError(f"K must be {m}x{n}, got {K.shape}")
        M = float(self.M)
        if not np.isfinite(M) or M <= 0:
            raise InvalidParameterError(f"saturation bound M must be positive, got {self.M}")
        for name, arr in (("A", A), ("B", B), ("K", K)):
            if not np.all(np.isfinite(arr)):
                raise InvalidParameterError(f"{name} has non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "M", M)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def replace(self, **changes) -> "SystemSpec":
        kw = dict(A=self.A, B=self.B, K=self.K, M=self.M)
        kw.update(changes)
        return SystemSpec(**kw)

    def allclose(self, other: "SystemSpec", atol: float = 1e-12) -> bool:
        return (
            self.A.shape == other.A.shape
            and self.B.shape == other.B.shape
            and np.allclose(self.A, other.A, rtol=0, atol=atol)
            and np.allclose(self.B, other.B, rtol=0, atol=atol)
            and np.allclose(self.K, other.K, rtol=0, atol=atol)
            and abs(self.M - other.M) <= atol
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "A": self.A.tolist(),
            "B": self.B.tolist(),
            "K": self.K.tolist(),
            "M": self.M,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SystemSpec":
        spec = cls(A=d["A"], B=d["B"], K=d["K"], M=d.get("M", 1.0))
        for key, actual in (("n", spec.n), ("m", spec.m)):
            if key in d and int(d[key]) != actual:
                raise InvalidParameterError(f"declared {key}={d[key]} but matrices give {actual}")
        return spec


def load_system(path) -> SystemSpec:
    with open(path) as fh:
        return SystemSpec.from_dict(json.load(fh))


def save_system(spec: SystemSpec, path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


def counterexample_system(M: float = 1.0) -> SystemSpec:
    """The three-dimensional counterexample system with a non-convex basin."""
    data = json.loads((Path(__file__).parent / "data" / "counterexample.json").read_text())
    data["M"] = M
    return SystemSpec.from_dict(data)


class Channel(enum.Enum):
    # declaration order is the canonical enumeration order
    LINEAR = "L"
    POS_SAT = "P"
    NEG_SAT = "N"


@dataclass(frozen=True)
class RegionSignature:
    channels: tuple[Channel, ...]
    margins: tuple[float, ...] = field(default=(), compare=False)

    def __str__(self):
        return "".join(c.value for c in self.channels)

    def __len__(self):
        return len(self.channels)

    @classmethod
    def parse(cls, text: str) -> "RegionSignature":
        try:
            return cls(tuple(Channel(ch) for ch in text))
        except ValueError as exc:
            raise InvalidParameterError(f"bad signature {text!r}") from exc

    @property
    def is_linear(self) -> bool:
        return all(c is Channel.LINEAR for c in self.channels)


def all_signatures(m: int) -> list[RegionSignature]:
    """Every one of the ``3**m`` signatures, in canonical order."""
    return [RegionSignature(tuple(cs)) for cs in itertools.product(list(Channel), repeat=m)]


def saturate(s, M: float = 1.0):
    """``sign(s) * min(M, |s|)``, elementwise."""
    if not M > 0:
        raise InvalidParameterError(f"saturation bound must be positive, got {M}")
    out = np.clip(s, -M, M)
    return float(out) if np.ndim(out) == 0 else out


def _as_state(spec: SystemSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n,):
        raise InvalidParameterError(f"state must have shape ({spec.n},), got {x.shape}")
    return x


def closed_loop_field(spec: SystemSpec, x) -> np.ndarray:
    x = _as_state(spec, x)
    return spec.A @ x + spec.B @ np.clip(spec.K @ x, -spec.M, spec.M)


def region_signature(spec: SystemSpec, x) -> RegionSignature:
    """Channel states at ``x``; points on a switching plane count as saturated.

    ``margins[i] = M - |k_i x|`` is the signed distance (in input units) to the
    nearer switching plane of channel ``i``.
    """
    kx = spec.K @ _as_state(spec, x)
    chans = []
    for v in kx:
        if v >= spec.M:
            chans.append(Channel.POS_SAT)
        elif v <= -spec.M:
            chans.append(Channel.NEG_SAT)
        else:
            chans.append(Channel.LINEAR)
    return RegionSignature(tuple(chans), tuple(float(spec.M - abs(v)) for v in kx))


def region_jacobian(spec: SystemSpec, sig: RegionSignature) -> np.ndarray:
    _check_sig(spec, sig)
    lin = np.array([c is Channel.LINEAR for c in sig.channels])
    return spec.A + spec.B[:, lin] @ spec.K[lin, :]


def region_offset(spec: SystemSpec, sig: RegionSignature) -> np.ndarray:
    """Constant term of the affine field on the region ``sig``."""
    _check_sig(spec, sig)
    w = np.array([{Channel.POS_SAT: 1.0, Channel.NEG_SAT: -1.0}.get(c, 0.0) for c in sig.channels])
    return spec.M * (spec.B @ w)


def _check_sig(spec, sig):
    if len(sig) != spec.m:
        raise InvalidParameterError(f"signature has {len(sig)} channels, system has {spec.m}")


def eigenvalues(F) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1]:
        raise InvalidParameterError(f"eigenvalues need a square matrix, got shape {F.shape}")
    return np.linalg.eigvals(F)


def controllability_matrix(A, B) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def matrix_rank(C, rtol: float = RANK_RTOL) -> int:
    s = np.linalg.svd(C, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


@dataclass(frozen=True)
class ValidationReport:
    anti_stable: bool
    controllable: bool
    closed_loop_hurwitz: bool
    eig_A: list
    eig_closed_loop: list
    controllability_rank: int

    @property
    def ok(self) -> bool:
        return self.anti_stable and self.controllable and self.closed_loop_hurwitz


def validate_spec(spec: SystemSpec) -> ValidationReport:
    eig_A = eigenvalues(spec.A)
    eig_cl = eigenvalues(spec.A + spec.B @ spec.K)
    rank = matrix_rank(controllability_matrix(spec.A, spec.B))
    return ValidationReport(
        anti_stable=bool(np.all(eig_A.real > 0)),
        controllable=rank == spec.n,
        closed_loop_hurwitz=bool(np.all(eig_cl.real < 0)),
        eig_A=list(eig_A),
        eig_closed_loop=list(eig_cl),
        controllability_rank=rank,
    )


def spectrum_mismatch(actual, wanted) -> float:
    """Largest distance in an optimal one-to-one matching of two spectra."""
    actual = np.asarray(actual, dtype=complex)
    wanted = np.asarray(wanted, dtype=complex)
    cost = np.abs(actual[:, None] - wanted[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max()) if len(rows) else 0.0


def place_poles_single_input(A, b, poles) -> np.ndarray:
    """Gain ``k`` (row vector) such that ``A + b k`` has the requested spectrum.

    Ackermann's formula, written for the ``u = +k x`` sign convention. The
    result is re-checked against ``poles``.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise InvalidParameterError(f"A must be square, got {A.shape}")
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.shape != (n,):
        raise InvalidParameterError(f"b must have length {n}")
    poles = np.asarray(poles, dtype=complex).reshape(-1)
    if poles.shape != (n,):
        raise InvalidParameterError(f"need {n} poles, got {poles.size}")
    if spectrum_mismatch(poles, poles.conj()) > 1e-12 * max(1.0, np.abs(poles).max()):
        raise InvalidParameterError("poles must be closed under complex conjugation")

    C = controllability_matrix(A, b)
    if matrix_rank(C) < n:
        raise SingularControllabilityError("(A, b) is not controllable")
    coeffs = np.real(np.poly(poles))
    phi = np.zeros_like(A)
    for c in coeffs:  # Horner
        phi = phi @ A + c * np.eye(n)
    e_n = np.zeros(n)
    e_n[-1] = 1.0
    k = -np.linalg.solve(C.T, e_n) @ phi

    mismatch = spectrum_mismatch(eigenvalues(A + np.outer(b, k)), poles)
    if mismatch > POLE_MATCH_TOL:
        raise SingularControllabilityError(
            f"placement is ill-conditioned: pole mismatch {mismatch:.3g}"
        )
    return k


def random_antistable_system(n: int, seed: int) -> SystemSpec:
    """Seeded single-input system with anti-stable ``A`` and Hurwitz ``A + b k``.

    Entries are uniform on [-1, 1]; ``A`` is then shifted so its smallest
    eigenvalue real part is 0.1. Closed-loop poles have real parts in
    [-3, -0.5].
    """
    if not 2 <= n <= 8:
        raise InvalidParameterError(f"n must lie in [2, 8], got {n}")
    rng = np.random.default_rng(seed)
    for _ in range(100):
        A = rng.uniform(-1.0, 1.0, (n, n))
        b = rng.uniform(-1.0, 1.0, n)
        # small cushion keeps min Re >= 0.1 after eigenvalue round-off
        shift = 0.1 - eigenvalues(A).real.min() + 1e-9
        A = A + shift * np.eye(n)
        poles = _random_hurwitz_poles(n, rng)
        try:
            k = place_poles_single_input(A, b, poles)
        except SingularControllabilityError:
            continue
        return SystemSpec(A=A, B=b[:, None], K=k[None, :], M=1.0)
    raise GeneratorError(f"no controllable draw after 100 attempts (seed={seed})")


def _random_hurwitz_poles(n, rng):
    n_pairs = int(rng.integers(0, n // 2 + 1))
    re = rng.uniform(-3.0, -0.5, n - n_pairs)
    im = rng.uniform(0.2, 2.0, n_pairs)
    poles = [complex(r, 0.0) for r in re[n_pairs:]]
    for r, i in zip(re[:n_pairs], im):
        poles += [complex(r, i), complex(r, -i)]
    return np.array(poles)
