"""Comb maps for finite-gap spectral sets.

A finite-gap set ``E = [b0, a0] \\ union of open gaps (a_j, b_j)`` carries
a distinguished rational map ``Delta`` with ``Delta^{-1}([-2, 2]) = E``:

    Delta(z) = lambda0 * z + c0 + sum_k lambda_k / (c_k - z)
             = 2 * (P_a(z) + P_b(z)) / (P_b(z) - P_a(z)),

where ``P_a(z) = prod_j (z - a_j)`` over the gap left endpoints together
with ``a0``, and ``P_b`` likewise over ``b0`` and the gap right endpoints.
Each gap contains exactly one pole ``c_k`` (a root of ``P_b - P_a``), all
``lambda_k`` are positive, and ``Delta`` sweeps ``[-2, 2]`` exactly once
on every band.  The module also evaluates the associated function
``Psi = (1 - R) / (1 + R)`` with ``R = +sqrt(P_a / P_b)``, which satisfies
``Psi + 1/Psi = Delta`` off the set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit
from .errors import DegenerateGapError, PoleEvaluationError, ValidationError

GAP_REL_TOL = 1e-12
POLE_REL_TOL = 1e-12
ZERO_RESIDUAL_REL_TOL = 1e-11


@dataclass(frozen=True)
class GapSet:
    """The set ``[b0, a0]`` minus the open gaps ``(a_j, b_j)``.

    Gaps are ordered left to right, pairwise disjoint and strictly inside
    the outer interval.
    """

    b0: float
    a0: float
    gaps: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "gaps", tuple((float(a), float(b)) for a, b in self.gaps)
        )
        if not (np.isfinite(self.b0) and np.isfinite(self.a0)):
            raise ValidationError("outer endpoints must be finite")
        if self.b0 >= self.a0:
            raise ValidationError(
                f"outer interval is empty: [{self.b0}, {self.a0}]"
            )
        left = self.b0
        for k, (a, b) in enumerate(self.gaps):
            if not (np.isfinite(a) and np.isfinite(b)):
                raise ValidationError(f"gap {k} = ({a}, {b}) must be finite")
            if a >= b:
                raise ValidationError(
                    f"gap {k} = ({a}, {b}) is not an increasing pair"
                )
            if a <= left:
                raise ValidationError(
                    f"gap {k} = ({a}, {b}) overlaps its left neighbour"
                )
            left = b
        if self.gaps and self.gaps[-1][1] >= self.a0:
            raise ValidationError("last gap reaches beyond the outer interval")

    @property
    def g(self) -> int:
        return len(self.gaps)

    @property
    def diameter(self) -> float:
        return self.a0 - self.b0

    def a_points(self) -> np.ndarray:
        """Roots of P_a: the gap left endpoints and the right outer endpoint."""
        return np.array([a for a, _ in self.gaps] + [self.a0])

    def b_points(self) -> np.ndarray:
        """Roots of P_b: the left outer endpoint and the gap right endpoints."""
        return np.array([self.b0] + [b for _, b in self.gaps])

    def bands(self) -> list[tuple[float, float]]:
        lows = [self.b0] + [b for _, b in self.gaps]
        highs = [a for a, _ in self.gaps] + [self.a0]
        return list(zip(lows, highs))

    def to_json(self) -> dict:
        return {
            "b0": self.b0,
            "a0": self.a0,
            "gaps": [[a, b] for a, b in self.gaps],
        }

    @classmethod
    def from_json(cls, data: dict) -> "GapSet":
        try:
            gaps = tuple((float(a), float(b)) for a, b in data["gaps"])
            return cls(float(data["b0"]), float(data["a0"]), gaps)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed gap set data: {exc}") from exc


@dataclass(frozen=True)
class DeltaData:
    """Partial-fraction data of a comb map: slope, offset and gap poles."""

    lambda0: float
    c0: float
    poles: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "poles", tuple((float(c), float(l)) for c, l in self.poles)
        )
        if self.lambda0 <= 0:
            raise ValidationError(f"slope must be positive, got {self.lambda0}")
        for c, lam in self.poles:
            if lam <= 0:
                raise ValidationError(f"pole weight at {c} must be positive")

    @property
    def g(self) -> int:
        return len(self.poles)

    def cs(self) -> np.ndarray:
        return np.array([c for c, _ in self.poles])

    def lams(self) -> np.ndarray:
        return np.array([l for _, l in self.poles])

    def to_json(self) -> dict:
        return {
            "lambda0": self.lambda0,
            "c0": self.c0,
            "poles": [{"c": c, "lambda": l} for c, l in self.poles],
        }

    @classmethod
    def from_json(cls, data: dict) -> "DeltaData":
        try:
            poles = tuple(
                (float(p["c"]), float(p["lambda"])) for p in data["poles"]
            )
            return cls(float(data["lambda0"]), float(data["c0"]), poles)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed comb map data: {exc}") from exc


@dataclass(frozen=True)
class Ordering:
    """Permutation of the gap labels 1..g used to order pole sequences."""

    perm: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "perm", tuple(int(k) for k in self.perm))
        if sorted(self.perm) != list(range(1, len(self.perm) + 1)):
            raise ValidationError(f"{self.perm} is not a permutation of 1..g")

    @classmethod
    def identity(cls, g: int) -> "Ordering":
        return cls(tuple(range(1, g + 1)))

    @classmethod
    def rolled(cls, g: int) -> "Ordering":
        """The ordering (g, 1, 2, ..., g-1) produced by one re-blocking pass."""
        return cls((g,) + tuple(range(1, g))) if g > 0 else cls(())

    def apply(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        return values[[k - 1 for k in self.perm]]

    def compose(self, other: "Ordering") -> "Ordering":
        """self applied after other."""
        return Ordering(tuple(other.perm[k - 1] for k in self.perm))


def _poly_eval(z, roots: np.ndarray):
    """prod (z - r) for scalar or array z."""
    z = np.asarray(z)
    if z.ndim == 0:
        return np.prod(z - roots)
    return np.prod(z[..., None] - roots, axis=-1)


def eval_pa(gapset: GapSet, z):
    return _poly_eval(z, gapset.a_points())


def eval_pb(gapset: GapSet, z):
    return _poly_eval(z, gapset.b_points())


def eval_delta_ratio(gapset: GapSet, z):
    """Delta as the ratio 2 (P_a + P_b) / (P_b - P_a)."""
    pa = eval_pa(gapset, z)
    pb = eval_pb(gapset, z)
    denom = pb - pa
    if np.any(np.abs(denom) == 0.0):
        raise PoleEvaluationError(f"ratio form of the comb map has a pole at {z}")
    return 2.0 * (pa + pb) / denom


def gap_zeros(gapset: GapSet) -> np.ndarray:
    """The pole locations: one root of P_b - P_a inside each gap.

    Raises DegenerateGapError for gaps of (numerically) zero length.  The
    residual |(P_b - P_a)(c_k)| is checked against 1e-11 times the local
    polynomial scale.
    """
    diff = lambda x: eval_pb(gapset, x) - eval_pa(gapset, x)
    zeros = []
    for k, (a, b) in enumerate(gapset.gaps):
        if b - a <= GAP_REL_TOL * max(1.0, gapset.diameter):
            raise DegenerateGapError(
                f"gap {k} = ({a}, {b}) has numerically zero length"
            )
        c = numkit.bisect_root(diff, a, b)
        scale = abs(eval_pa(gapset, c)) + abs(eval_pb(gapset, c)) + 1.0
        residual = abs(diff(c))
        if residual > ZERO_RESIDUAL_REL_TOL * scale:
            raise DegenerateGapError(
                f"gap {k}: pole residual {residual:.3e} exceeds tolerance"
            )
        zeros.append(c)
    return np.array(zeros)


def delta_from_gaps(gapset: GapSet) -> DeltaData:
    """Partial-fraction data of the comb map of a gap set.

    The slope is 4 / (sum a_j - sum b_j); the pole weights come from the
    residues of the ratio form; the constant term is fixed by matching the
    ratio form at a reference point well to the right of the set.
    """
    a_pts = gapset.a_points()
    b_pts = gapset.b_points()
    lambda0 = 4.0 / float(np.sum(a_pts) - np.sum(b_pts))
    cs = gap_zeros(gapset)

    # Coefficients of P_b - P_a (degree g, leading coefficient positive).
    diff_coeffs = np.poly(b_pts) - np.poly(a_pts)
    ddiff = np.polyder(diff_coeffs)
    lams = []
    for c in cs:
        num = eval_pa(gapset, c) + eval_pb(gapset, c)
        lams.append(-2.0 * num / np.polyval(ddiff, c))
    lams = np.array(lams)

    z_ref = gapset.a0 + 10.0 * gapset.diameter
    c0 = float(
        eval_delta_ratio(gapset, z_ref)
        - lambda0 * z_ref
        - np.sum(lams / (cs - z_ref))
    )
    return DeltaData(lambda0, c0, tuple(zip(cs.tolist(), lams.tolist())))


def eval_delta(delta: DeltaData, z):
    """Evaluate the comb map; complex arguments are allowed.

    Raises PoleEvaluationError when a real argument sits on a pole.
    """
    z_arr = np.asarray(z)
    if delta.g:
        cs = delta.cs()
        lams = delta.lams()
        dist = np.abs(z_arr[..., None] - cs)
        if np.any(dist <= POLE_REL_TOL * np.maximum(1.0, np.abs(cs))):
            raise PoleEvaluationError(
                f"argument {z} coincides with a pole of the comb map"
            )
        tail = np.sum(lams / (cs - z_arr[..., None]), axis=-1)
    else:
        tail = np.zeros_like(z_arr, dtype=float)
    result = delta.lambda0 * z_arr + delta.c0 + tail
    return result if result.ndim else result[()]


def delta_inverse_points(
    gapset: GapSet, y: float, delta: DeltaData | None = None
) -> np.ndarray:
    """All solutions of Delta(x) = y inside the bands, for y in [-2, 2].

    Delta increases from -2 to 2 across every band, so there is exactly
    one solution per band; they are returned in increasing order.
    """
    if abs(y) > 2.0 + 1e-12:
        raise ValidationError(f"level {y} lies outside [-2, 2]")
    if delta is None:
        delta = delta_from_gaps(gapset)
    points = []
    for lo, hi in gapset.bands():
        flo = eval_delta(delta, lo) - y
        fhi = eval_delta(delta, hi) - y
        if abs(flo) <= 1e-9 * max(1.0, abs(y)):
            points.append(lo)
        elif abs(fhi) <= 1e-9 * max(1.0, abs(y)):
            points.append(hi)
        else:
            points.append(
                numkit.bisect_root(lambda x: eval_delta(delta, x) - y, lo, hi)
            )
    return np.array(points)


def eval_psi(gapset: GapSet, x: float) -> float:
    """Psi(x) = (1 - R) / (1 + R), R = +sqrt(P_a / P_b), for real x off E.

    Defined (real) outside the bands, gaps included; at band endpoints the
    limit values +-1 are returned.
    """
    x = float(x)
    for lo, hi in gapset.bands():
        if lo < x < hi:
            raise ValidationError(
                f"{x} lies inside the band [{lo}, {hi}]; the square root "
                "branch is not real there"
            )
    pa = float(eval_pa(gapset, x))
    pb = float(eval_pb(gapset, x))
    if pa == 0.0:
        return 1.0
    if pb == 0.0:
        return -1.0
    ratio = pa / pb
    if ratio < 0.0:
        raise ValidationError(f"P_a/P_b is negative at {x}")
    r = np.sqrt(ratio)
    return (1.0 - r) / (1.0 + r)
