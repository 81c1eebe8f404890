"""Jacobi matrices: windows, resolvents, spectral measures, kappa vectors.

Windows are finite runs of three-term recurrence coefficients b(n)
(diagonal) and a(n) > 0, where a(n) couples the sites n-1 and n.  A
two-sided window splits at the scalar index -1 | 0 into halves J_- and
J_+ joined by a(0); the half-line resolvent functions

    r_+(z) = <(J_+ - z)^{-1} e_0, e_0>,
    r_-(z) = <(J_- - z)^{-1} e_{-1}, e_{-1}>

drive everything else: the 2x2 corner resolvent of the full matrix, the
angle function phi(c) = arctan r_+(c) and its kappa vector

    kappa_c = (J - c)^{-1} (a(0) sin(phi) e_{-1} + cos(phi) e_0),

which is supported on the right half and has squared norm phi'(c).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numkit
from .errors import (
    NumericalError,
    SingularMatrixError,
    SpectrumProximityError,
    ValidationError,
    WindowError,
)

ANGLE_POLE_THRESHOLD = 1e10
SPECTRUM_MIN_DIST = 1e-6
KAPPA_NORM_TOL = 1e-6
CORNER_IDENTITY_TOL = 1e-8
FD_STEP_REL = 1e-5


@dataclass(frozen=True)
class JacobiWindow:
    """Coefficients a(n) > 0 and b(n) for n = n_min..n_max.

    a(n) couples the sites n-1 and n, so a(n_min) refers to a bond that
    leaves the window; it is stored to keep halves attachable.
    """

    a: np.ndarray
    b: np.ndarray
    n_min: int = 0

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float)
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if a.ndim != 1 or b.ndim != 1 or a.size != b.size or a.size < 1:
            raise ValidationError("a and b must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValidationError("coefficients must be finite")
        if np.any(a <= 0.0):
            raise ValidationError("all a(n) must be positive")

    @property
    def size(self) -> int:
        return self.b.size

    @property
    def n_max(self) -> int:
        return self.n_min + self.size - 1

    def pos(self, n: int) -> int:
        if not self.n_min <= n <= self.n_max:
            raise WindowError(f"site {n} outside [{self.n_min}, {self.n_max}]")
        return n - self.n_min

    def a_at(self, n: int) -> float:
        return float(self.a[self.pos(n)])

    def b_at(self, n: int) -> float:
        return float(self.b[self.pos(n)])

    def dense(self) -> np.ndarray:
        mat = np.diag(self.b)
        off = self.a[1:]
        mat[np.arange(self.size - 1), np.arange(1, self.size)] = off
        mat[np.arange(1, self.size), np.arange(self.size - 1)] = off
        return mat

    def norm_bound(self) -> float:
        return float(np.max(np.abs(self.b)) + 2.0 * np.max(self.a))

    def right_half(self) -> "JacobiWindow":
        """Sites 0..n_max as a one-sided window; keeps a(0) as the bond."""
        if self.n_min > 0 or self.n_max < 0:
            raise WindowError("window does not contain the site 0")
        cut = self.pos(0)
        return JacobiWindow(self.a[cut:], self.b[cut:], 0)

    def left_half(self) -> "JacobiWindow":
        """Sites -1..n_min reversed into a one-sided window.

        In the reversed order the diagonal reads b(-1), b(-2), ... and the
        internal bonds a(-1), a(-2), ...; the stored a(0) slot again holds
        the bond toward the other half.
        """
        if self.n_max < -1 or self.n_min > -1:
            raise WindowError("window does not contain the site -1")
        cut = self.pos(-1)
        a_rev = np.concatenate(([self.a[cut + 1]], self.a[1 : cut + 1][::-1]))
        b_rev = self.b[: cut + 1][::-1]
        return JacobiWindow(a_rev, b_rev, 0)

    def shifted(self, n: int) -> "JacobiWindow":
        """Drop the first n sites; the result starts at index 0 again."""
        if not 0 <= n < self.size:
            raise WindowError(f"shift {n} outside the window")
        return JacobiWindow(self.a[n:], self.b[n:], 0)

    def to_json(self) -> dict:
        return {
            "n_min": self.n_min,
            "a": self.a.tolist(),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "JacobiWindow":
        try:
            return cls(
                np.array(data["a"]), np.array(data["b"]), int(data["n_min"])
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed window data: {exc}") from exc


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely many point masses; unit total mass."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=float)
        weights = np.array(self.weights, dtype=float)
        points.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        if points.ndim != 1 or weights.ndim != 1 or points.size != weights.size:
            raise ValidationError("points and weights must match in length")
        if points.size < 1:
            raise ValidationError("measure needs at least one point")
        if np.any(np.diff(points) <= 0.0):
            raise ValidationError("points must be strictly increasing")
        if np.any(weights <= 0.0):
            raise ValidationError("weights must be positive")
        if abs(float(np.sum(weights)) - 1.0) > 1e-12:
            raise ValidationError(
                f"total mass {np.sum(weights)} differs from 1 beyond 1e-12"
            )

    @property
    def n_points(self) -> int:
        return self.points.size

    def moment(self, order: int) -> float:
        return float(np.sum(self.weights * self.points**order))

    def cauchy_transform(self, z) -> complex:
        return np.sum(self.weights / (self.points - z))

    def to_json(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "DiscreteMeasure":
        try:
            return cls(np.array(data["points"]), np.array(data["weights"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed measure data: {exc}") from exc


@dataclass(frozen=True)
class KappaVector:
    """Defect-direction vector at c with its angle, in window coordinates."""

    c: float
    phi: float
    vec: np.ndarray
    n_min: int

    def __post_init__(self):
        vec = np.array(self.vec, dtype=float)
        vec.setflags(write=False)
        object.__setattr__(self, "vec", vec)

    @property
    def norm_sq(self) -> float:
        return float(self.vec @ self.vec)

    def at(self, n: int) -> float:
        return float(self.vec[n - self.n_min])


def _require_one_sided(window: JacobiWindow, what: str) -> None:
    if window.n_min != 0:
        raise WindowError(f"{what} expects a one-sided window starting at 0")


def spectral_measure_plus(window: JacobiWindow) -> DiscreteMeasure:
    """Eigenvalues and squared first components of the dense truncation."""
    _require_one_sided(window, "spectral_measure_plus")
    eigvals, eigvecs = numkit.sym_eigen(window.dense())
    weights = eigvecs[0, :] ** 2
    keep = weights > 0.0
    weights = weights[keep] / np.sum(weights[keep])
    return DiscreteMeasure(eigvals[keep], weights)


def resolvent_r(window: JacobiWindow, z):
    """<(J - z)^{-1} e_0, e_0> of a one-sided window; complex z allowed."""
    _require_one_sided(window, "resolvent_r")
    if np.iscomplexobj(np.asarray(z)) and np.imag(z) != 0.0:
        shifted = window.dense().astype(complex) - z * np.eye(window.size)
        e0 = np.zeros(window.size)
        e0[0] = 1.0
        return complex(np.linalg.solve(shifted, e0)[0])
    z = float(np.real(z))
    shifted = window.dense() - z * np.eye(window.size)
    e0 = np.zeros(window.size)
    e0[0] = 1.0
    return float(numkit.solve(shifted, e0)[0])


def lanczos_from_measure(measure: DiscreteMeasure, depth: int) -> JacobiWindow:
    """Three-term recurrence coefficients of the measure's orthonormal
    polynomials: b(0..depth) and a(1..depth).

    The a(0) slot of the result is the placeholder 1.0 (the bond leaving
    the half-line is not determined by the measure).
    """
    if depth < 0:
        raise ValidationError("depth must be nonnegative")
    if depth >= measure.n_points:
        raise ValidationError(
            f"measure with {measure.n_points} points supports depth "
            f"< {measure.n_points}, got {depth}"
        )
    x = measure.points
    basis = [np.sqrt(measure.weights)]
    bs = []
    a_out = [1.0]
    for step in range(depth + 1):
        v = basis[step]
        xv = x * v
        bs.append(float(v @ xv))
        if step == depth:
            break
        w = xv.copy()
        for u in basis:
            w -= (u @ w) * u
        for u in basis:
            w -= (u @ w) * u
        norm = float(np.linalg.norm(w))
        if norm <= 1e-13 * max(1.0, float(np.max(np.abs(x)))):
            raise NumericalError(
                f"recurrence broke down at step {step + 1}; "
                "measure support is numerically too small"
            )
        a_out.append(norm)
        basis.append(w / norm)
    return JacobiWindow(np.array(a_out), np.array(bs), 0)


def _spectrum(window: JacobiWindow) -> np.ndarray:
    eigvals, _ = numkit.sym_eigen(window.dense())
    return eigvals


def decay_margin(window: JacobiWindow, dist: float) -> int:
    """Sites of padding after which boundary influence drops below ~1e-9."""
    return int(math.ceil(30.0 / math.log1p(dist / window.norm_bound())))


def angle_plus(window: JacobiWindow, c: float) -> float:
    """phi(c) = arctan r_+(c) in (-pi/2, pi/2]; pi/2 when r_+ blows up."""
    try:
        r_plus = resolvent_r(window.right_half(), c)
    except SingularMatrixError:
        return math.pi / 2.0
    if abs(r_plus) > ANGLE_POLE_THRESHOLD:
        return math.pi / 2.0
    return math.atan(r_plus)


def kappa(window: JacobiWindow, c: float) -> KappaVector:
    """Kappa vector at c; requires decay margin on both sides of 0."""
    if window.n_min > -1 or window.n_max < 0:
        raise WindowError("kappa needs a two-sided window around -1 | 0")
    spectrum = _spectrum(window)
    dist = float(np.min(np.abs(spectrum - c)))
    if dist < SPECTRUM_MIN_DIST:
        raise SpectrumProximityError(
            f"c = {c} is within {dist:.2e} of the window spectrum"
        )
    margin = decay_margin(window, dist)
    left_pad = -1 - window.n_min
    right_pad = window.n_max
    if left_pad < margin or right_pad < margin:
        raise WindowError(
            f"window pads ({left_pad}, {right_pad}) below the decay margin "
            f"{margin} for c = {c}"
        )
    phi = angle_plus(window, c)
    a0 = window.a_at(0)
    rhs = np.zeros(window.size)
    rhs[window.pos(-1)] = a0 * math.sin(phi)
    rhs[window.pos(0)] = math.cos(phi)
    vec = numkit.solve(window.dense() - c * np.eye(window.size), rhs)

    h = FD_STEP_REL * max(1.0, abs(c))
    dphi = angle_plus(window, c + h) - angle_plus(window, c - h)
    if dphi < -math.pi / 2.0:
        dphi += math.pi
    phi_prime = dphi / (2.0 * h)
    norm_sq = float(vec @ vec)
    if abs(norm_sq - phi_prime) > KAPPA_NORM_TOL * max(1.0, abs(phi_prime)):
        raise NumericalError(
            f"kappa norm {norm_sq:.9f} does not match the angle derivative "
            f"{phi_prime:.9f}"
        )
    return KappaVector(c=c, phi=phi, vec=vec, n_min=window.n_min)


def kappa_pairing(
    window: JacobiWindow, other: JacobiWindow, c: float
) -> tuple[float, float]:
    """Both sides of <(J - J') kappa_c, kappa'_c> = sin(phi' - phi)."""
    if window.n_min != other.n_min or window.size != other.size:
        raise WindowError("windows must be aligned for the pairing")
    kap = kappa(window, c)
    kap_other = kappa(other, c)
    diff = window.dense() - other.dense()
    lhs = float(kap_other.vec @ (diff @ kap.vec))
    rhs = math.sin(kap_other.phi - kap.phi)
    return lhs, rhs


def two_by_two_resolvent(window: JacobiWindow, z: float) -> np.ndarray:
    """Corner resolvent [[R(-1,-1), R(-1,0)], [R(0,-1), R(0,0)]].

    Verifies the half-line identities -1/R(0,0) = -1/r_+ + a(0)^2 r_- and
    -1/R(-1,-1) = -1/r_- + a(0)^2 r_+ before returning.
    """
    if window.n_min > -1 or window.n_max < 0:
        raise WindowError("corner resolvent needs sites -1 and 0")
    spectrum = _spectrum(window)
    scale = max(1.0, window.norm_bound())
    if float(np.min(np.abs(spectrum - z))) < 1e-8 * scale:
        raise SpectrumProximityError(
            f"z = {z} is too close to the window spectrum"
        )
    shifted = window.dense() - z * np.eye(window.size)
    rhs = np.zeros((window.size, 2))
    rhs[window.pos(-1), 0] = 1.0
    rhs[window.pos(0), 1] = 1.0
    sol = np.column_stack(
        [numkit.solve(shifted, rhs[:, 0]), numkit.solve(shifted, rhs[:, 1])]
    )
    rmat = np.array(
        [
            [sol[window.pos(-1), 0], sol[window.pos(-1), 1]],
            [sol[window.pos(0), 0], sol[window.pos(0), 1]],
        ]
    )
    r_plus = resolvent_r(window.right_half(), z)
    r_minus = resolvent_r(window.left_half(), z)
    a0 = window.a_at(0)
    checks = (
        (-1.0 / rmat[1, 1], -1.0 / r_plus + a0**2 * r_minus),
        (-1.0 / rmat[0, 0], -1.0 / r_minus + a0**2 * r_plus),
    )
    for lhs, rhs_val in checks:
        if abs(lhs - rhs_val) > CORNER_IDENTITY_TOL * max(
            1.0, abs(lhs), abs(rhs_val)
        ):
            raise NumericalError(
                f"corner identity residual {abs(lhs - rhs_val):.3e} "
                "exceeds tolerance"
            )
    return rmat


def _classify_extended(value: float) -> str:
    if np.isnan(value):
        raise ValidationError("extended-real value must not be NaN")
    if np.isinf(value):
        return "pole"
    if value == 0.0:
        return "zero"
    return "regular"


_ADMISSIBLE_PAIRS = {
    ("pole", "regular"),
    ("regular", "pole"),
    ("zero", "regular"),
    ("regular", "zero"),
    ("zero", "zero"),
}


def extension_predicate(r_plus_at_c: float, r_minus_at_c: float) -> bool:
    """Whether the half-line limit pair keeps the gap pole resolvable."""
    pair = (_classify_extended(r_plus_at_c), _classify_extended(r_minus_at_c))
    return pair in _ADMISSIBLE_PAIRS


def dist_eta(b: np.ndarray, b_tilde: np.ndarray, eta: float) -> float:
    """Geometrically weighted distance sqrt(sum |b-b~|^2 eta^{2n})."""
    if not 0.0 < eta < 1.0:
        raise ValidationError(f"eta must lie in (0, 1), got {eta}")
    b = np.asarray(b, dtype=float)
    b_tilde = np.asarray(b_tilde, dtype=float)
    n = max(b.size, b_tilde.size)
    diff = np.zeros(n)
    diff[: b.size] = b
    diff[: b_tilde.size] -= b_tilde
    return float(np.sqrt(np.sum(diff**2 * eta ** (2.0 * np.arange(n)))))


def dist_eta_windows(
    window: JacobiWindow, other: JacobiWindow, eta: float
) -> float:
    """Combined distance over the a and b sequences of one-sided windows."""
    _require_one_sided(window, "dist_eta_windows")
    _require_one_sided(other, "dist_eta_windows")
    da = dist_eta(window.a, other.a, eta)
    db = dist_eta(window.b, other.b, eta)
    return float(np.hypot(da, db))


def shifted_dist_eta(
    window: JacobiWindow,
    reference: JacobiWindow,
    eta: float,
    n_shifts: int,
) -> np.ndarray:
    """Distances of successively shifted copies to a reference window."""
    _require_one_sided(window, "shifted_dist_eta")
    if n_shifts >= window.size:
        raise WindowError("more shifts than available sites")
    return np.array(
        [
            dist_eta_windows(window.shifted(n), reference, eta)
            for n in range(n_shifts + 1)
        ]
    )
