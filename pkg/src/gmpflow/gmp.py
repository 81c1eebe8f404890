"""Block Jacobi matrices with rank-one couplings and rational resolvents.

The operators handled here are (g+1)-block Jacobi matrices whose
off-diagonal blocks are the rank-one matrices ``A(p) = delta_g p^T``
(only the last row of the block is nonzero) and whose diagonal blocks are

    B(p, q) = strict upper part of q p^T  +  lower part of p q^T
              + diag(c_1, ..., c_g, 0).

The scalars ``c_1..c_g`` are the gap poles of the underlying comb map.
Such a matrix is determined by a two-sided sequence of blocks; a window
holds a finite run of them.  The key algebraic objects are the 2x2
transfer matrix with unit determinant, built from one elementary factor
per pole plus one factor for infinity, and the positive functionals
``Lambda_k`` (residues of the transfer trace) together with their
two-block generalizations, whose positivity characterizes the class and
whose reciprocals enter the closed-form resolvent columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit
from .errors import (
    NumericalError,
    PoleEvaluationError,
    ValidationError,
    WindowError,
)

# The symplectic unit [[0, -1], [1, 0]].
JMAT = np.array([[0.0, -1.0], [1.0, 0.0]])
JMAT.setflags(write=False)

DET_TOL = 1e-9
VALIDITY_FLOOR = 1e-8
POLE_REL_TOL = 1e-12


@dataclass(frozen=True)
class GmpBlock:
    """One block of forming vectors: p = (p_0..p_g), q = (q_0..q_g)."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=float)
        q = np.array(self.q, dtype=float)
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        if p.ndim != 1 or q.ndim != 1 or p.size != q.size or p.size < 1:
            raise ValidationError("p and q must be 1-d vectors of equal length")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValidationError("block entries must be finite")
        if p[-1] <= 0.0:
            raise ValidationError(f"last p entry must be positive, got {p[-1]}")

    @property
    def g(self) -> int:
        return self.p.size - 1

    def pm(self, m: int) -> np.ndarray:
        """The 2-vector (p_m, q_m)."""
        return np.array([self.p[m], self.q[m]])


@dataclass(frozen=True)
class GmpWindow:
    """A finite run of blocks j = j_min..j_max sharing one pole list c."""

    blocks: tuple[GmpBlock, ...]
    c: np.ndarray
    j_min: int = 0

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        c = np.array(self.c, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "c", c)
        if not self.blocks:
            raise ValidationError("window must contain at least one block")
        g = self.blocks[0].g
        if any(blk.g != g for blk in self.blocks):
            raise ValidationError("all blocks must share one gap count")
        if c.ndim != 1 or c.size != g:
            raise ValidationError(
                f"pole list has length {c.size}, expected {g}"
            )
        if not np.all(np.isfinite(c)):
            raise ValidationError("poles must be finite")

    @property
    def g(self) -> int:
        return self.blocks[0].g

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def j_max(self) -> int:
        return self.j_min + len(self.blocks) - 1

    def block(self, j: int) -> GmpBlock:
        """Block at absolute index j."""
        if not self.j_min <= j <= self.j_max:
            raise WindowError(
                f"block {j} outside window [{self.j_min}, {self.j_max}]"
            )
        return self.blocks[j - self.j_min]

    def interior_js(self) -> range:
        """Absolute indices of blocks with both neighbours present."""
        return range(self.j_min + 1, self.j_max)

    def scalar_index(self, j: int, slot: int) -> int:
        """Position of slot ``slot`` of block j in the assembled matrix."""
        if not 0 <= slot <= self.g:
            raise WindowError(f"slot {slot} outside 0..{self.g}")
        return (j - self.j_min) * (self.g + 1) + slot

    def to_json(self) -> dict:
        return {
            "g": self.g,
            "C": self.c.tolist(),
            "j_min": self.j_min,
            "blocks": [
                {"p": blk.p.tolist(), "q": blk.q.tolist()}
                for blk in self.blocks
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "GmpWindow":
        try:
            blocks = tuple(
                GmpBlock(np.array(b["p"]), np.array(b["q"]))
                for b in data["blocks"]
            )
            return cls(blocks, np.array(data["C"]), int(data["j_min"]))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed window data: {exc}") from exc


@dataclass(frozen=True)
class TransferEval:
    """A fully assembled 2x2 transfer matrix; unit determinant enforced."""

    value: np.ndarray

    def __post_init__(self):
        value = np.array(self.value)
        value.setflags(write=False)
        object.__setattr__(self, "value", value)
        if value.shape != (2, 2):
            raise ValidationError("transfer matrix must be 2x2")
        det = value[0, 0] * value[1, 1] - value[0, 1] * value[1, 0]
        if abs(det - 1.0) > DET_TOL:
            raise NumericalError(
                f"transfer determinant {det} deviates from 1 beyond {DET_TOL}"
            )

    @property
    def trace(self) -> float:
        return self.value[0, 0] + self.value[1, 1]


def build_block_B(blk: GmpBlock, c: np.ndarray) -> np.ndarray:
    """Diagonal block: mixed outer products of p and q plus diag(c, 0)."""
    c = np.asarray(c, dtype=float)
    if c.size != blk.g:
        raise ValidationError(f"pole list length {c.size}, expected {blk.g}")
    pq = np.outer(blk.p, blk.q)
    mat = np.tril(pq) + np.triu(pq.T, 1)
    mat[np.diag_indices_from(mat)] += np.append(c, 0.0)
    return mat


def assemble_dense(window: GmpWindow) -> np.ndarray:
    """Dense symmetric matrix of the window; banded with halfwidth g+1."""
    g = window.g
    size = (g + 1) * window.n_blocks
    mat = np.zeros((size, size))
    for i, blk in enumerate(window.blocks):
        lo = i * (g + 1)
        mat[lo : lo + g + 1, lo : lo + g + 1] = build_block_B(blk, window.c)
        if i + 1 < window.n_blocks:
            nxt = window.blocks[i + 1]
            # Coupling block A(p) = delta_g p^T: last row of block i
            # against all slots of block i+1.
            mat[lo + g, lo + g + 1 : lo + 2 * (g + 1)] = nxt.p
            mat[lo + g + 1 : lo + 2 * (g + 1), lo + g] = nxt.p
    return mat


def _pm_outer(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    return np.outer(left, right)


def bp_factor(z: float, c: float, pm: np.ndarray) -> np.ndarray:
    """Elementary factor I - (c - z)^{-1} pm pm^T J; determinant 1 exactly."""
    denom = c - z
    if abs(denom) <= POLE_REL_TOL * max(1.0, abs(c)):
        raise PoleEvaluationError(f"factor evaluated at its pole c = {c}")
    return np.eye(2) - (_pm_outer(pm, pm) @ JMAT) / denom


def bp_factor_inf(z: float, pm: np.ndarray) -> np.ndarray:
    """The factor carrying the pole at infinity: [[0, -p], [1/p, (z-pq)/p]]."""
    p, q = float(pm[0]), float(pm[1])
    if p == 0.0:
        raise ValidationError("infinity factor requires p != 0")
    return np.array([[0.0, -p], [1.0 / p, (z - p * q) / p]])


def transfer_matrix(blk: GmpBlock, c: np.ndarray, z: float) -> TransferEval:
    """Product of one elementary factor per pole and the infinity factor."""
    c = np.asarray(c, dtype=float)
    mat = np.eye(2)
    for m in range(blk.g):
        mat = mat @ bp_factor(z, c[m], blk.pm(m))
    mat = mat @ bp_factor_inf(z, blk.pm(blk.g))
    return TransferEval(mat)


def transfer_via_resolvent(blk: GmpBlock, c: np.ndarray, z: float) -> TransferEval:
    """Transfer matrix from resolvent entries of the diagonal block.

    With ``r_pp = <(B - z)^{-1} p, p>``, ``r_pd = <(B - z)^{-1} delta_g, p>``
    and ``r_dd = <(B - z)^{-1} delta_g, delta_g>``, the transfer matrix is
    ``(1/r_pd) [[r_pp r_dd - r_pd^2, -r_pp], [r_dd, -1]]``.
    """
    c = np.asarray(c, dtype=float)
    bmat = build_block_B(blk, c)
    shifted = bmat - z * np.eye(blk.g + 1)
    delta = np.zeros(blk.g + 1)
    delta[blk.g] = 1.0
    x_p = numkit.solve(shifted, blk.p)
    x_d = numkit.solve(shifted, delta)
    r_pp = float(blk.p @ x_p)
    r_pd = float(blk.p @ x_d)
    r_dd = float(x_d[blk.g])
    if abs(r_pd) < 1e-14 * max(1.0, abs(r_pp), abs(r_dd)):
        raise NumericalError("degenerate corner resolvent entry")
    mat = (
        np.array([[r_pp * r_dd - r_pd**2, -r_pp], [r_dd, -1.0]]) / r_pd
    )
    return TransferEval(mat)


def lambda_sharp(
    nextblk: GmpBlock, thisblk: GmpBlock, c: np.ndarray, k: int
) -> float:
    """Two-block functional: minus the trace of the mixed factor product.

    The product runs the first k-1 elementary factors with the vectors of
    ``nextblk``, inserts the mixed rank-one middle term, then the factors
    k+1..g and the infinity factor with the vectors of ``thisblk``, all
    evaluated at the pole c_k.  With equal blocks it is the residue
    functional Lambda_k.
    """
    g = thisblk.g
    c = np.asarray(c, dtype=float)
    if nextblk.g != g:
        raise ValidationError("blocks must share one gap count")
    if not 1 <= k <= g:
        raise ValidationError(f"pole index {k} outside 1..{g}")
    ck = c[k - 1]
    mat = np.eye(2)
    for m in range(k - 1):
        mat = mat @ bp_factor(ck, c[m], nextblk.pm(m))
    mat = mat @ (_pm_outer(nextblk.pm(k - 1), thisblk.pm(k - 1)) @ JMAT)
    for m in range(k, g):
        mat = mat @ bp_factor(ck, c[m], thisblk.pm(m))
    mat = mat @ bp_factor_inf(ck, thisblk.pm(g))
    return -float(np.trace(mat))


def lambda_k(blk: GmpBlock, c: np.ndarray, k: int) -> float:
    """Residue functional at the k-th pole (equal-blocks case)."""
    return lambda_sharp(blk, blk, c, k)


def validate_gmp(window: GmpWindow, floor: float = VALIDITY_FLOOR) -> dict:
    """Check the class criterion: adjacent-pair functionals stay above floor.

    Returns a report with the minimum over adjacent block pairs of the
    two-block functional for each pole index, the absolute block index
    attaining it, and the overall verdict.
    """
    report = {
        "valid": False,
        "floor": float(floor),
        "g": window.g,
        "n_pairs": max(window.n_blocks - 1, 0),
        "min_per_k": {},
        "argmin_j": {},
        "message": "",
    }
    if window.n_blocks < 2:
        report["message"] = "insufficient window: need at least two blocks"
        return report
    worst_k = None
    for k in range(1, window.g + 1):
        vals = [
            lambda_sharp(
                window.blocks[i + 1], window.blocks[i], window.c, k
            )
            for i in range(window.n_blocks - 1)
        ]
        i_min = int(np.argmin(vals))
        report["min_per_k"][k] = vals[i_min]
        report["argmin_j"][k] = window.j_min + i_min
        if vals[i_min] <= floor and worst_k is None:
            worst_k = k
    report["valid"] = worst_k is None
    report["message"] = (
        "ok"
        if worst_k is None
        else (
            f"pair functional at k={worst_k} is "
            f"{report['min_per_k'][worst_k]:.3e} <= floor {floor:.1e} "
            f"(block {report['argmin_j'][worst_k]})"
        )
    )
    return report


def resolvent_column(window: GmpWindow, k: int) -> np.ndarray:
    """Column of (c_k - A)^{-1} at the unit vector e_{k-1}, in closed form.

    The window must contain the absolute blocks -1, 0, 1.  The result is
    a window-aligned vector supported on those three blocks: the outer
    blocks come from explicit factor products divided by the adjacent
    pair functionals, the middle block from a small stacked least-squares
    solve (its system matrix may be singular at the pole).
    """
    g = window.g
    if not 1 <= k <= g:
        raise ValidationError(f"pole index {k} outside 1..{g}")
    if window.j_min > -1 or window.j_max < 1:
        raise WindowError(
            "window must contain blocks -1, 0, 1 for a resolvent column"
        )
    c = window.c
    ck = c[k - 1]
    blk_m1 = window.block(-1)
    blk_0 = window.block(0)
    blk_1 = window.block(1)

    lam_m1 = lambda_sharp(blk_0, blk_m1, c, k)
    lam_0 = lambda_sharp(blk_1, blk_0, c, k)
    scale = max(abs(lam_m1), abs(lam_0), 1.0)
    if min(abs(lam_m1), abs(lam_0)) <= 1e-12 * scale:
        raise ValidationError(
            "pair functional vanishes; the closed-form column is undefined"
        )

    # Block -1: slot k-1 is 1/Lambda, later slots from factor products,
    # slot g from orthogonality to this block's p.
    f_m1 = np.zeros(g + 1)
    f_m1[k - 1] = 1.0 / lam_m1
    row = blk_m1.pm(k - 1) @ JMAT
    mat = np.eye(2)
    for l in range(k, g):
        if l > k:
            mat = mat @ bp_factor(ck, c[l - 1], blk_m1.pm(l - 1))
        f_m1[l] = float(row @ mat @ blk_m1.pm(l)) / (ck - c[l]) / lam_m1
    f_m1[g] = -float(blk_m1.p[:g] @ f_m1[:g]) / blk_m1.p[g]

    # Block +1: slot k-1 is 1/Lambda, earlier slots from factor products,
    # slots k..g vanish.
    f_1 = np.zeros(g + 1)
    f_1[k - 1] = 1.0 / lam_0
    for m in range(k - 1):
        mat = np.eye(2)
        for j in range(m + 1, k - 1):
            mat = mat @ bp_factor(ck, c[j], blk_1.pm(j))
        val = float(blk_1.pm(m) @ JMAT @ mat @ blk_1.pm(k - 1))
        f_1[m] = val / (ck - c[m]) / lam_0

    # Block 0: stack the three block-row equations that involve it.
    b_m1 = build_block_B(blk_m1, c)
    b_0 = build_block_B(blk_0, c)
    b_1 = build_block_B(blk_1, c)
    eye = np.eye(g + 1)
    e_rhs = np.zeros(g + 1)
    e_rhs[k - 1] = 1.0
    delta = np.zeros(g + 1)
    delta[g] = 1.0

    rows = [ck * eye - b_0]
    rhs = [e_rhs + blk_0.p * f_m1[g] + delta * float(blk_1.p @ f_1)]
    rows.append(blk_0.p[None, :])
    rhs.append(np.array([float(((ck * eye - b_m1) @ f_m1)[g])]))
    rows.append(np.outer(blk_1.p, delta))
    rhs.append((ck * eye - b_1) @ f_1)
    f_0, *_ = np.linalg.lstsq(
        np.vstack(rows), np.concatenate(rhs), rcond=None
    )

    column = np.zeros((g + 1) * window.n_blocks)
    for j, f_blk in ((-1, f_m1), (0, f_0), (1, f_1)):
        lo = window.scalar_index(j, 0)
        column[lo : lo + g + 1] = f_blk

    dense = assemble_dense(window)
    target = np.zeros(column.size)
    target[window.scalar_index(0, k - 1)] = 1.0
    residual = np.max(np.abs((ck * np.eye(column.size) - dense) @ column - target))
    if residual > 1e-8 * max(1.0, np.max(np.abs(column))):
        raise NumericalError(
            f"closed-form column residual {residual:.3e} too large"
        )
    return column
