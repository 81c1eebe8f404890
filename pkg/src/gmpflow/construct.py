"""Building GMP windows from spectral data.

Two constructions live here.  The one-sided route starts from a discrete
measure: the Gram matrix of the rational system ``{1, 1/(c_g - x), ...,
1/(c_1 - x)}``, its triangular factorization, the orthonormal rational
basis obtained by multiplying through with the comb map, and the matrix
of multiplication by ``x`` in that basis, which is a one-sided GMP
matrix.  The two-sided route converts between Jacobi windows and GMP
windows: ``jacobi_to_gmp`` orthogonalizes a flag of resolvent vectors
pinned at the map poles, ``gmp_to_jacobi_measure`` tridiagonalizes the
two half-line truncations through their spectral measures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit
from .errors import (
    NumericalError,
    PoleEvaluationError,
    SpectrumProximityError,
    ValidationError,
    WindowError,
)
from .finitegap import DeltaData, eval_delta
from .gmp import GmpBlock, GmpWindow, assemble_dense, build_block_B
from .jacobi import DiscreteMeasure, JacobiWindow, kappa, lanczos_from_measure

FACTOR_TOL = 1e-10
ORTHO_TOL = 1e-10
ONE_SIDED_PATTERN_TOL = 1e-9
TWO_SIDED_PATTERN_TOL = 1e-8
SPECTRAL_MARGIN_REL = 1e-3
FLAG_RANK_REL = 1e-8
POLE_SUPPORT_REL = 1e-12
READOUT_TOL = 1e-8
MERGE_REL = 1e-12
WEIGHT_FLOOR_REL = 1e-15


def _checked_poles(c_list) -> np.ndarray:
    cs = np.atleast_1d(np.asarray(c_list, dtype=float)).ravel()
    if cs.size < 1:
        raise ValidationError("at least one pole is required")
    if not np.all(np.isfinite(cs)):
        raise ValidationError("poles must be finite")
    if cs.size > 1:
        gaps = np.abs(cs[:, None] - cs[None, :])
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() <= 1e-12 * max(1.0, float(np.max(np.abs(cs)))):
            raise ValidationError("poles must be distinct")
    return cs


def _raw_columns(points: np.ndarray, cs: np.ndarray) -> np.ndarray:
    """Rational system evaluated on support points.

    Column 0 is the constant 1; columns 1..g hold 1/(c - x) with the
    poles taken in reverse listed order, matching the minus-side
    convention where the last pole enters first.
    """

    cols = [np.ones_like(points)]
    for c in cs[::-1]:
        cols.append(1.0 / (c - points))
    return np.column_stack(cols)


def gram_D(measure: DiscreteMeasure, c_list) -> np.ndarray:
    """Gram matrix of the rational system under the measure.

    Entries are direct sums sum_i w_i f_j(x_i) f_k(x_i) over the system
    of _raw_columns; the off-diagonal pole pairings equal divided
    differences of the Cauchy transform and the pole diagonal equals its
    derivative.  Raises PoleEvaluationError when a pole sits on the
    support.
    """

    cs = _checked_poles(c_list)
    pts = measure.points
    scale = max(1.0, float(np.max(np.abs(pts))), float(np.max(np.abs(cs))))
    for c in cs:
        if np.min(np.abs(pts - c)) <= POLE_SUPPORT_REL * scale:
            raise PoleEvaluationError(
                f"pole {c} lies on the support of the measure"
            )
    F = _raw_columns(pts, cs)
    D = F.T @ (measure.weights[:, None] * F)
    return 0.5 * (D + D.T)


def factor_L(D: np.ndarray) -> np.ndarray:
    """Upper-triangular L with positive diagonal and L^T D L = I.

    Equivalently D^{-1} = L L^T.  The factor is obtained from the
    lower-triangular factorization of the index-reversed inverse.
    Raises NotPositiveDefiniteError when D is not positive definite and
    NumericalError when the residual check fails.
    """

    D = np.asarray(D, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ValidationError(f"Gram matrix must be square, got {D.shape}")
    numkit.lower_cholesky_like(D)
    n = D.shape[0]
    d_inv = numkit.solve(D, np.eye(n))
    flipped = d_inv[::-1, ::-1]
    G = numkit.lower_cholesky_like(0.5 * (flipped + flipped.T))
    L = G[::-1, ::-1]
    # one refinement pass: divide out the residual Gram, staying triangular
    R = L.T @ D @ L
    H = numkit.lower_cholesky_like(0.5 * (R + R.T))
    L = numkit.solve(H, L.T).T
    resid = float(np.max(np.abs(L.T @ D @ L - np.eye(n))))
    if resid > FACTOR_TOL * max(1.0, float(np.max(np.abs(D)))):
        raise NumericalError(
            f"triangular factor residual {resid:.3e} exceeds the tolerance"
        )
    return L


@dataclass(frozen=True)
class RationalBasis:
    """Orthonormal rational functions evaluated on a measure's support.

    table holds one column per basis function, grouped in blocks of
    g + 1 columns; the first block spans the raw rational system and
    block m spans the map-multiplied continuation.  L carries the
    first-block coefficients, D the raw Gram matrix, and m_vec the
    first moments integral of x * tau against the measure for the first
    block.
    """

    measure: DiscreteMeasure
    table: np.ndarray
    L: np.ndarray
    D: np.ndarray
    m_vec: np.ndarray

    def __post_init__(self):
        table = np.asarray(self.table, dtype=float)
        L = np.asarray(self.L, dtype=float)
        D = np.asarray(self.D, dtype=float)
        m_vec = np.asarray(self.m_vec, dtype=float).ravel()
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise ValidationError("coefficient matrix must be square")
        per = L.shape[0]
        if D.shape != (per, per):
            raise ValidationError("Gram matrix shape does not match L")
        if m_vec.shape != (per,):
            raise ValidationError("moment vector length does not match L")
        if table.ndim != 2 or table.shape[0] != self.measure.n_points:
            raise ValidationError(
                "table rows must match the measure support size"
            )
        if table.shape[1] == 0 or table.shape[1] % per != 0:
            raise ValidationError(
                "table width must be a nonzero multiple of the block size"
            )
        w = self.measure.weights
        x = self.measure.points
        gram = table.T @ (w[:, None] * table)
        dev = float(np.max(np.abs(gram - np.eye(table.shape[1]))))
        if dev > ORTHO_TOL:
            raise ValidationError(
                f"basis table is not orthonormal, deviation {dev:.3e}"
            )
        l_scale = max(1.0, float(np.max(np.abs(L))))
        if per > 1 and float(np.max(np.abs(np.tril(L, -1)))) > 1e-12 * l_scale:
            raise ValidationError("coefficient matrix must be upper triangular")
        if np.any(np.diag(L) <= 0.0):
            raise ValidationError(
                "coefficient matrix must have a positive diagonal"
            )
        resid = float(np.max(np.abs(L.T @ D @ L - np.eye(per))))
        if resid > FACTOR_TOL * max(1.0, float(np.max(np.abs(D)))):
            raise ValidationError(
                f"factorization residual {resid:.3e} exceeds the tolerance"
            )
        m_check = table[:, :per].T @ (w * x)
        m_dev = float(np.max(np.abs(m_check - m_vec)))
        if m_dev > 1e-10 * max(1.0, float(np.max(np.abs(m_check)))):
            raise ValidationError(
                "moment vector is inconsistent with the table"
            )
        for arr in (table, L, D, m_vec):
            arr.flags.writeable = False
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "m_vec", m_vec)

    @property
    def g(self) -> int:
        return self.L.shape[0] - 1

    @property
    def depth(self) -> int:
        return self.table.shape[1] // self.L.shape[0]


def tau_basis(
    measure: DiscreteMeasure,
    d: DeltaData,
    c_list=None,
    depth: int = 2,
) -> RationalBasis:
    """Orthonormal rational basis of the measure, depth blocks deep.

    The first block orthogonalizes the raw rational system through
    factor_L; block m multiplies block m - 1 pointwise by the comb map
    values and re-orthogonalizes, so block m spans the map-power
    multiples of the raw system.  Leading coefficients stay positive.
    Raises NumericalError when the measure cannot support the requested
    depth.
    """

    if int(depth) != depth or depth < 1:
        raise ValidationError("depth must be a positive integer")
    depth = int(depth)
    cs = d.cs() if c_list is None else _checked_poles(c_list)
    if c_list is not None and (
        len(cs) != d.g
        or float(np.max(np.abs(np.sort(cs) - np.sort(d.cs())))) > 1e-12
    ):
        raise ValidationError("poles must match the poles of the map")
    per = d.g + 1
    if depth * per > measure.n_points:
        raise ValidationError(
            f"depth {depth} needs {depth * per} support points, "
            f"the measure has {measure.n_points}"
        )
    D = gram_D(measure, cs)
    L = factor_L(D)
    pts = measure.points
    wts = measure.weights
    cols = list((_raw_columns(pts, cs) @ L).T)
    dvals = np.asarray(eval_delta(d, pts), dtype=float)
    for idx in range(per, depth * per):
        cand = dvals * cols[idx - per]
        cand_norm = float(np.sqrt(np.sum(wts * cand * cand)))
        vec = cand.copy()
        for _ in range(2):
            for col in cols:
                vec = vec - float(np.sum(wts * col * vec)) * col
        rem = float(np.sqrt(np.sum(wts * vec * vec)))
        if rem <= FLAG_RANK_REL * max(cand_norm, 1e-300):
            raise NumericalError(
                f"measure rank exhausted at basis function {idx}; "
                "the support is too small for the requested depth"
            )
        cols.append(vec / rem)
    table = np.column_stack(cols)
    m_vec = table[:, :per].T @ (wts * pts)
    return RationalBasis(measure, table, L, D, m_vec)


def _one_sided_off_pattern(M: np.ndarray, g: int) -> float:
    """Largest entry outside the one-sided GMP pattern.

    Blocks of size g + 1 along the diagonal are free; adjacent blocks
    may couple only through row 0 of the farther block; anything beyond
    adjacent blocks must vanish.
    """

    per = g + 1
    n = M.shape[0]
    worst = 0.0
    for i in range(n):
        bi, si = divmod(i, per)
        for j in range(i + 1, n):
            bj, sj = divmod(j, per)
            if bj == bi:
                continue
            if bj == bi + 1 and sj == 0:
                continue
            worst = max(worst, abs(M[i, j]))
    return worst


def multiplication_matrix(
    rb: RationalBasis, measure: DiscreteMeasure
) -> np.ndarray:
    """Matrix of multiplication by x in the rational basis.

    Entries are integrals of x tau_j tau_k against the measure.  The
    result carries the one-sided GMP pattern: dense blocks on the
    diagonal, adjacent blocks coupled through row 0 of the farther
    block only.  Raises NumericalError when the pattern degrades.
    """

    if (
        measure.n_points != rb.measure.n_points
        or float(np.max(np.abs(measure.points - rb.measure.points))) > 1e-12
        or float(np.max(np.abs(measure.weights - rb.measure.weights))) > 1e-12
    ):
        raise ValidationError("measure does not match the basis measure")
    if rb.depth < 2:
        raise ValidationError(
            "multiplication needs a basis at least two blocks deep"
        )
    T = rb.table
    wx = rb.measure.weights * rb.measure.points
    M = T.T @ (wx[:, None] * T)
    M = 0.5 * (M + M.T)
    worst = _one_sided_off_pattern(M, rb.g)
    if worst > ONE_SIDED_PATTERN_TOL * max(1.0, float(np.max(np.abs(M)))):
        raise NumericalError(
            f"multiplication matrix lost the block pattern: "
            f"off-pattern entry {worst:.3e}"
        )
    return M


def reflected_window(window: JacobiWindow) -> JacobiWindow:
    """Jacobi window of the same operator with site n sent to -1 - n."""

    size = window.size
    a_ref = np.empty(size)
    b_ref = np.empty(size)
    a_ref[0] = 1.0
    for k in range(1, size):
        a_ref[k] = window.a_at(1 + window.n_max - k)
    for k in range(size):
        b_ref[k] = window.b_at(window.n_max - k)
    return JacobiWindow(a_ref, b_ref, n_min=-1 - window.n_max)


def kappa_minus(window: JacobiWindow, c: float):
    """Mirror resolvent vector pinned at c, supported on sites <= -1.

    Reflects the window through the -1 | 0 split, takes the kappa vector
    there, and maps it back, so the angle is built from the left
    resolvent and all margin and norm validations are inherited.
    """

    k_ref = kappa(reflected_window(window), c)
    return k_ref.vec[::-1]


def _gs_append(basis: list, cand: np.ndarray, where: str) -> np.ndarray:
    """Two-pass orthogonalization of cand against the running basis."""

    cand_norm = float(np.linalg.norm(cand))
    vec = cand.copy()
    for _ in range(2):
        for col in basis:
            vec = vec - float(col @ vec) * col
    rem = float(np.linalg.norm(vec))
    if rem <= FLAG_RANK_REL * max(cand_norm, 1e-300):
        raise NumericalError(
            f"flag vectors became linearly dependent at {where}; "
            "the Gram matrix of the flag is numerically singular"
        )
    vec = vec / rem
    basis.append(vec)
    return vec


def jacobi_to_gmp(
    window: JacobiWindow,
    d: DeltaData,
    c_list=None,
    n_blocks: int = 5,
) -> GmpWindow:
    """GMP window of the Jacobi operator in the pole-pinned basis.

    Orthogonalizes the flag seeded by the basis vector at site -1, the
    mirror resolvent vectors pinned at the map poles on the left of the
    split, the plain ones on the right, and the basis vector at site 0,
    then continues block by block both ways by applying the mapped
    operator to the previous block; the triangular coupling structure
    makes each continuation step produce exactly one new direction.
    The matrix of the operator in the resulting orthonormal system is
    read off as GMP blocks, with signs gauged so every coupling entry
    is nonnegative.
    """

    if int(n_blocks) != n_blocks or n_blocks < 3:
        raise ValidationError("at least three blocks are required")
    n_blocks = int(n_blocks)
    cs = d.cs() if c_list is None else _checked_poles(c_list)
    if len(cs) != d.g or (
        float(np.max(np.abs(np.sort(cs) - np.sort(d.cs())))) > 1e-12
    ):
        raise ValidationError("poles must match the poles of the map")
    g = d.g
    per = g + 1
    k_lo = -(n_blocks // 2) - 1
    k_hi = k_lo + n_blocks
    n_sites = window.size
    if n_sites < (n_blocks + 2) * per:
        raise WindowError(
            f"window with {n_sites} sites cannot host {n_blocks} blocks "
            f"of size {per} plus boundary"
        )

    dense = window.dense()
    eigs = numkit.sym_eigen(dense)[0]
    diam = float(eigs[-1] - eigs[0])
    for c in cs:
        gap = float(np.min(np.abs(eigs - c)))
        if gap <= SPECTRAL_MARGIN_REL * diam:
            raise SpectrumProximityError(
                f"pole {c} lies within {gap:.3e} of the window spectrum"
            )

    mapped = d.lambda0 * dense + d.c0 * np.eye(n_sites)
    for ck, lk in zip(d.cs(), d.lams()):
        mapped = mapped + lk * numkit.solve(
            ck * np.eye(n_sites) - dense, np.eye(n_sites)
        )
    mapped = 0.5 * (mapped + mapped.T)

    e_m1 = np.zeros(n_sites)
    e_m1[window.pos(-1)] = 1.0
    e_0 = np.zeros(n_sites)
    e_0[window.pos(0)] = 1.0

    basis: list = [e_m1]
    slot: dict = {(-1, g): e_m1}
    # the mirror flag nests from the far end: orthogonalize last pole first
    for m in range(g - 1, -1, -1):
        slot[(-1, m)] = _gs_append(
            basis, kappa_minus(window, cs[m]), f"block -1 slot {m}"
        )
    for m, c in enumerate(cs):
        slot[(0, m)] = _gs_append(basis, kappa(window, c).vec, f"block 0 slot {m}")
    slot[(0, g)] = _gs_append(basis, e_0, f"block 0 slot {g}")
    for j in range(1, k_hi + 1):
        for m in range(per):
            slot[(j, m)] = _gs_append(
                basis, mapped @ slot[(j - 1, m)], f"block {j} slot {m}"
            )
    for j in range(-2, k_lo - 1, -1):
        for m in range(g, -1, -1):
            slot[(j, m)] = _gs_append(
                basis, mapped @ slot[(j + 1, m)], f"block {j} slot {m}"
            )

    order = [(j, m) for j in range(k_lo, k_hi + 1) for m in range(per)]
    Q = np.column_stack([slot[key] for key in order])
    amat = Q.T @ (dense @ Q)
    amat = 0.5 * (amat + amat.T)

    def idx(j: int, m: int) -> int:
        return (j - k_lo) * per + m

    n_flag = amat.shape[0]
    scale = max(1.0, float(np.max(np.abs(amat))))
    worst = 0.0
    for i in range(n_flag):
        bi, si = divmod(i, per)
        for jcol in range(i + 1, n_flag):
            bj, sj = divmod(jcol, per)
            if bj == bi:
                continue
            if bj == bi + 1 and si == g:
                continue
            worst = max(worst, abs(amat[i, jcol]))
    if worst > TWO_SIDED_PATTERN_TOL * scale:
        raise NumericalError(
            f"operator lost the GMP pattern in the flag basis: off-pattern "
            f"entry {worst:.3e}; the Jacobi window is likely too narrow"
        )

    for j in range(k_lo + 1, k_hi + 1):
        row = idx(j - 1, g)
        for m in range(per):
            col = idx(j, m)
            if amat[row, col] < 0.0:
                amat[col, :] = -amat[col, :]
                amat[:, col] = -amat[:, col]

    blocks = []
    c_arr = np.asarray(cs, dtype=float)
    for j in range(k_lo + 1, k_hi + 1):
        sl = slice(idx(j, 0), idx(j, g) + 1)
        p = amat[idx(j - 1, g), sl].copy()
        B = amat[sl, sl]
        q = B[g, :] / p[g]
        blk = GmpBlock(p, q)
        dev = float(np.max(np.abs(build_block_B(blk, c_arr) - B)))
        if dev > READOUT_TOL * scale:
            raise NumericalError(
                f"block {j} readout deviates from the diagonal part by "
                f"{dev:.3e}"
            )
        blocks.append(blk)
    return GmpWindow(tuple(blocks), tuple(c_arr), j_min=k_lo + 1)


def _spectral_measure(mat: np.ndarray, vec: np.ndarray) -> DiscreteMeasure:
    """Spectral measure of a symmetric matrix at a unit vector."""

    vals, vecs = numkit.sym_eigen(mat)
    wts = (vecs.T @ vec) ** 2
    span = max(1.0, float(vals[-1] - vals[0]))
    pts_out = []
    wts_out = []
    i = 0
    n = vals.size
    while i < n:
        j = i + 1
        while j < n and vals[j] - vals[j - 1] <= MERGE_REL * span:
            j += 1
        w = float(np.sum(wts[i:j]))
        if w > 0.0:
            pts_out.append(float(np.sum(vals[i:j] * wts[i:j])) / w)
            wts_out.append(w)
        i = j
    pts_arr = np.asarray(pts_out)
    wts_arr = np.asarray(wts_out)
    keep = wts_arr > WEIGHT_FLOOR_REL * float(np.max(wts_arr))
    pts_arr = pts_arr[keep]
    wts_arr = wts_arr[keep]
    total = float(np.sum(wts_arr))
    if total <= 0.0:
        raise NumericalError("spectral measure has no mass")
    return DiscreteMeasure(pts_arr, wts_arr / total)


def gmp_to_jacobi_measure(w: GmpWindow) -> JacobiWindow:
    """Jacobi window matching the two half-line resolvents of a GMP window.

    The plus half is tridiagonalized from the spectral measure of the
    nonnegative-block truncation at the normalized image of the site
    left of the split; the minus half from the spectral measure of the
    complementary truncation at that site itself.  The crossing bond
    a(0) equals the norm of the first coupling vector exactly.
    """

    if w.j_min > -1 or w.j_max < 0:
        raise WindowError("window must contain blocks -1 and 0")
    g = w.g
    per = g + 1
    A = assemble_dense(w)
    i_split = w.scalar_index(0, 0)
    i_em1 = w.scalar_index(-1, g)
    a0 = float(np.linalg.norm(w.block(0).p))

    v_plus = A[i_split:, i_em1] / a0
    dev = abs(float(np.linalg.norm(v_plus)) - 1.0)
    if dev > 1e-12:
        raise NumericalError(
            f"starting vector norm deviates from 1 by {dev:.3e}"
        )
    meas_plus = _spectral_measure(A[i_split:, i_split:], v_plus)
    n_plus = A.shape[0] - i_split
    depth_plus = min(n_plus // per - 1, meas_plus.n_points - 1)

    e_minus = np.zeros(i_split)
    e_minus[i_em1] = 1.0
    meas_minus = _spectral_measure(A[:i_split, :i_split], e_minus)
    depth_minus = min(i_split // per - 1, meas_minus.n_points - 1)
    if depth_plus < 1 or depth_minus < 1:
        raise WindowError(
            "window too narrow to recover a bond on each side of the split"
        )

    jp = lanczos_from_measure(meas_plus, depth_plus)
    jm = lanczos_from_measure(meas_minus, depth_minus)

    n_min = -depth_minus - 1
    b_arr = np.concatenate([jm.b[::-1], jp.b])
    a_arr = np.ones(b_arr.size)
    for n in range(n_min + 1, 0):
        a_arr[n - n_min] = jm.a[-n]
    a_arr[-n_min] = a0
    for n in range(1, depth_plus + 1):
        a_arr[n - n_min] = jp.a[n]
    return JacobiWindow(a_arr, b_arr, n_min=n_min)
