"""Mapped-operator entropy: blocks, identities, diagnostics, densities."""

import numpy as np
import numpy.testing as npt
import pytest

from conftest import make_estar_gapset, make_p1_window

from gmpflow.errors import (
    SpectrumProximityError,
    ValidationError,
    WindowError,
)
from gmpflow.finitegap import DeltaData, GapSet, delta_from_gaps
from gmpflow.flow import FlowTrajectory, flow_run, jacobi_flow_step
from gmpflow.gmp import GmpBlock, GmpWindow, assemble_dense
from gmpflow.isospectral import solve_is_point
from gmpflow.ks import (
    DeltaBlocks,
    H_plus_partial,
    KsFunctionalReport,
    assemble_wrapped,
    column_term,
    delta_J_H,
    delta_of_gmp,
    density_identity,
    functional_report,
    h_term,
    ks_diagnostics,
    telescoping_check,
)


def estar_delta() -> DeltaData:
    return delta_from_gaps(make_estar_gapset())


def decaying_window(eps: float = 0.03, n_blocks: int = 21, rate: float = 0.5):
    """Near-periodic window whose perturbation decays away from block 0."""
    half = n_blocks // 2
    blocks = [
        GmpBlock(
            [np.sqrt(2.0) + eps * rate ** abs(j), 0.5],
            [eps / 3.0 * 0.7 ** abs(j), 0.0],
        )
        for j in range(-half, n_blocks - half)
    ]
    return GmpWindow(blocks, (0.0,), j_min=-half)


def bumped_window(n_blocks: int = 27):
    """Exactly periodic window except for one modified central block."""
    half = n_blocks // 2
    p1 = GmpBlock([np.sqrt(2.0), 0.5], [0.0, 0.0])
    blocks = [p1] * n_blocks
    blocks[half] = GmpBlock([np.sqrt(2.0) + 0.08, 0.5], [0.05, 0.0])
    return GmpWindow(blocks, (0.0,), j_min=-half)


def twogap_delta() -> DeltaData:
    return delta_from_gaps(GapSet(-2.0, 2.0, ((-1.2, -0.4), (0.5, 1.1))))


def twogap_surface_block(d: DeltaData) -> GmpBlock:
    seed = GmpBlock([0.4, 0.4, 1.0 / d.lambda0], [0.0, 0.0, 0.0])
    return solve_is_point(d, seed).block


class TestAssembleWrapped:
    def test_interior_matches_open_assembly(self, p1_window):
        mat = assemble_wrapped(p1_window)
        open_mat = assemble_dense(p1_window)
        n = mat.shape[0]
        first = p1_window.blocks[0]
        npt.assert_array_equal(mat[n - 1, 0:2], first.p)
        npt.assert_array_equal(mat[0:2, n - 1], first.p)
        interior = mat.copy()
        interior[n - 1, 0:2] = 0.0
        interior[0:2, n - 1] = 0.0
        npt.assert_array_equal(interior, open_mat)

    def test_needs_three_blocks(self, p1_block):
        short = GmpWindow([p1_block, p1_block], (0.0,), j_min=0)
        with pytest.raises(ValidationError, match="three"):
            assemble_wrapped(short)


class TestDeltaOfGmp:
    def test_periodic_window_maps_to_two_shift(self):
        w = make_p1_window(n_blocks=21, j_min=-10)
        db = delta_of_gmp(w, estar_delta(), margin=3)
        for j in range(db.j_lo, db.j_hi + 2):
            npt.assert_allclose(db.v(j), np.eye(2), atol=1e-8)
        for j in range(db.j_lo, db.j_hi + 1):
            npt.assert_allclose(db.w(j), np.zeros((2, 2)), atol=1e-8)

    def test_two_gap_periodic_window_maps_to_two_shift(self):
        d = twogap_delta()
        blk = twogap_surface_block(d)
        w = GmpWindow([blk] * 15, d.cs(), j_min=-7)
        db = delta_of_gmp(w, d, margin=3)
        for j in range(db.j_lo, db.j_hi + 2):
            npt.assert_allclose(db.v(j), np.eye(3), atol=1e-8)
        for j in range(db.j_lo, db.j_hi + 1):
            npt.assert_allclose(db.w(j), np.zeros((3, 3)), atol=1e-8)

    def test_trusted_range_bookkeeping(self):
        w = decaying_window()
        db = delta_of_gmp(w, estar_delta(), margin=4)
        assert db.j_lo == w.j_min + 4
        assert db.j_hi == w.j_max - 4
        assert len(db.v_blocks) == db.j_hi - db.j_lo + 2
        assert len(db.w_blocks) == db.j_hi - db.j_lo + 1

    def test_matches_independent_dense_evaluation(self):
        w = decaying_window()
        d = estar_delta()
        db = delta_of_gmp(w, d, margin=3)
        dense = assemble_wrapped(w)
        n = dense.shape[0]
        mapped = d.lambda0 * dense + d.c0 * np.eye(n)
        for ck, lk in d.poles:
            mapped += lk * np.linalg.solve(ck * np.eye(n) - dense, np.eye(n))

        def base(j):
            return (j - w.j_min) * 2

        for j in range(db.j_lo, db.j_hi + 1):
            npt.assert_allclose(
                db.v(j),
                mapped[base(j - 1) : base(j), base(j) : base(j + 1)],
                atol=1e-8,
            )
            npt.assert_allclose(
                db.w(j),
                mapped[base(j) : base(j + 1), base(j) : base(j + 1)],
                atol=1e-8,
            )

    def test_coupling_blocks_lower_triangular(self):
        db = delta_of_gmp(decaying_window(), estar_delta(), margin=3)
        for j in range(db.j_lo, db.j_hi + 2):
            assert np.max(np.abs(np.triu(db.v(j), 1))) < 1e-9

    def test_coupling_diagonals_positive(self):
        db = delta_of_gmp(decaying_window(), estar_delta(), margin=3)
        for j in range(db.j_lo, db.j_hi + 2):
            assert np.all(np.diag(db.v(j)) > 0)

    def test_pair_sign_flip_is_invisible(self):
        # flipping (p_0, q_0) of one block conjugates the operator by a
        # diagonal sign matrix; the normalised blocks must not move
        w = decaying_window()
        db = delta_of_gmp(w, estar_delta(), margin=3)
        blocks = list(w.blocks)
        k = 12
        blk = blocks[k]
        blocks[k] = GmpBlock([-blk.p[0], blk.p[1]], [-blk.q[0], blk.q[1]])
        flipped = GmpWindow(blocks, w.c, w.j_min)
        assert np.max(np.abs(assemble_wrapped(flipped) - assemble_wrapped(w))) > 0.1
        dbf = delta_of_gmp(flipped, estar_delta(), margin=3)
        for j in range(db.j_lo, db.j_hi + 2):
            npt.assert_allclose(dbf.v(j), db.v(j), atol=1e-10)
        for j in range(db.j_lo, db.j_hi + 1):
            npt.assert_allclose(dbf.w(j), db.w(j), atol=1e-10)

    def test_pole_mismatch_rejected(self):
        w = decaying_window()
        off = DeltaData(2.0, 0.0, ((0.4, 4.0),))
        with pytest.raises(ValidationError, match="poles differ"):
            delta_of_gmp(w, off, margin=3)

    def test_genus_mismatch_rejected(self):
        with pytest.raises(ValidationError, match="genus"):
            delta_of_gmp(decaying_window(), twogap_delta(), margin=3)

    def test_margin_floor(self):
        with pytest.raises(ValidationError, match="margin"):
            delta_of_gmp(decaying_window(), estar_delta(), margin=2)

    def test_margin_can_exhaust_window(self):
        w = make_p1_window(n_blocks=9, j_min=-4)
        with pytest.raises(WindowError, match="trusted"):
            delta_of_gmp(w, estar_delta(), margin=5)

    def test_shift_on_spectrum_rejected(self):
        # zero leading p decouples the gap slots, so the pole position
        # becomes an exact eigenvalue of the wrapped operator
        d = DeltaData(2.0, 0.0, ((0.3, 4.0),))
        bad = GmpBlock([0.0, 0.5], [0.0, 0.0])
        w = GmpWindow([bad] * 15, (0.3,), j_min=-7)
        with pytest.raises(SpectrumProximityError, match="shift"):
            delta_of_gmp(w, d, margin=3)


class TestDeltaBlocksType:
    def test_accessors_reject_outside_range(self):
        db = delta_of_gmp(make_p1_window(n_blocks=15, j_min=-7), estar_delta(), 3)
        with pytest.raises(WindowError):
            db.v(db.j_lo - 1)
        with pytest.raises(WindowError):
            db.w(db.j_hi + 1)
        assert db.v(db.j_hi + 1).shape == (2, 2)

    def test_block_count_must_match_range(self):
        eye = np.eye(2)
        with pytest.raises(ValidationError, match="count"):
            DeltaBlocks(
                g=1,
                j_lo=0,
                j_hi=1,
                v_blocks=(eye.copy(), eye.copy()),
                w_blocks=(np.zeros((2, 2)), np.zeros((2, 2))),
            )

    def test_blocks_are_frozen(self):
        db = delta_of_gmp(make_p1_window(n_blocks=15, j_min=-7), estar_delta(), 3)
        with pytest.raises(ValueError):
            db.v(0)[0, 0] = 5.0


class TestHTerm:
    def test_two_shift_pattern_is_exact_zero(self):
        assert h_term(np.eye(2), np.zeros((2, 2)), np.eye(2)) == 0.0

    def test_reference_value(self):
        value = h_term(2.0 * np.eye(2), np.zeros((2, 2)), np.eye(2))
        npt.assert_allclose(value, 3.0 - np.log(4.0), rtol=1e-13)

    def test_nonnegative_on_positive_determinant_samples(self):
        rng = np.random.default_rng(404)
        worst = np.inf
        for _ in range(10_000):
            v0 = np.tril(0.6 * rng.standard_normal((2, 2)), -1) + np.diag(
                np.exp(0.5 * rng.standard_normal(2))
            )
            v1 = np.tril(0.6 * rng.standard_normal((2, 2)), -1) + np.diag(
                np.exp(0.5 * rng.standard_normal(2))
            )
            raw = 0.5 * rng.standard_normal((2, 2))
            worst = min(worst, h_term(v0, raw + raw.T, v1))
        assert worst >= -1e-10

    def test_positive_determinant_required(self):
        flipped = np.diag([1.0, -1.0])
        with pytest.raises(ValidationError, match="determinant"):
            h_term(flipped, np.zeros((2, 2)), np.eye(2))

    def test_symmetric_diagonal_block_required(self):
        skew = np.array([[0.0, 1.0], [-1.0, 0.0]])
        with pytest.raises(ValidationError, match="symmetric"):
            h_term(np.eye(2), skew, np.eye(2))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError, match="shape"):
            h_term(np.eye(2), np.zeros((3, 3)), np.eye(2))


class TestHPlusPartial:
    def test_periodic_window_sums_to_zero(self):
        db = delta_of_gmp(make_p1_window(n_blocks=21, j_min=-10), estar_delta(), 3)
        assert abs(H_plus_partial(db, 0, 3)) < 1e-8

    def test_single_block_matches_term(self):
        db = delta_of_gmp(decaying_window(), estar_delta(), margin=3)
        npt.assert_allclose(
            H_plus_partial(db, 0, 0),
            h_term(db.v(0), db.w(0), db.v(1)),
            rtol=1e-13,
        )

    def test_monotone_under_extension(self):
        db = delta_of_gmp(decaying_window(), estar_delta(), margin=3)
        shorter = H_plus_partial(db, 0, 3)
        longer = H_plus_partial(db, 0, 4)
        assert longer >= shorter - 1e-10

    def test_range_outside_trusted_rejected(self):
        db = delta_of_gmp(decaying_window(), estar_delta(), margin=3)
        with pytest.raises(WindowError, match="trusted"):
            H_plus_partial(db, db.j_lo - 1, 0)

    def test_empty_range_is_zero(self):
        db = delta_of_gmp(decaying_window(), estar_delta(), margin=3)
        assert H_plus_partial(db, 2, 1) == 0.0


class TestColumnTerm:
    def test_block_row_decomposes_into_columns(self):
        db = delta_of_gmp(decaying_window(), estar_delta(), margin=3)
        total = column_term(db, 0) + column_term(db, 1)
        npt.assert_allclose(total, H_plus_partial(db, 0, 0), rtol=1e-12)

    def test_periodic_column_vanishes(self):
        db = delta_of_gmp(make_p1_window(n_blocks=21, j_min=-10), estar_delta(), 3)
        assert abs(column_term(db, -1)) < 1e-10

    def test_columns_nonnegative(self):
        db = delta_of_gmp(decaying_window(), estar_delta(), margin=3)
        lo = db.j_lo * 2
        hi = db.j_hi * 2 + 1
        assert min(column_term(db, s) for s in range(lo, hi + 1)) >= -1e-10

    def test_outside_trusted_range_rejected(self):
        db = delta_of_gmp(decaying_window(), estar_delta(), margin=3)
        with pytest.raises(WindowError, match="column"):
            column_term(db, (db.j_hi + 1) * 2)


class TestDeltaJH:
    def test_periodic_window_has_zero_drop(self):
        assert abs(delta_J_H(make_p1_window(21, j_min=-10), estar_delta())) < 1e-9

    def test_drop_is_nonnegative(self):
        rng = np.random.default_rng(77)
        for _ in range(5):
            half = 9
            blocks = [
                GmpBlock(
                    [
                        np.sqrt(2.0)
                        + 0.05 * rng.standard_normal() * 0.6 ** abs(j),
                        0.5,
                    ],
                    [0.04 * rng.standard_normal() * 0.6 ** abs(j), 0.0],
                )
                for j in range(-half, half + 1)
            ]
            w = GmpWindow(blocks, (0.0,), j_min=-half)
            assert delta_J_H(w, estar_delta()) >= -1e-10

    def test_one_step_drop_identity(self):
        # partial sum over blocks 0..J of the mapped window equals the
        # drop term plus the stepped partial sum, corrected by the
        # entropy share of the last scalar column of the stepped range
        w = bumped_window()
        d = estar_delta()
        j_top = 4
        db_now = delta_of_gmp(w, d, margin=3)
        db_next = delta_of_gmp(jacobi_flow_step(w), d, margin=3)
        s_last = (j_top + 1) * 2 - 1
        lhs = H_plus_partial(db_now, 0, j_top)
        rhs = (
            delta_J_H(w, d)
            + H_plus_partial(db_next, 0, j_top)
            - column_term(db_next, s_last)
        )
        assert abs(lhs - rhs) < 1e-8
        assert lhs > 1e-3

    def test_two_gap_one_step_drop_identity(self):
        d = twogap_delta()
        blk = twogap_surface_block(d)
        rng = np.random.default_rng(7)
        blocks = []
        for j in range(-10, 11):
            dp = 0.02 * rng.standard_normal(3) * 0.6 ** abs(j)
            dq = 0.02 * rng.standard_normal(3) * 0.6 ** abs(j)
            blocks.append(GmpBlock(blk.p + dp, blk.q + dq))
        w = GmpWindow(blocks, d.cs(), j_min=-10)
        j_top = 2
        db_now = delta_of_gmp(w, d, margin=3)
        db_next = delta_of_gmp(jacobi_flow_step(w), d, margin=3)
        s_last = (j_top + 1) * 3 - 1
        lhs = H_plus_partial(db_now, 0, j_top)
        rhs = (
            delta_J_H(w, d)
            + H_plus_partial(db_next, 0, j_top)
            - column_term(db_next, s_last)
        )
        assert abs(lhs - rhs) < 1e-8

    def test_window_too_narrow(self):
        with pytest.raises(WindowError):
            delta_J_H(make_p1_window(7, j_min=-3), estar_delta())


class TestTelescoping:
    def test_flow_run_matches_single_shift(self):
        report = telescoping_check(decaying_window(0.05, 27), estar_delta(), 5)
        assert report["residual"] < 1e-9
        assert report["det_residual"] < 1e-10
        assert len(report["left_terms"]) == 5
        assert len(report["right_terms"]) == 5
        assert report["h_first"] > 0

    def test_constant_window_is_shift_invariant(self):
        pert = GmpBlock([np.sqrt(2.0) + 0.05, 0.5], [0.02, 0.0])
        w = GmpWindow([pert] * 23, (0.0,), j_min=-11)
        report = telescoping_check(w, estar_delta(), 4)
        npt.assert_allclose(report["left_terms"], report["right_terms"], atol=1e-12)

    def test_periodic_window_all_terms_vanish(self):
        report = telescoping_check(make_p1_window(23, j_min=-11), estar_delta(), 3)
        assert report["residual"] < 1e-12
        assert abs(report["h_first"]) < 1e-10
        assert max(abs(t) for t in report["left_terms"]) < 1e-10

    def test_accumulated_drops_match_partial_sum_decrease(self):
        w = bumped_window()
        d = estar_delta()
        n, j_top = 4, 2
        s_last = (j_top + 1) * 2 - 1
        states = [w]
        for _ in range(n):
            states.append(jacobi_flow_step(states[-1]))
        dbs = [delta_of_gmp(st, d, margin=3) for st in states]
        drop = H_plus_partial(dbs[0], 0, j_top) - H_plus_partial(dbs[n], 0, j_top)
        accumulated = sum(column_term(dbs[m + 1], -1) for m in range(n)) - sum(
            column_term(dbs[m], s_last) for m in range(1, n + 1)
        )
        assert abs(drop - accumulated) < 1e-7

    def test_step_floor(self):
        with pytest.raises(ValidationError, match="one step"):
            telescoping_check(decaying_window(), estar_delta(), 0)


class TestFunctionalReport:
    def test_shapes_and_partial_sums(self):
        report = functional_report(decaying_window(0.05, 27), estar_delta(), 3)
        span = report.j_hi - report.j_lo + 1
        assert report.h_spatial.shape == (span,)
        npt.assert_allclose(report.spatial_partials, np.cumsum(report.h_spatial))
        assert report.h_origin.shape == (4,)
        assert report.step_drops.shape == (3,)
        npt.assert_allclose(report.drop_partials, np.cumsum(report.step_drops))

    def test_drops_match_pointwise_evaluation(self):
        w = decaying_window(0.05, 27)
        d = estar_delta()
        report = functional_report(w, d, 3)
        state = w
        for m in range(3):
            npt.assert_allclose(
                report.step_drops[m], delta_J_H(state, d), rtol=1e-10
            )
            state = jacobi_flow_step(state)

    def test_entropy_floor_enforced(self):
        with pytest.raises(ValidationError, match="floor"):
            KsFunctionalReport(
                j_lo=0,
                j_hi=0,
                h_spatial=np.array([-1.0]),
                spatial_partials=np.array([-1.0]),
                h_origin=np.array([0.0]),
                step_drops=np.zeros(0),
                drop_partials=np.zeros(0),
            )

    def test_zero_steps(self):
        report = functional_report(decaying_window(), estar_delta(), 0)
        assert report.step_drops.shape == (0,)
        assert report.h_origin.shape == (1,)


class TestKsDiagnostics:
    def test_periodic_surface_stays_silent(self):
        t = flow_run(make_p1_window(13, j_min=-6), 4)
        diag = ks_diagnostics(t, estar_delta())
        for arr in diag.values.values():
            assert np.max(np.abs(arr)) < 1e-9
        assert not any(diag.diverging.values())

    def test_decaying_perturbation_stays_bounded(self):
        t = flow_run(decaying_window(0.01, 19), 6)
        diag = ks_diagnostics(t, estar_delta())
        assert not any(diag.diverging.values())
        for arr in diag.sq_partials.values():
            assert np.all(np.isfinite(arr))

    def test_growing_coefficients_flagged(self):
        states = tuple(
            GmpWindow(
                [GmpBlock([np.sqrt(2.0) + 0.2 * m, 0.5], [0.0, 0.0])] * 5,
                (0.0,),
                j_min=-2,
            )
            for m in range(9)
        )
        t = FlowTrajectory(
            states=states, a_out=np.zeros(9), b_out=np.zeros(9), diagnostics=()
        )
        diag = ks_diagnostics(t, estar_delta())
        assert diag.diverging["lambda_gap"]
        assert not diag.diverging["p_next"]

    def test_partial_sums_are_squared_cumsums(self):
        t = flow_run(decaying_window(0.02, 19), 5)
        diag = ks_diagnostics(t, estar_delta())
        for name, arr in diag.values.items():
            npt.assert_allclose(
                diag.sq_partials[name], np.cumsum(arr**2, axis=0)
            )

    def test_states_need_central_blocks(self):
        lone = GmpWindow(
            [GmpBlock([np.sqrt(2.0), 0.5], [0.0, 0.0])] * 3, (0.0,), j_min=0
        )
        t = FlowTrajectory(
            states=(lone,), a_out=np.zeros(1), b_out=np.zeros(1), diagnostics=()
        )
        with pytest.raises(WindowError, match="blocks"):
            ks_diagnostics(t, estar_delta())

    def test_genus_mismatch_rejected(self):
        t = flow_run(make_p1_window(13, j_min=-6), 2)
        with pytest.raises(ValidationError, match="genus"):
            ks_diagnostics(t, twogap_delta())


class TestDensityIdentity:
    def test_single_pole_closed_form(self):
        report = density_identity([5.0], [1.0], 0.5)
        npt.assert_allclose(report["roots"], [3.0], rtol=1e-12)
        npt.assert_allclose(report["det_w"], 0.5, rtol=1e-12)
        npt.assert_allclose(report["deriv_product"], 0.25, rtol=1e-12)
        assert report["det_w_residual"] < 1e-12
        assert report["deriv_residual"] < 1e-12

    def test_two_pole_identities(self):
        c, lam, y = [0.0, 3.0], [1.0, 1.0], 1.0
        report = density_identity(c, lam, y)
        roots = report["roots"]
        assert roots.shape == (2,)
        assert np.all(np.diff(roots) > 0)
        for x in roots:
            npt.assert_allclose(
                np.sum(np.array(lam) / (np.array(c) - x)), y, atol=1e-9
            )
        assert report["det_w_residual"] < 1e-10
        assert report["deriv_residual"] < 1e-10

    def test_level_sign_places_outer_preimage(self):
        c, lam = [0.0, 3.0], [1.0, 1.0]
        above = density_identity(c, lam, 1.0)
        below = density_identity(c, lam, -1.0)
        assert above["roots"][0] < 0.0
        assert below["roots"][-1] > 3.0

    def test_pole_order_flips_determinant_sign(self):
        fwd = density_identity([0.0, 3.0], [1.0, 1.0], 1.0)
        rev = density_identity([3.0, 0.0], [1.0, 1.0], 1.0)
        npt.assert_allclose(rev["det_w"], -fwd["det_w"], rtol=1e-12)

    def test_zero_level_rejected(self):
        with pytest.raises(ValidationError, match="level zero"):
            density_identity([0.0, 3.0], [1.0, 1.0], 0.0)

    def test_positive_weights_required(self):
        with pytest.raises(ValidationError, match="positive"):
            density_identity([0.0, 3.0], [1.0, -1.0], 1.0)

    def test_distinct_poles_required(self):
        with pytest.raises(ValidationError, match="distinct"):
            density_identity([1.0, 1.0], [1.0, 1.0], 1.0)
