"""Operator assembly and the constrained solver: sparse container contracts,
finite-element ring rows, the first-order coupled system, the divergence-form
operator, hybrid combination, and every solve path."""

import math

import numpy as np
import pytest
import scipy.sparse as sp

from teichpc import (
    SparseOperator,
    assemble_M1,
    assemble_M3,
    assemble_hybrid,
    build_rings,
    diffuse_pcbc,
    solve_constrained,
)
from teichpc.errors import (
    InfeasibleCoefficientError,
    SingularSystemError,
    TeichpcError,
)
from teichpc.operators import glap_row_values, ring_row


def hexagon_ring():
    ang = np.linspace(0, 2 * np.pi, 7)[:-1]
    pts = np.vstack([[0.0, 0.0], np.column_stack([np.cos(ang), np.sin(ang)])])
    return build_rings(pts[None], np.arange(7)[None], [0])[0]


def five_point_laplace(m):
    """Standard 5-point grid Laplacian as a SparseOperator, row-major grid."""
    rows, cols, vals = [], [], []
    def dof(i, j):
        return i * m + j
    for i in range(m):
        for j in range(m):
            rows += [dof(i, j)]
            cols += [dof(i, j)]
            vals += [4.0]
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ii, jj = i + di, j + dj
                if 0 <= ii < m and 0 <= jj < m:
                    rows.append(dof(i, j))
                    cols.append(dof(ii, jj))
                    vals.append(-1.0)
    return SparseOperator(shape=(m * m, m * m), rows=rows, cols=cols, vals=vals)


def grid_boundary_constraints(m, g):
    out = []
    for i in range(m):
        for j in range(m):
            if i in (0, m - 1) or j in (0, m - 1):
                out.append((i * m + j, g(j / (m - 1), i / (m - 1))))
    return out


class TestSparseOperator:
    def test_rejects_nonfinite_entries(self):
        with pytest.raises(TeichpcError, match="NaN/Inf"):
            SparseOperator((2, 2), [0], [0], [np.nan])
        with pytest.raises(TeichpcError, match="NaN/Inf"):
            SparseOperator((2, 2), [0, 1], [0, 1], [1.0, np.inf])

    def test_duplicate_entries_sum(self):
        op = SparseOperator((2, 2), [0, 0, 1], [1, 1, 0], [2.0, 3.0, 1.0])
        m = op.tocsr()
        assert m[0, 1] == 5.0
        assert m[1, 0] == 1.0

    def test_csr_roundtrip(self):
        rng = np.random.default_rng(0)
        m = sp.random(20, 20, density=0.2, random_state=7, format="csr")
        op = SparseOperator.from_csr(m, constraints=((0, 1.0),))
        assert op.constraints == ((0, 1.0),)
        assert np.abs(op.tocsr() - m).max() == 0.0

    def test_dump_format(self, tmp_path):
        op = SparseOperator((2, 2), [0, 1], [1, 0], [2.5, -1.0])
        p = tmp_path / "op.csv"
        op.dump(p)
        lines = p.read_text().splitlines()
        assert lines[0] == "row,col,value"
        assert lines[1] == "0,1,2.5"
        assert lines[2] == "1,0,-1"


class TestRings:
    def test_hexagon_weights_match_cotangent_formula(self):
        # regular hexagon of unit edge: every incident angle is 60 degrees,
        # so each neighbor weight is 2*(cot 60 + cot 60) = 4/sqrt(3)
        ring = hexagon_ring()
        cols, vals = ring_row(ring, np.tile(np.eye(2), (7, 1, 1)))
        w = dict(zip(cols.tolist(), vals.tolist()))
        for j in range(1, 7):
            assert w[j] == pytest.approx(4.0 / math.sqrt(3.0), abs=1e-12)
        assert w[0] == pytest.approx(-24.0 / math.sqrt(3.0), abs=1e-12)

    def test_row_sum_zero_and_linear_annihilation(self, unit_setup):
        cloud, nbrs, charts, cycle, sten, rings = unit_setup
        f = 2.0 * cloud.points[:, 0] - cloud.points[:, 1] + 0.7
        amats = np.tile(np.eye(2), (cloud.n, 1, 1))
        for b in cycle[:20]:
            cols, vals = ring_row(rings[int(b)], amats)
            assert abs(vals.sum()) < 1e-12 * np.abs(vals).max()
            # boundary rings are open fans: rigid chart motion keeps f linear
            # but only a closed ring integrates grad(hat) to zero, so allow
            # the boundary-flux term and check the interior case separately
        interior = np.setdiff1d(np.arange(cloud.n), cycle)[:20]
        irings = build_rings(charts.coords, nbrs.idx, interior)
        for i in interior:
            cols, vals = ring_row(irings[int(i)], amats)
            assert abs(vals @ f[cols]) < 1e-9 * np.abs(vals).max()

    def test_anisotropic_matrix_enters_bilinearly(self):
        ring = hexagon_ring()
        a1 = np.tile(2.0 * np.eye(2), (7, 1, 1))
        _, v1 = ring_row(ring, np.tile(np.eye(2), (7, 1, 1)))
        _, v2 = ring_row(ring, a1)
        assert np.allclose(v2, 2.0 * v1)

    def test_collinear_patch_rejected(self):
        t = np.linspace(0, 1, 7)
        pts = np.column_stack([t, 2 * t])
        with pytest.raises(TeichpcError, match="ring"):
            build_rings(pts[None], np.arange(7)[None], [0])

    def test_ring_fields_consistent(self, unit_setup):
        _, _, _, cycle, _, rings = unit_setup
        for b in cycle[:10]:
            ring = rings[int(b)]
            assert ring.center == int(b)
            assert (ring.tri_slots[:, 0] == 0).all()
            assert (ring.areas > 0).all()
            assert ring.tri_global.shape == ring.tri_slots.shape


class TestDivergenceRows:
    def test_zero_coefficient_rows_see_laplacian(self, unit_setup):
        cloud, _, _, _, sten, _ = unit_setup
        vals = glap_row_values(sten, np.zeros(cloud.n, dtype=complex))
        f = cloud.points[:, 0] ** 2 + cloud.points[:, 1] ** 2
        got = np.einsum("nk,nk->n", vals, f[sten.idx])
        assert np.abs(got - 4.0).max() < 1e-6

    def test_rows_annihilate_constants(self, unit_setup):
        cloud, _, _, _, sten, _ = unit_setup
        rng = np.random.default_rng(1)
        mu = 0.3 * (rng.standard_normal(cloud.n)
                    + 1j * rng.standard_normal(cloud.n)) / 3
        vals = glap_row_values(sten, mu)
        assert np.abs(vals.sum(axis=1)).max() < 1e-7


class TestM1:
    def test_shape_and_cauchy_riemann_limit(self, unit_setup):
        cloud, _, _, _, sten, _ = unit_setup
        n = cloud.n
        m1 = assemble_M1(sten, np.zeros(n, dtype=complex))
        assert m1.shape == (2 * n, 2 * n)
        z = cloud.points[:, 0] + 1j * cloud.points[:, 1]
        f = z * z  # analytic and quadratic: rows vanish to rounding
        r = m1.tocsr() @ np.concatenate([f.real, f.imag])
        assert np.abs(r).max() < 1e-8

    def test_rows_vanish_on_generating_map(self, unit_setup):
        # the defining identity: with mu estimated from f by the same
        # stencils, the first-order system annihilates f exactly
        cloud, _, _, _, sten, _ = unit_setup
        z = cloud.points[:, 0] + 1j * cloud.points[:, 1]
        f = z + 0.25 * np.conj(z) + 0.05 * z * z
        mu = diffuse_pcbc(sten, f)
        m1 = assemble_M1(sten, mu)
        r = m1.tocsr() @ np.concatenate([f.real, f.imag])
        assert np.abs(r).max() < 1e-9

    def test_infeasible_field_rejected(self, unit_setup):
        cloud, _, _, _, sten, _ = unit_setup
        with pytest.raises(InfeasibleCoefficientError):
            assemble_M1(sten, np.ones(cloud.n, dtype=complex))


class TestM3:
    def test_shape_and_linear_annihilation(self, unit_setup):
        cloud, _, _, _, sten, rings = unit_setup
        m3 = assemble_M3(sten, rings, np.zeros(cloud.n, dtype=complex),
                         cloud.boundary)
        assert m3.shape == (cloud.n, cloud.n)
        csr = m3.tocsr()
        f = 0.3 * cloud.points[:, 0] + 1.1 * cloud.points[:, 1] - 0.2
        scale = np.abs(csr).max()
        # open boundary fans carry a flux term on linear fields; interior
        # rows must kill them, and every row kills constants (zero row sum)
        interior = np.setdiff1d(np.arange(cloud.n), cloud.boundary)
        assert np.abs((csr @ f)[interior]).max() < 1e-7 * scale
        assert np.abs(csr @ np.ones(cloud.n)).max() < 1e-7 * scale

    def test_missing_ring_rejected(self, unit_setup):
        cloud, _, _, cycle, sten, rings = unit_setup
        partial = {k: v for k, v in rings.items() if k != int(cycle[0])}
        with pytest.raises(TeichpcError, match="missing rings"):
            assemble_M3(sten, partial, np.zeros(cloud.n, dtype=complex), cycle)


@pytest.fixture(scope="module")
def ops(unit_setup):
    cloud, _, _, _, sten, rings = unit_setup
    mu = np.full(cloud.n, 0.1 + 0.05j)
    m1 = assemble_M1(sten, mu)
    m3 = assemble_M3(sten, rings, mu, cloud.boundary)
    return m1, m3


class TestHybrid:
    def test_invalid_gamma_rejected(self, ops):
        m1, m3 = ops
        with pytest.raises(TeichpcError):
            assemble_hybrid(m1, m3, -0.5)
        with pytest.raises(TeichpcError):
            assemble_hybrid(m1, m3, float("nan"))

    def test_gamma_zero_is_first_order_system(self, ops):
        m1, m3 = ops
        hyb = assemble_hybrid(m1, m3, 0.0)
        assert np.abs(hyb.tocsr() - m1.tocsr()).max() == 0.0

    def test_gamma_inf_is_duplicated_divergence_block(self, ops):
        m1, m3 = ops
        hyb = assemble_hybrid(m1, m3, float("inf"))
        want = sp.block_diag([m3.tocsr(), m3.tocsr()], format="csr")
        assert np.abs(hyb.tocsr() - want).max() == 0.0

    def test_finite_gamma_is_entrywise_sum(self, ops):
        m1, m3 = ops
        hyb = assemble_hybrid(m1, m3, 0.5)
        want = m1.tocsr() + 0.5 * sp.block_diag([m3.tocsr(), m3.tocsr()],
                                                format="csr")
        assert np.abs(hyb.tocsr() - want).max() < 1e-15

    def test_dimension_mismatch_rejected(self, ops):
        m1, _ = ops
        wrong = SparseOperator((3, 3), [0], [0], [1.0])
        with pytest.raises(TeichpcError, match="dimensions"):
            assemble_hybrid(m1, wrong, 1.0)


class TestSolveConstrained:
    def test_bilinear_data_solved_exactly(self):
        # x*y is discretely harmonic for the 5-point stencil
        m = 11
        op = five_point_laplace(m)
        cons = grid_boundary_constraints(m, lambda x, y: x * y)
        x = solve_constrained(op, None, cons)
        t = np.linspace(0, 1, m)
        want = np.outer(t, t).ravel()
        assert np.abs(x - want).max() < 1e-9

    def test_direct_info(self):
        op = five_point_laplace(7)
        cons = grid_boundary_constraints(7, lambda x, y: x - y)
        x, info = solve_constrained(op, None, cons, return_info=True)
        assert info["method"] == "direct"
        assert info["fallback"] is False
        assert info["residual"] <= 1e-6

    def test_all_dofs_constrained(self):
        op = SparseOperator((2, 2), [0, 1], [0, 1], [1.0, 1.0])
        x, info = solve_constrained(op, None, [(0, 3.0), (1, -1.0)],
                                    return_info=True)
        assert np.array_equal(x, [3.0, -1.0])
        assert info == {"method": "direct", "fallback": False, "residual": 0.0}

    def test_operator_carries_own_constraints(self):
        m = 7
        base = five_point_laplace(m)
        cons = grid_boundary_constraints(m, lambda x, y: x * y)
        op = SparseOperator(base.shape, base.rows, base.cols, base.vals,
                            constraints=tuple(cons))
        x = solve_constrained(op, None, [])
        t = np.linspace(0, 1, m)
        assert np.abs(x - np.outer(t, t).ravel()).max() < 1e-9

    def test_validation_errors(self):
        op = five_point_laplace(5)
        with pytest.raises(TeichpcError, match="rhs"):
            solve_constrained(op, np.zeros(7), [(0, 0.0)])
        with pytest.raises(TeichpcError, match="distinct"):
            solve_constrained(op, None, [(0, 0.0), (0, 1.0)])
        with pytest.raises(TeichpcError, match="range"):
            solve_constrained(op, None, [(99, 0.0)])

    def test_cache_reused_on_repeat_solve(self):
        m = 9
        op = five_point_laplace(m)
        cons = grid_boundary_constraints(m, lambda x, y: x * x - y * y)
        cache = {}
        x1, i1 = solve_constrained(op, None, cons, return_info=True,
                                   cache=cache)
        assert i1["method"] == "direct"
        x2, i2 = solve_constrained(op, None, cons, return_info=True,
                                   cache=cache)
        assert i2["method"] == "krylov-cached-lu"
        assert i2["residual"] <= 1e-8
        assert np.allclose(x1, x2, atol=1e-10)

    def test_cache_tracks_slowly_drifting_matrix(self):
        m = 9
        op = five_point_laplace(m)
        cons = grid_boundary_constraints(m, lambda x, y: x * y)
        cache = {}
        solve_constrained(op, None, cons, cache=cache)
        drift = sp.identity(m * m, format="csr") * 1e-3
        op2 = SparseOperator.from_csr(op.tocsr() + drift)
        x2, i2 = solve_constrained(op2, None, cons, return_info=True,
                                   cache=cache)
        assert i2["method"] == "krylov-cached-lu"
        ref = solve_constrained(op2, None, cons)
        assert np.allclose(x2, ref, atol=1e-8)

    def test_cache_invalidated_by_constraint_change(self):
        m = 7
        op = five_point_laplace(m)
        cons = grid_boundary_constraints(m, lambda x, y: x * y)
        cache = {}
        solve_constrained(op, None, cons, cache=cache)
        other = [(d, v + 1.0) for d, v in cons[:-1]]  # different dof set
        _, info = solve_constrained(op, None, other, return_info=True,
                                    cache=cache)
        assert info["method"] == "direct"

    def test_consistent_singular_system_falls_back(self):
        op = SparseOperator((2, 2), [0, 0, 1, 1], [0, 1, 0, 1],
                            [1.0, 1.0, 1.0, 1.0])
        x, info = solve_constrained(op, np.array([2.0, 2.0]), [],
                                    return_info=True)
        assert info["method"] == "normal-equations"
        assert info["fallback"] is True
        assert np.allclose(op.tocsr() @ x, [2.0, 2.0], atol=1e-6)

    def test_inconsistent_system_raises(self):
        op = SparseOperator((2, 2), [0, 0, 1, 1], [0, 1, 0, 1],
                            [1.0, 1.0, 1.0, 1.0])
        with pytest.raises(SingularSystemError, match="inconsistent"):
            solve_constrained(op, np.array([1.0, 3.0]), [])
