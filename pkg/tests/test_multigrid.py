import numpy as np
import pytest

from helmsolve.errors import DimensionError
from helmsolve.fields import (
    PRECONDITIONER_SHIFT,
    SlownessModel,
    grid_spacing,
    slowness_model,
)
from helmsolve.multigrid import (
    GridHierarchy,
    Level,
    build_hierarchy,
    coarse_shape,
    coarse_solve,
    jacobi_relax,
    prolong_bilinear,
    restrict_full_weighting,
    restrict_media,
    v_cycle,
)

from conftest import complex_noise


def poisson_model(n, layer_width=4):
    return slowness_model(np.ones((n, n)), gamma0=0.0, layer_width=layer_width, omega=0.0)


def dense_restriction_matrix(shape):
    """Oracle: the restriction matrix assembled row by row from its definition."""
    nx, ny = shape
    nxc, nyc = coarse_shape(shape)
    kernel = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 16.0
    R = np.zeros((nxc * nyc, nx * ny))
    for K1 in range(nxc):
        for K2 in range(nyc):
            row = np.zeros((nx, ny))
            for u in range(3):
                for v in range(3):
                    fx, fy = 2 * K1 + u, 2 * K2 + v
                    if fx < nx and fy < ny:
                        row[fx, fy] = kernel[u, v]
            R[K1 * nyc + K2] = row.ravel()
    return R


class TestTransfers:
    @pytest.mark.parametrize("shape", [(9, 9), (16, 16), (9, 13), (12, 9)])
    def test_restriction_matches_dense_oracle(self, rng, shape):
        R = dense_restriction_matrix(shape)
        f = complex_noise(rng, shape)
        out = restrict_full_weighting(f)
        expected = (R @ f.ravel()).reshape(coarse_shape(shape))
        assert np.linalg.norm(out - expected) <= 1e-12 * np.linalg.norm(expected)

    def test_restriction_of_delta_matches_matrix_row(self, rng):
        # delta at the fine node under an interior coarse node
        shape = (9, 9)
        f = np.zeros(shape, dtype=complex)
        f[5, 5] = 1.0  # coarse node (2, 2)
        R = dense_restriction_matrix(shape)
        out = restrict_full_weighting(f)
        assert np.allclose(out.ravel(), R[:, 5 * 9 + 5], atol=1e-15)

    def test_restriction_preserves_constants(self):
        c = 3.7
        out = restrict_full_weighting(np.full((17, 17), c))
        assert np.allclose(out, c, atol=1e-13)

    def test_restriction_zero(self):
        assert np.all(restrict_full_weighting(np.zeros((9, 9))) == 0)

    def test_restriction_rejects_tiny_grid(self):
        with pytest.raises(DimensionError):
            restrict_full_weighting(np.zeros((3, 3)))

    @pytest.mark.parametrize("shape", [(9, 9), (16, 16), (33, 17)])
    def test_prolongation_matches_dense_oracle(self, rng, shape):
        # P = 4 R^T: duality holds on the full grids by construction.
        R = dense_restriction_matrix(shape)
        c = complex_noise(rng, coarse_shape(shape))
        out = prolong_bilinear(c, shape)
        expected = (4.0 * R.T @ c.ravel()).reshape(shape)
        assert np.linalg.norm(out - expected) <= 1e-12 * np.linalg.norm(expected)

    def test_prolongation_constant_interior(self):
        c = np.full((8, 8), 2.5)
        f = prolong_bilinear(c, (17, 17))
        # interior fine nodes reproduce the constant
        assert np.allclose(f[1:-1, 1:-1], 2.5, atol=1e-13)

    def test_prolongation_zero(self):
        assert np.all(prolong_bilinear(np.zeros((4, 4)), (9, 9)) == 0)

    def test_prolongation_shape_mismatch(self):
        with pytest.raises(DimensionError):
            prolong_bilinear(np.zeros((4, 4)), (12, 12))

    def test_transfer_duality(self, rng):
        # <R f, c> == <f, P c> / 4 for every f, c
        for shape in [(9, 9), (16, 16), (17, 12)]:
            f = complex_noise(rng, shape)
            c = complex_noise(rng, coarse_shape(shape))
            lhs = np.vdot(c, restrict_full_weighting(f))
            rhs = np.vdot(prolong_bilinear(c, shape), f) / 4.0
            assert abs(lhs - rhs) <= 1e-12 * abs(lhs)

    def test_media_restriction_preserves_range(self, rng):
        values = rng.uniform(0.25, 1.0, (16, 16))
        out = restrict_media(values)
        assert out.min() >= 0.25 - 1e-12 and out.max() <= 1.0 + 1e-12
        assert np.allclose(restrict_media(np.full((16, 16), 0.7)), 0.7)


class TestHierarchy:
    def test_level_shapes_halve(self, rng):
        m = slowness_model(rng.uniform(0.25, 1, (129, 129)), layer_width=16)
        hier = build_hierarchy(m)
        assert [lvl.model.shape for lvl in hier.levels] == [
            (129, 129),
            (64, 64),
            (32, 32),
        ]

    def test_coarse_media_are_restrictions(self, rng):
        m = slowness_model(rng.uniform(0.25, 1, (33, 33)), layer_width=4)
        hier = build_hierarchy(m, num_levels=2)
        assert np.allclose(hier.levels[1].model.kappa_sq, restrict_media(m.kappa_sq))
        assert hier.levels[1].model.h == pytest.approx(2 * m.h)

    def test_coarse_operator_is_rediscretised_stencil(self, rng):
        # Structural check: apart from the wall re-alignment term, the coarse
        # operator is apply_helmholtz on the restricted media with H = 2h.
        from helmsolve.fields import apply_helmholtz_array

        m = slowness_model(rng.uniform(0.25, 1, (17, 17)), layer_width=3)
        hier = build_hierarchy(m, num_levels=2)
        lvl = hier.levels[1]
        assert lvl.model.h == pytest.approx(2 * m.h)
        assert lvl.wall is None  # odd parent: walls already aligned
        u = complex_noise(rng, lvl.model.shape)
        assert np.array_equal(lvl.apply(u), apply_helmholtz_array(u, lvl.model, lvl.shift))

    def test_wall_term_on_even_parent_levels(self, rng):
        # 33 -> 16 -> 8: the 8-node level descends from an even-sized parent
        # and carries the re-alignment term on its high edges only.
        from helmsolve.fields import apply_helmholtz_array

        m = slowness_model(rng.uniform(0.25, 1, (33, 33)), layer_width=4)
        hier = build_hierarchy(m, num_levels=3)
        assert hier.levels[1].wall is None
        lvl = hier.levels[2]
        interior = np.ones(lvl.model.shape, bool)
        interior[-1, :] = False
        interior[:, -1] = False
        assert np.all(lvl.wall[interior] == 0)
        assert np.all(lvl.wall[~interior] > 0)
        u = complex_noise(rng, lvl.model.shape)
        stencil_part = apply_helmholtz_array(u, lvl.model, lvl.shift)
        assert np.allclose(lvl.apply(u) - stencil_part, lvl.wall * u)


class TestJacobi:
    def test_exact_solve_when_a_equals_identity(self):
        # On a 1x1 grid with h = 2 and omega = 0 the operator is D = 1,
        # so one undamped sweep returns rhs exactly.
        m = SlownessModel(np.ones((1, 1)), np.zeros((1, 1)), 0.0, 2.0)
        lvl = Level(m, PRECONDITIONER_SHIFT)
        rhs = np.array([[2.0 + 1.0j]])
        out = jacobi_relax(np.zeros((1, 1), complex), rhs, lvl, 1, damping=1.0)
        assert np.allclose(out, rhs, atol=1e-15)

    def test_zero_sweeps_is_identity(self, rng):
        m = poisson_model(17)
        lvl = Level(m, PRECONDITIONER_SHIFT)
        u = complex_noise(rng, (17, 17))
        assert np.array_equal(jacobi_relax(u, np.zeros_like(u), lvl, 0), u)

    def test_damps_highest_frequency_mode(self):
        # One damped sweep on the 17x17 shifted system reduces the energy of
        # the highest Dirichlet mode by less than 0.7.
        n = 17
        m = slowness_model(np.ones((n, n)), gamma0=0.0, layer_width=3)
        lvl = Level(m, PRECONDITIONER_SHIFT)
        i = np.arange(n)
        mode = np.outer(np.sin((n - 2) * np.pi * i / (n - 1)), np.sin((n - 2) * np.pi * i / (n - 1)))
        mode = mode.astype(complex)
        out = jacobi_relax(mode, np.zeros_like(mode), lvl, 1, damping=0.8)
        energy_ratio = np.linalg.norm(out) ** 2 / np.linalg.norm(mode) ** 2
        assert energy_ratio < 0.7


class TestCoarseSolve:
    def test_zero_rhs(self, rng):
        m = poisson_model(9, layer_width=2)
        lvl = Level(m, PRECONDITIONER_SHIFT)
        out = coarse_solve(np.zeros((9, 9), complex), lvl)
        assert np.all(out == 0)

    def test_linearity_of_exact_solve(self, rng):
        # With enough iterations GMRES is the exact inverse, hence linear.
        n = 5
        m = slowness_model(rng.uniform(0.25, 1, (n, n)), layer_width=1)
        lvl = Level(m, PRECONDITIONER_SHIFT)
        b1, b2 = complex_noise(rng, (n, n)), complex_noise(rng, (n, n))
        a, b = 1.3 - 0.2j, -0.4 + 2.1j
        lhs = coarse_solve(a * b1 + b * b2, lvl, iters=n * n)
        rhs = a * coarse_solve(b1, lvl, iters=n * n) + b * coarse_solve(b2, lvl, iters=n * n)
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(lhs)

    def test_against_dense_solve(self, rng):
        # Measured on this 81-unknown shifted system: 20 GMRES-Jacobi
        # iterations reach ~1e-3, 40 reach well below 1e-6.
        from test_fields import dense_helmholtz_matrix

        n = 9
        m = slowness_model(rng.uniform(0.25, 1, (n, n)), layer_width=2)
        lvl = Level(m, PRECONDITIONER_SHIFT)
        b = complex_noise(rng, (n, n))
        A = dense_helmholtz_matrix(m, PRECONDITIONER_SHIFT)
        x_direct = np.linalg.solve(A, b.ravel()).reshape(n, n)
        x20 = coarse_solve(b, lvl, iters=20)
        assert np.linalg.norm(b - lvl.apply(x20)) / np.linalg.norm(b) < 5e-3
        x40 = coarse_solve(b, lvl, iters=40)
        rel_res = np.linalg.norm(b - lvl.apply(x40)) / np.linalg.norm(b)
        assert rel_res < 1e-6
        assert np.linalg.norm(x40 - x_direct) <= 1e-5 * np.linalg.norm(x_direct)


class TestVCycle:
    def test_zero_in_zero_out(self):
        m = poisson_model(17, layer_width=3)
        hier = build_hierarchy(m)
        z = np.zeros((17, 17), complex)
        assert np.all(v_cycle(z, z, hier) == 0)

    def test_scaling_linearity(self, rng):
        m = slowness_model(rng.uniform(0.25, 1, (33, 33)), layer_width=4)
        hier = build_hierarchy(m)
        r = complex_noise(rng, (33, 33))
        a = 2.3 - 1.1j
        lhs = v_cycle(a * r, None, hier)
        rhs = a * v_cycle(r, None, hier)
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(lhs)

    def test_poisson_spectral_radius(self, rng):
        # omega = 0 limit on 33x33: rho(V(1,1)) < 0.25 by power iteration.
        hier = build_hierarchy(poisson_model(33))
        e = complex_noise(rng, (33, 33))
        rho = None
        for _ in range(100):
            e_next = v_cycle(np.zeros_like(e), e, hier)
            rho = np.linalg.norm(e_next) / np.linalg.norm(e)
            e = e_next / np.linalg.norm(e_next)
        assert rho < 0.25

    def test_poisson_contracts_for_50_cycles(self, rng):
        hier = build_hierarchy(poisson_model(33))
        e = complex_noise(rng, (33, 33))
        for _ in range(50):
            e_next = v_cycle(np.zeros_like(e), e, hier)
            ratio = np.linalg.norm(e_next) / np.linalg.norm(e)
            assert ratio <= 0.3
            e = e_next

    def test_grid_mismatch(self, rng):
        hier = build_hierarchy(poisson_model(17, layer_width=3))
        with pytest.raises(DimensionError):
            v_cycle(np.zeros((16, 16), complex), None, hier)
