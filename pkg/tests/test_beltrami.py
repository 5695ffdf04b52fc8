"""Distortion-coefficient algebra: divergence-form coefficient triples,
per-point coefficient recovery from sampled maps, composition identities,
distance scalars, feasibility handling, disk IO."""

import math

import numpy as np
import pytest

from teichpc import (
    alpha_coeffs,
    compose_beltrami,
    diffuse_pcbc,
    dilation,
    feasibility_clamp,
    inverse_coefficient,
    load_complex_field,
    save_complex_field,
    teich_distance,
)
from teichpc.beltrami import coeff_matrices, field_derivatives, pcbc_from_values
from teichpc.errors import (
    DegenerateJacobianError,
    InfeasibleCoefficientError,
    TeichpcError,
)
from teichpc.synth import log_arcsin_derivatives, map_log_arcsin

# Analytic coefficient values for the log/arcsin test map, frozen from an
# exact symbolic evaluation. Independent of every code path under test.
LOG_ARCSIN_ORACLE = [
    ((0.3, 0.2),
     2.2616999581506997e-01 - 1.1685724016915911e-02j,
     6.2743460850957478e-01 - 9.4749849890188031e-03j),
    ((1.2, -0.7),
     7.6404992316217973e-02 + 8.2275840012922166e-02j,
     4.2517612357773177e-01 + 3.7875608280434570e-02j),
    ((0.5, 0.9),
     1.4314902171424929e-01 - 8.3303454119207504e-02j,
     5.8734552395784390e-01 - 5.7102007405104703e-02j),
    ((1.7, 0.0),
     5.0390681646394139e-02 + 0.0j,
     3.5260249052271453e-01 + 0.0j),
]


class TestCoefficients:
    def test_zero_field_gives_identity(self):
        c = alpha_coeffs(np.zeros(4, dtype=complex))
        assert np.allclose(c.triples, [[1.0, 0.0, 1.0]] * 4, atol=1e-15)
        assert np.allclose(c.matrices, np.eye(2), atol=1e-15)

    def test_real_half(self):
        c = alpha_coeffs(np.array([0.5 + 0j]))
        assert c.a1[0] == pytest.approx(1.0 / 3.0, rel=1e-12)
        assert c.a2[0] == pytest.approx(0.0, abs=1e-15)
        assert c.a3[0] == pytest.approx(3.0, rel=1e-12)

    def test_imag_half(self):
        c = alpha_coeffs(np.array([0.5j]))
        assert c.a1[0] == pytest.approx(5.0 / 3.0, rel=1e-12)
        assert c.a2[0] == pytest.approx(-4.0 / 3.0, rel=1e-12)
        assert c.a3[0] == pytest.approx(5.0 / 3.0, rel=1e-12)

    def test_unit_determinant(self):
        rng = np.random.default_rng(0)
        r = 0.99 * np.sqrt(rng.uniform(0, 1, 200))
        mu = r * np.exp(2j * np.pi * rng.uniform(0, 1, 200))
        mats = coeff_matrices(mu)
        assert np.abs(np.linalg.det(mats) - 1.0).max() < 1e-10

    def test_positive_definite(self):
        rng = np.random.default_rng(1)
        mu = 0.9 * (rng.standard_normal(50) + 1j * rng.standard_normal(50)) / 3
        mu = np.clip(np.abs(mu), 0, 0.95) * np.exp(1j * np.angle(mu))
        mats = coeff_matrices(mu)
        eig = np.linalg.eigvalsh(mats)
        assert eig.min() > 0

    def test_infeasible_rejected(self):
        with pytest.raises(InfeasibleCoefficientError):
            alpha_coeffs(np.array([1.0 + 0j]))
        with pytest.raises(InfeasibleCoefficientError):
            alpha_coeffs(np.array([0.3, 0.999999999]))


class TestPcbcRecovery:
    def test_identity_map_is_conformal(self, unit_setup):
        cloud, _, _, _, sten, _ = unit_setup
        f = cloud.points[:, 0] + 1j * cloud.points[:, 1]
        mu = diffuse_pcbc(sten, f)
        assert np.abs(mu).max() < 1e-9

    def test_affine_stretch_recovers_constant(self, unit_setup):
        # f = z + 0.2 zbar has coefficient 0.2 exactly; quadratic-exact rows
        # recover it to rounding
        cloud, _, _, _, sten, _ = unit_setup
        z = cloud.points[:, 0] + 1j * cloud.points[:, 1]
        f = z + 0.2 * np.conj(z)
        mu = diffuse_pcbc(sten, f)
        assert np.abs(mu - 0.2).max() < 1e-9

    def test_real_input_columns_match_complex(self, unit_setup):
        cloud, _, _, _, sten, _ = unit_setup
        z = cloud.points[:, 0] + 1j * cloud.points[:, 1]
        f = z + (0.1 - 0.05j) * np.conj(z)
        mu_c = diffuse_pcbc(sten, f)
        mu_r = diffuse_pcbc(sten, np.column_stack([f.real, f.imag]))
        assert np.array_equal(mu_c, mu_r)

    def test_smooth_map_matches_analytic_field(self, unit_setup):
        cloud, _, _, _, sten, _ = unit_setup
        shifted = cloud.points[:, :2] + [0.05, -0.5]  # keep arcsin in range
        img = map_log_arcsin(type(cloud)(points=shifted))
        f = img.points[:, 0] + 1j * img.points[:, 1]
        mu_true, _ = log_arcsin_derivatives(shifted)
        mu_est = diffuse_pcbc(sten, f)
        # interior points only; boundary stencils are one-sided
        interior = np.setdiff1d(np.arange(cloud.n), cloud.boundary)
        err = np.abs(mu_est - mu_true)[interior]
        assert np.median(err) < 2e-3
        assert err.max() < 0.1

    def test_strict_rejects_degenerate_jacobian(self, unit_setup):
        cloud, _, _, _, sten, _ = unit_setup
        z = cloud.points[:, 0] + 1j * cloud.points[:, 1]
        with pytest.raises(DegenerateJacobianError):
            diffuse_pcbc(sten, np.conj(z))  # f_z = 0 everywhere

    def test_nonstrict_marks_degenerate_as_inf(self, unit_setup):
        cloud, _, _, _, sten, _ = unit_setup
        z = cloud.points[:, 0] + 1j * cloud.points[:, 1]
        mu = diffuse_pcbc(sten, np.conj(z), strict=False)
        assert not np.isfinite(mu).any()

    def test_pcbc_from_values_matches_global_path(self, unit_setup):
        cloud, _, _, _, sten, _ = unit_setup
        z = cloud.points[:, 0] + 1j * cloud.points[:, 1]
        f = z + 0.15j * np.conj(z)
        u, v = f.real, f.imag
        mu_a = diffuse_pcbc(sten, f)
        mu_b = pcbc_from_values(sten, u[sten.idx], v[sten.idx])
        assert np.allclose(mu_a, mu_b, atol=1e-14)

    def test_field_derivatives_of_linear_fields(self, unit_setup):
        cloud, _, _, _, sten, _ = unit_setup
        x, y = cloud.points[:, 0], cloud.points[:, 1]
        ux, uy, vx, vy = field_derivatives(sten, 2 * x + 3 * y, x - y)
        assert np.abs(ux - 2).max() < 1e-9
        assert np.abs(uy - 3).max() < 1e-9
        assert np.abs(vx - 1).max() < 1e-9
        assert np.abs(vy + 1).max() < 1e-9


class TestAnalyticOracle:
    def test_log_arcsin_derivatives_match_symbolic(self):
        pts = np.array([p for p, _, _ in LOG_ARCSIN_ORACLE])
        mu, fz = log_arcsin_derivatives(pts)
        for i, (_, mu_ref, fz_ref) in enumerate(LOG_ARCSIN_ORACLE):
            assert mu[i] == pytest.approx(mu_ref, abs=5e-16)
            assert fz[i] == pytest.approx(fz_ref, abs=5e-16)

    def test_coefficient_is_feasible_on_domain(self):
        rng = np.random.default_rng(2)
        pts = np.column_stack([rng.uniform(0, 2, 400), rng.uniform(-1, 1, 400)])
        mu, fz = log_arcsin_derivatives(pts)
        assert np.abs(mu).max() < 1.0
        assert np.abs(fz).min() > 0.0


class TestComposition:
    def test_compose_with_identity(self):
        mu = np.array([0.3 - 0.1j, 0.05j])
        assert np.allclose(compose_beltrami(mu, 0.0, 1.0), mu)
        assert np.allclose(compose_beltrami(0.0, mu, 1.0), mu)

    def test_compose_with_inverse_cancels(self):
        # mu_{f^-1 o f} = 0: g = f^-1 evaluated at f(z)
        rng = np.random.default_rng(3)
        mu_f = 0.5 * (rng.standard_normal(30) + 1j * rng.standard_normal(30)) / 2
        fz = np.exp(1j * rng.uniform(0, 2 * np.pi, 30)) * rng.uniform(0.5, 2, 30)
        mu_g = inverse_coefficient(mu_f, fz)
        phase = np.conj(fz) / fz
        assert np.abs(compose_beltrami(mu_f, mu_g, phase)).max() < 1e-12

    def test_inverse_preserves_magnitude(self):
        mu = np.array([0.4 * np.exp(0.7j)])
        fz = np.array([1.3 * np.exp(-0.2j)])
        assert abs(np.abs(inverse_coefficient(mu, fz))[0] - 0.4) < 1e-14


class TestScalars:
    def test_dilation_values(self):
        assert dilation(0.0) == 1.0
        assert dilation(1.0 / 3.0) == pytest.approx(2.0, rel=1e-12)
        assert dilation(0.5) == pytest.approx(3.0, rel=1e-12)

    def test_distance_values(self):
        assert teich_distance(0.0) == 0.0
        assert teich_distance(1.0 / 3.0) == pytest.approx(0.5 * math.log(2.0),
                                                          rel=1e-12)
        assert teich_distance(0.2402) == pytest.approx(0.24497, abs=1e-3)

    def test_distance_is_half_log_dilation(self):
        k = np.linspace(0.0, 0.95, 20)
        assert np.allclose(teich_distance(k), 0.5 * np.log(dilation(k)))

    def test_distance_monotone(self):
        k = np.linspace(0.0, 0.99, 50)
        assert np.all(np.diff(teich_distance(k)) > 0)

    def test_domain_errors(self):
        for bad in (-0.1, 1.0, 1.7):
            with pytest.raises(TeichpcError):
                dilation(bad)
            with pytest.raises(TeichpcError):
                teich_distance(bad)


class TestFeasibilityClamp:
    def test_noop_within_cap(self):
        mu = np.array([0.1 + 0.1j, -0.5j, 0.998])
        out, count = feasibility_clamp(mu)
        assert count == 0
        assert np.array_equal(out, mu)

    def test_scaling_preserves_argument(self):
        mu = np.array([2.0 * np.exp(1.1j)])
        out, count = feasibility_clamp(mu, cap=0.9)
        assert count == 1
        assert np.abs(out)[0] == pytest.approx(0.9, rel=1e-12)
        assert np.angle(out)[0] == pytest.approx(1.1, rel=1e-12)

    def test_nonfinite_pinned_to_real_cap(self):
        mu = np.array([np.inf + 0j, complex(np.nan, 0.2), 0.3 + 0j])
        out, count = feasibility_clamp(mu, cap=0.95)
        assert count == 2
        assert out[0] == 0.95 and out[1] == 0.95
        assert out[2] == 0.3


class TestFieldIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        mu = rng.standard_normal(40) + 1j * rng.standard_normal(40)
        p = tmp_path / "field.csv"
        save_complex_field(p, mu)
        back = load_complex_field(p)
        assert np.array_equal(back, mu)

    def test_header_format(self, tmp_path):
        p = tmp_path / "field.csv"
        save_complex_field(p, np.array([1 + 2j]))
        lines = p.read_text().splitlines()
        assert lines[0] == "index,re,im"
        assert lines[1].startswith("0,1,2")
