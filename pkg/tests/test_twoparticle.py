import math
from fractions import Fraction

import numpy as np
import pytest

from hklab.graph import GraphError, GraphPoint
from hklab.kernels import kernel_interval
from hklab.spectral import eigen
from hklab.twoparticle import (
    SymCoeff,
    SymPoint,
    TraceSeries,
    asymptotic_fit,
    decomposition_coefficients,
    eigen_trace_series,
    kernel_two_particle,
    predicted_coefficients,
    predicted_coefficients_exact,
    region_coefficients,
    region_contributions,
    trace_series,
    trace_two_particle,
    trace_two_particle_eigen,
)

from conftest import make_graph


class TestKernelTwoParticle:
    def test_swap_invariance(self, star3):
        p = SymPoint(GraphPoint("e1", 0.3), GraphPoint("e2", 0.6))
        p_swapped = SymPoint(GraphPoint("e2", 0.6), GraphPoint("e1", 0.3))
        q = SymPoint(GraphPoint("e1", 0.5), GraphPoint("e3", 0.2))
        a = kernel_two_particle(star3, 0.05, p, q)
        b = kernel_two_particle(star3, 0.05, p_swapped, q)
        assert a == pytest.approx(b, rel=1e-14)

    def test_far_apart_factorizes(self, interval):
        t = 0.005
        p = SymPoint(GraphPoint("e", 0.2), GraphPoint("e", 0.8))
        v = kernel_two_particle(interval, t, p, p)
        k1 = kernel_interval(1.0, "neumann", "neumann", t, 0.2, 0.2).value
        k2 = kernel_interval(1.0, "neumann", "neumann", t, 0.8, 0.8).value
        assert v == pytest.approx(k1 * k2, rel=1e-6)

    def test_interval_composition(self, interval):
        t = 0.05
        p = SymPoint(GraphPoint("e", 0.3), GraphPoint("e", 0.7))
        v = kernel_two_particle(interval, t, p, p)
        k33 = kernel_interval(1.0, "neumann", "neumann", t, 0.3, 0.3).value
        k77 = kernel_interval(1.0, "neumann", "neumann", t, 0.7, 0.7).value
        k37 = kernel_interval(1.0, "neumann", "neumann", t, 0.7, 0.3).value
        assert v == pytest.approx(k33 * k77 + k37 * k37, rel=1e-10)

    def test_canonical_ordering(self):
        p = SymPoint(GraphPoint("e2", 0.6), GraphPoint("e1", 0.3)).canonical()
        assert p.x1.edge == "e1"


class TestTraces:
    def test_symmetrization_identity(self, interval):
        modes = eigen(interval, 85.0)
        for t in (0.01, 0.05):
            zq = trace_two_particle(interval, t, 2e-3)
            ze = trace_two_particle_eigen(modes, t)
            assert abs(zq - ze) < 1e-8

    def test_star_trace_three_digits(self, star3):
        modes = eigen(star3, 60.0)
        zq = trace_two_particle(star3, 0.02, 2e-3)
        ze = trace_two_particle_eigen(modes, 0.02)
        assert zq == pytest.approx(ze, rel=5e-4)

    def test_long_time_limit(self, interval):
        modes = eigen(interval, 20.0)
        assert trace_two_particle_eigen(modes, 10.0) == pytest.approx(1.0, abs=1e-12)

    def test_series_decreasing(self, interval):
        series = trace_series(interval, np.geomspace(0.01, 0.1, 5), 2e-3)
        assert all(a > b for a, b in zip(series.Z, series.Z[1:]))

    def test_coarse_step_rejected(self, interval):
        with pytest.raises(ValueError, match="too coarse"):
            trace_two_particle(interval, 0.002, 0.2)


class TestRegions:
    def test_deg1_corner_constant_five_thirty_seconds(self, interval):
        _, _, const = region_coefficients(
            interval, "E", {"eps": Fraction(1, 16), "vertex": "a"}
        )
        assert const == SymCoeff(Fraction(5, 32))

    def test_region_c_coefficient(self, star3):
        eps = Fraction(1, 16)
        vol, half, const = region_coefficients(
            star3, "C", {"eps": eps, "vertex": "c", "edge": "e2"}
        )
        # t^{-1/2} coefficient (l - 2 eps) * sum of diagonal entries, here -1
        assert half == SymCoeff(-(1 - 2 * eps))
        assert vol == SymCoeff(3 * eps * (1 - 2 * eps))

    def test_deg2_region_equals_vertex_free_strip(self):
        path2 = make_graph(
            [("a", "kirchhoff"), ("m", "kirchhoff"), ("b", "kirchhoff")],
            [("e1", "a", "m", 1.0), ("e2", "m", "b", 1.0)],
        )
        eps = Fraction(1, 16)
        vol, half, const = region_coefficients(path2, "E", {"eps": eps, "vertex": "m"})
        # a vertex-free fold strip of width 2 eps: area (2 sqrt(2) - 1) eps^2,
        # boundary contribution 2 eps, no corner constant
        assert vol == SymCoeff(-eps * eps, 2 * eps * eps)
        assert half == SymCoeff(2 * eps)
        assert const == SymCoeff()

    def test_region_value_combines_coefficients(self, interval):
        eps = Fraction(1, 16)
        t = 0.01
        val = region_contributions(interval, "E", {"eps": eps, "vertex": "a"}, t)
        vol, half, const = region_coefficients(interval, "E",
                                               {"eps": eps, "vertex": "a"})
        expect = (
            float(vol) / (4 * math.pi * t)
            + float(half) / (8 * math.sqrt(math.pi * t))
            + float(const)
        )
        assert val == pytest.approx(expect, rel=1e-14)

    def test_eps_too_large_rejected(self, interval):
        with pytest.raises(GraphError):
            region_coefficients(interval, "E", {"eps": 0.3, "vertex": "a"})

    @pytest.mark.parametrize("eps", [Fraction(1, 16), Fraction(1, 10), Fraction(3, 50)])
    def test_full_decomposition_matches_predicted(
        self, eps, interval, star3, triangle, circle
    ):
        for g in (interval, star3, triangle, circle):
            dec = decomposition_coefficients(g, eps)
            pred = predicted_coefficients_exact(g)
            assert dec[0] == pred[0]
            assert dec[1] == pred[1]
            assert dec[2] == pred[2]


class TestPredicted:
    def test_interval_values(self, interval):
        fit = predicted_coefficients(interval)
        assert fit.a_minus1 == pytest.approx(1.0 / (8 * math.pi), rel=1e-14)
        assert fit.a_half == pytest.approx(
            (2 + math.sqrt(2)) / (8 * math.sqrt(math.pi)), rel=1e-14
        )
        # cross-check: polygon corner constants 1/16 + 2 * 5/32 for the
        # Neumann triangle with angles pi/2, pi/4, pi/4
        corner = lambda th: (math.pi**2 - th**2) / (24 * math.pi * th)
        assert fit.a_0 == pytest.approx(
            corner(math.pi / 2) + 2 * corner(math.pi / 4), rel=1e-12
        )
        assert fit.a_0 == pytest.approx(0.375, rel=1e-14)

    def test_volume_term_is_half_squared_length(self, star3):
        fit = predicted_coefficients(star3)
        assert fit.a_minus1 * 4 * math.pi == pytest.approx(
            star3.total_length**2 / 2, rel=1e-14
        )

    def test_degree2_merge_invariance(self):
        merged = make_graph(
            [("a", "kirchhoff"), ("b", "kirchhoff")], [("e", "a", "b", 2.0)]
        )
        split = make_graph(
            [("a", "kirchhoff"), ("m", "kirchhoff"), ("b", "kirchhoff")],
            [("e1", "a", "m", 1.2), ("e2", "m", "b", 0.8)],
        )
        f1 = predicted_coefficients(merged)
        f2 = predicted_coefficients(split)
        assert f1.a_minus1 == pytest.approx(f2.a_minus1, rel=1e-14)
        assert f1.a_half == pytest.approx(f2.a_half, rel=1e-14)
        assert f1.a_0 == pytest.approx(f2.a_0, abs=1e-14)

    def test_requires_kirchhoff(self, interval_dirichlet):
        with pytest.raises(GraphError):
            predicted_coefficients(interval_dirichlet)


class TestFit:
    def test_exact_basis_member(self):
        ts = np.geomspace(0.002, 0.02, 8)
        series = TraceSeries(tuple(ts), tuple(2.0 / ts), 0.0, tuple(0.0 for _ in ts))
        fit = asymptotic_fit(series)
        assert fit.a_minus1 == pytest.approx(2.0, abs=1e-10)
        assert abs(fit.a_half) < 1e-9
        assert abs(fit.a_0) < 1e-9

    def test_interval_fit_within_one_percent(self, interval):
        fit = asymptotic_fit(eigen_trace_series(interval, np.geomspace(0.002, 0.02, 8)))
        pred = predicted_coefficients(interval)
        assert abs(fit.a_minus1 / pred.a_minus1 - 1) < 0.01
        assert abs(fit.a_half / pred.a_half - 1) < 0.01
        assert abs(fit.a_0 / pred.a_0 - 1) < 0.01

    def test_quadrature_fit_refines_toward_predicted(self, interval):
        # refining the quadrature step does not worsen the fitted coefficients
        pred = predicted_coefficients(interval)
        ts = np.geomspace(0.005, 0.02, 6)
        errs = []
        for step in (4e-3, 2e-3):
            fit = asymptotic_fit(trace_series(interval, ts, step))
            errs.append(abs(fit.a_0 - pred.a_0) + abs(fit.a_half - pred.a_half))
        assert errs[1] <= errs[0] + 1e-9
        assert errs[1] < 0.02

    def test_star_a0_within_two_percent(self, star3):
        fit = asymptotic_fit(eigen_trace_series(star3, np.geomspace(0.002, 0.02, 8)))
        pred = predicted_coefficients(star3)
        assert abs(fit.a_0 / pred.a_0 - 1) < 0.02

    def test_narrow_range_rejected(self):
        ts = np.linspace(0.01, 0.0100001, 8)
        series = TraceSeries(tuple(ts), tuple(2.0 / ts), 0.0, tuple(0.0 for _ in ts))
        with pytest.raises(ValueError, match="ill-conditioned"):
            asymptotic_fit(series)

    def test_too_few_points_rejected(self):
        ts = np.geomspace(0.002, 0.02, 4)
        series = TraceSeries(tuple(ts), tuple(2.0 / ts), 0.0, tuple(0.0 for _ in ts))
        with pytest.raises(ValueError):
            asymptotic_fit(series)

    def test_noisy_series_rejected(self):
        ts = np.geomspace(0.002, 0.02, 8)
        series = TraceSeries(
            tuple(ts), tuple(2.0 / ts), 0.0, tuple(0.02 / t for t in ts)
        )
        with pytest.raises(ValueError, match="error"):
            asymptotic_fit(series)
