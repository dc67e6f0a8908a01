import numpy as np
import pytest
from scipy.integrate import quad

from deeepc.basis import (
    fourier_family,
    legendre_family,
    reconstruct_partial_state,
    tensor_product_family,
    truncation_error_curve,
)
from deeepc.errors import DimensionMismatch


class TestFamilies:
    def test_legendre_gram_identity(self):
        fam = legendre_family(-1.0, 1.0, 8)
        assert fam.gram_deviation() <= 1e-8

    def test_legendre_general_interval(self):
        fam = legendre_family(2.0, 5.0, 6)
        assert fam.gram_deviation() <= 1e-8

    def test_fourier_gram_identity(self):
        fam = fourier_family(0.0, 2.0 * np.pi, 9)
        assert fam.gram_deviation() <= 1e-8

    def test_tensor_gram_identity(self):
        f1 = legendre_family(-1.0, 1.0, 4)
        f2 = legendre_family(-1.0, 1.0, 4)
        fam = tensor_product_family(f1, f2)
        assert fam.n_funcs == 16
        assert fam.gram_deviation() <= 1e-8

    def test_mixed_tensor(self):
        fam = tensor_product_family(
            legendre_family(-1.0, 1.0, 3), fourier_family(0.0, 1.0, 3)
        )
        assert fam.gram_deviation() <= 1e-8

    def test_rejects_bad_domain(self):
        with pytest.raises(DimensionMismatch):
            legendre_family(1.0, 1.0, 3)

    def test_coefficients_match_scipy_quadrature(self):
        # <exp, phi_n> cross-checked against adaptive quadrature
        fam = legendre_family(-1.0, 1.0, 5)
        coeffs = fam.inner(np.exp)
        phi = fam.evaluate
        for n in range(5):
            ref, _ = quad(lambda x, n=n: np.exp(x) * phi(np.array([[x]]))[0, n], -1, 1)
            assert abs(coeffs[n] - ref) < 1e-10

    def test_norm_matches_closed_form(self):
        # int_{-1}^{1} exp(2x) dx = (e^2 - e^-2)/2
        fam = legendre_family(-1.0, 1.0, 5)
        assert np.isclose(fam.norm_sq(np.exp), (np.e**2 - np.e**-2) / 2.0)


class TestTruncation:
    def test_exponential_curve(self):
        fam = legendre_family(-1.0, 1.0, 18)
        rep = truncation_error_curve(np.exp, fam, list(range(1, 13)))
        assert rep.monotone
        # strict decrease over the analytic range of exp
        e = rep.error_norms
        assert all(b < a for a, b in zip(e, e[1:]))
        assert all(v <= rep.f_norm for v in e)

    def test_formula_matches_direct(self):
        fam = legendre_family(-1.0, 1.0, 18)
        rep = truncation_error_curve(np.exp, fam, list(range(1, 13)))
        for e_f, e_d in zip(rep.error_norms, rep.error_norms_direct):
            err_sq_f, err_sq_d = e_f**2, e_d**2
            assert abs(err_sq_f - err_sq_d) <= 1e-6 * max(rep.f_norm**2, 1.0)

    def test_polynomial_truncates_exactly(self):
        # a degree-3 polynomial has zero error at order >= 4
        fam = legendre_family(-1.0, 1.0, 10)
        rep = truncation_error_curve(lambda x: x**3 - x, fam, [2, 4, 6])
        assert rep.error_norms[1] < 1e-10 and rep.error_norms[2] < 1e-10
        assert rep.error_norms[0] > 1e-3

    def test_order_exceeds_family(self):
        fam = legendre_family(-1.0, 1.0, 4)
        with pytest.raises(DimensionMismatch):
            truncation_error_curve(np.exp, fam, [6])


class TestPartialState:
    def test_identity_map(self):
        y = np.array([[1.0, 2.0]])
        assert np.allclose(reconstruct_partial_state(np.eye(2), y), y)

    def test_tall_map_least_squares(self):
        C = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        x = np.array([[0.5, -0.25]])
        y = x @ C.T
        assert np.allclose(reconstruct_partial_state(C, y), x)

    def test_skips_zero_columns(self):
        C = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        x_obs = np.array([[2.0, 3.0]])
        y = np.array([[2.0, 3.0]])
        assert np.allclose(reconstruct_partial_state(C, y), x_obs)

    def test_rejects_dependent_columns(self):
        with pytest.raises(DimensionMismatch):
            reconstruct_partial_state(np.array([[1.0, 2.0], [2.0, 4.0]]), np.zeros((1, 2)))
