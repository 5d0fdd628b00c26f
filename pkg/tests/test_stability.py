"""
Tests for generalized eigenvalue stability analysis
"""

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

from conftest import U_STAR, V_STAR
from xdcont.mesh_fem import laplacian_eigenvalues
from xdcont.models import ModelTag, block_mass, homogeneous_state, jacobian
from xdcont.stability import (
    SpectrumSlice,
    classify,
    combine_kernel,
    kernel_vectors,
    leading_spectrum,
    max_complex_real_part,
)
from xdcont.utils import InvalidArgumentException


def _homogeneous_spectrum(mesh, params, d, k=10):
    p = params.with_value("d", d)
    s = homogeneous_state(mesh, p, ModelTag.CROSS, "d")
    return leading_spectrum(jacobian(mesh, p, s), block_mass(mesh, 2), k)


class TestClassify:
    """Counting unstable eigenvalues"""

    def test_counts_pairs_and_marginal(self):
        """Both members of a complex pair count; near-zero values are marginal"""
        spectrum = SpectrumSlice(np.array([0.5 + 1j, 0.5 - 1j, 1e-9, -1.0]), 4, 4)
        result = classify(spectrum)
        assert result.n_unstable == 2
        assert result.n_unstable_complex == 2
        assert result.marginal

    def test_stable_spectrum(self):
        """Negative real parts give no instability"""
        spectrum = SpectrumSlice(np.array([-0.1, -2.0 + 3j, -2.0 - 3j]), 3, 3)
        assert classify(spectrum) == (0, False, 0)
        assert max_complex_real_part(spectrum) == -2.0

    def test_no_complex_values(self):
        """Real spectra have no complex real part"""
        spectrum = SpectrumSlice(np.array([1.0, -1.0]), 2, 2)
        assert max_complex_real_part(spectrum) == float("-inf")


class TestLeadingSpectrum:
    """Dense and ARPACK eigenvalue paths"""

    def test_stable_above_first_threshold(self, interval_mesh, reference_params):
        """The homogeneous state is stable at d = 0.04"""
        spectrum = _homogeneous_spectrum(interval_mesh, reference_params, 0.04)
        assert spectrum.rightmost.real < 0
        assert classify(spectrum).n_unstable == 0

    def test_single_unstable_mode(self, interval_mesh, reference_params):
        """At d = 0.03 only the first cosine mode is unstable, through a real eigenvalue"""
        spectrum = _homogeneous_spectrum(interval_mesh, reference_params, 0.03)
        result = classify(spectrum)
        assert result.n_unstable == 1
        assert result.n_unstable_complex == 0

    def test_matches_mode_reduction(self, interval_mesh, reference_params):
        """Rightmost μ is the top eigenvalue of J* - λ1h D on the first discrete mode"""
        d, d12 = 0.03, reference_params.d12
        jstar = np.array([[-4.875, -U_STAR], [-V_STAR, -0.375]])
        D = np.array([[d + d12 * V_STAR, d12 * U_STAR], [0.0, d]])
        lam = laplacian_eigenvalues(interval_mesh, 2)[1]
        expected = np.max(np.linalg.eigvals(jstar - lam * D).real)
        spectrum = _homogeneous_spectrum(interval_mesh, reference_params, d)
        assert spectrum.rightmost.real == pytest.approx(expected, rel=1e-7)

    def test_heat_spectrum(self, interval_mesh):
        """-K ψ = μ M ψ has rightmost eigenvalue 0"""
        ws = interval_mesh.workspace
        spectrum = leading_spectrum(ws.stiffness, ws.mass, 3)
        assert spectrum.rightmost.real == pytest.approx(0.0, abs=1e-9)
        assert spectrum.converged_count == 3

    def test_arpack_matches_dense(self, interval_mesh):
        """Shift-invert ARPACK reproduces the discrete Laplacian spectrum"""
        ws = interval_mesh.workspace
        spectrum = leading_spectrum(ws.stiffness, ws.mass, 4, dense_limit=10)
        expected = -laplacian_eigenvalues(interval_mesh, 4)
        assert spectrum.converged_count == 4
        np.testing.assert_allclose(np.sort(spectrum.eigenvalues.real)[::-1], expected, atol=1e-6)

    def test_conjugate_pair_not_split(self):
        """Truncation keeps both members of a complex pair"""
        J = sp.csr_matrix(np.array([[1.0, -2.0, 0.0], [2.0, 1.0, 0.0], [0.0, 0.0, 5.0]]))
        spectrum = leading_spectrum(J, sp.identity(3, format="csr"), 1)
        assert spectrum.eigenvalues.size == 2
        np.testing.assert_allclose(spectrum.eigenvalues.real, -1.0)

    def test_arpack_completes_split_pair(self):
        """A pair straddling position k is returned whole on the shift-invert path"""
        minus_j = sla.block_diag([[0.2]], [[0.1, -0.5], [0.5, 0.1]], -np.diag(np.arange(1.0, 6.0)))
        J = sp.csr_matrix(-minus_j)
        for limit in (4, 100):
            spectrum = leading_spectrum(J, sp.identity(8, format="csr"), 2, dense_limit=limit)
            assert spectrum.eigenvalues.size == 3
            np.testing.assert_allclose(spectrum.eigenvalues, [0.2, 0.1 - 0.5j, 0.1 + 0.5j],
                                       atol=1e-8)

    @pytest.mark.parametrize("d", np.linspace(0.003, 0.04, 20))
    def test_homogeneous_spectrum_is_mode_blocks(self, interval_mesh, reference_params, d):
        """Every μ at a homogeneous state is an eigenvalue of J* - λk D for a discrete λk"""
        d12 = reference_params.d12
        jstar = np.array([[-4.875, -U_STAR], [-V_STAR, -0.375]])
        D = np.array([[d + d12 * V_STAR, d12 * U_STAR], [0.0, d]])
        lams = laplacian_eigenvalues(interval_mesh, interval_mesh.node_count)
        expected = np.concatenate([np.linalg.eigvals(jstar - lam * D) for lam in lams])
        n = 2 * interval_mesh.node_count
        computed = _homogeneous_spectrum(interval_mesh, reference_params, d, k=n).eigenvalues
        assert computed.size == expected.size == n
        scale = np.max(np.abs(expected))
        for mu in expected:
            assert np.min(np.abs(computed - mu)) <= 1e-9 * scale

    def test_k_must_be_positive(self, interval_mesh):
        """k < 1 raises"""
        ws = interval_mesh.workspace
        with pytest.raises(InvalidArgumentException):
            leading_spectrum(ws.stiffness, ws.mass, 0)


class TestKernel:
    """Null vectors at branch points"""

    def test_heat_kernel_is_constant(self, interval_mesh):
        """The Neumann stiffness annihilates constants"""
        ws = interval_mesh.workspace
        basis = kernel_vectors(ws.stiffness, ws.mass, 1)
        assert basis.shape == (interval_mesh.node_count, 1)
        np.testing.assert_allclose(basis[:, 0], 1.0, atol=1e-8)

    def test_combine_rescales(self):
        """Mixtures are rescaled to unit max-norm"""
        basis = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        psi = combine_kernel(basis, (2.0, 1.0))
        assert np.max(np.abs(psi)) == pytest.approx(1.0)
        np.testing.assert_allclose(psi, [1.0, 0.5, 0.75])

    def test_combine_wrong_length(self):
        """One weight per kernel vector"""
        with pytest.raises(InvalidArgumentException):
            combine_kernel(np.ones((3, 2)), (1.0,))

    def test_combine_cancelling_mix(self):
        """A mix summing to zero is rejected"""
        with pytest.raises(InvalidArgumentException):
            combine_kernel(np.ones((3, 2)), (1.0, -1.0))
