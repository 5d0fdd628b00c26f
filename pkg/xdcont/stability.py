"""Linear stability of steady states from the rightmost generalized eigenvalues."""

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .utils.error_handlers import InvalidArgumentException

logger = logging.getLogger(__name__)

DENSE_LIMIT = 2000


@dataclass(frozen=True, eq=False)
class SpectrumSlice:
    """Eigenvalues sorted by descending real part; conjugate pairs kept together."""

    eigenvalues: np.ndarray
    n_requested: int
    converged_count: int

    @property
    def rightmost(self) -> complex:
        return complex(self.eigenvalues[0]) if self.eigenvalues.size else complex("nan")


class Classification(NamedTuple):
    n_unstable: int
    marginal: bool
    n_unstable_complex: int


def _sort_rightmost(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=complex)
    values = values[np.isfinite(values)]
    order = np.lexsort((values.imag, -values.real))
    return values[order]


def _truncate_keeping_pairs(values: np.ndarray, k: int, imag_tol: float = 1e-10) -> np.ndarray:
    """First k values, extended by one to complete a split pair, or shortened by one
    when the partner is missing from ``values``."""
    k = min(k, values.size)
    if k == 0:
        return values[:0]
    last = values[k - 1]
    if abs(last.imag) > imag_tol:
        partner = np.isclose(values, np.conj(last))
        partner[k - 1] = False
        if k < values.size and partner[k]:
            k += 1
        elif not np.any(partner[:k]):
            k -= 1
    return values[:k]


def leading_spectrum(
    J: sp.spmatrix,
    Mmass_block: sp.spmatrix,
    k: int,
    shift: float = 0.1,
    dense_limit: int = DENSE_LIMIT,
) -> SpectrumSlice:
    """k rightmost μ of -J ψ = μ Mmass ψ; Re μ < 0 means linearly stable.

    Small systems use a dense QZ solve; larger ones use ARPACK shift-invert around
    ``shift``, re-centering when fewer than k eigenvalues converge.
    """
    n = J.shape[0]
    if k < 1:
        raise InvalidArgumentException(f"k must be positive, got {k}")
    A = -sp.csc_matrix(J)
    B = sp.csc_matrix(Mmass_block)

    if n <= dense_limit:
        values = sla.eigvals(A.toarray(), B.toarray())
        values = _truncate_keeping_pairs(_sort_rightmost(values), k)
        return SpectrumSlice(values, k, int(values.size))

    # one extra so a pair split at position k can be completed
    k_eff = min(k + 1, n - 2)
    v0 = np.ones(n) / np.sqrt(n)
    best = np.empty(0, dtype=complex)
    for sigma in (shift, -shift, 10 * shift):
        try:
            values = spla.eigs(A, k=k_eff, M=B, sigma=sigma, which="LM", v0=v0,
                               return_eigenvectors=False)
        except spla.ArpackNoConvergence as exc:
            values = exc.eigenvalues
        except RuntimeError as exc:
            logger.debug(f"shift-invert at sigma={sigma} failed: {exc}")
            continue
        if values.size > best.size:
            best = values
        if best.size >= k_eff:
            break
        logger.debug(f"only {values.size}/{k_eff} eigenvalues converged at sigma={sigma}")

    best = _truncate_keeping_pairs(_sort_rightmost(best), k)
    return SpectrumSlice(best, k, int(best.size))


def classify(
    spectrum: SpectrumSlice, tol: float = 1e-8, imag_tol: float = 1e-6
) -> Classification:
    """Count eigenvalues with real part above tol; each member of a complex pair counts."""
    re = spectrum.eigenvalues.real
    im = spectrum.eigenvalues.imag
    unstable = re > tol
    return Classification(
        n_unstable=int(np.count_nonzero(unstable)),
        marginal=bool(np.any(np.abs(re) <= tol)),
        n_unstable_complex=int(np.count_nonzero(unstable & (np.abs(im) >= imag_tol))),
    )


def max_complex_real_part(spectrum: SpectrumSlice, imag_tol: float = 1e-6) -> float:
    """Largest real part among genuinely complex eigenvalues, -inf when there are none."""
    values = spectrum.eigenvalues
    complex_values = values[np.abs(values.imag) >= imag_tol]
    if complex_values.size == 0:
        return float("-inf")
    return float(np.max(complex_values.real))


def nearest_axis_pair(spectrum: SpectrumSlice, imag_tol: float = 1e-6) -> Optional[complex]:
    """Upper member of the complex pair closest to the imaginary axis, if any."""
    values = spectrum.eigenvalues
    upper = values[values.imag >= imag_tol]
    if upper.size == 0:
        return None
    return complex(upper[np.argmin(np.abs(upper.real))])


def kernel_vectors(
    J: sp.spmatrix, Mmass_block: sp.spmatrix, count: int = 1, dense_limit: int = DENSE_LIMIT
) -> np.ndarray:
    """Real eigenvectors of J for the ``count`` generalized eigenvalues nearest zero.

    Columns are scaled to unit max-norm with a positive largest entry.
    """
    n = J.shape[0]
    if n <= dense_limit:
        values, vectors = sla.eig(-J.toarray(), Mmass_block.toarray())
        order = np.argsort(np.abs(values))[:count]
        basis = vectors[:, order]
    else:
        v0 = np.ones(n) / np.sqrt(n)
        values, basis = spla.eigs(
            -sp.csc_matrix(J), k=count, M=sp.csc_matrix(Mmass_block), sigma=1e-6,
            which="LM", v0=v0,
        )
    basis = np.real(basis)
    for j in range(basis.shape[1]):
        col = basis[:, j]
        peak = col[np.argmax(np.abs(col))]
        basis[:, j] = col / peak
    return basis


def combine_kernel(basis: np.ndarray, mix: Sequence[float]) -> np.ndarray:
    """Linear combination of kernel columns, rescaled to unit max-norm."""
    if len(mix) != basis.shape[1]:
        raise InvalidArgumentException(
            f"kernel mix has {len(mix)} weights for {basis.shape[1]} kernel vectors"
        )
    psi = basis @ np.asarray(mix, dtype=float)
    peak = np.max(np.abs(psi))
    if peak == 0:
        raise InvalidArgumentException("kernel mix cancels to zero")
    return psi / peak
