"""
Linear (Turing) analysis of the homogeneous coexistence state.

For a Neumann Laplacian eigenvalue λ the perturbation mode is stable iff the
characteristic matrix J* - λ JΔ has positive determinant (its trace stays negative
whenever tr J* < 0). The determinant is a quadratic in λ and, for the tied
diffusion d1 = d2 = d, a quadratic in d whose positive root is the critical d_B.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from .mesh_fem import DomainKind, DomainSpec
from .models import PARAM_NAMES, Params, equilibrium_cross
from .utils.error_handlers import InvalidArgumentException, NoStartException

logger = logging.getLogger(__name__)

MERGE_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class LinearizationData:
    u: float
    v: float
    Jstar: np.ndarray
    Jdelta: np.ndarray
    trJ: float
    detJ: float
    alpha: float


@dataclass(frozen=True)
class LaplaceMode:
    lam: float
    indices: Tuple[Tuple[int, ...], ...]
    multiplicity: int = 1


@dataclass(frozen=True)
class TuringPrediction:
    mode: LaplaceMode
    critical_value: float
    param_name: str


def linearize(p: Params) -> LinearizationData:
    eq = equilibrium_cross(p)
    if not eq.admissible:
        raise NoStartException(
            "homogeneous equilibrium is not positive", details={"u": eq.u, "v": eq.v}
        )
    u, v = eq.u, eq.v
    Jstar = np.array([[-p.a1 * u, -p.b1 * u], [-p.b2 * v, -p.a2 * v]])
    Jdelta = np.array([[p.d1 + p.d12 * v, p.d12 * u], [0.0, p.d2]])
    return LinearizationData(
        u=u,
        v=v,
        Jstar=Jstar,
        Jdelta=Jdelta,
        trJ=float(np.trace(Jstar)),
        detJ=float(Jstar[0, 0] * Jstar[1, 1] - Jstar[0, 1] * Jstar[1, 0]),
        alpha=(2 * p.b2 * u - p.r2) * v,
    )


def alpha_positive_condition(p: Params) -> bool:
    """r1/r2 > (b1/a2 + a1/b2)/2, equivalent to α > 0 under weak competition."""
    return p.r1 / p.r2 > 0.5 * (p.b1 / p.a2 + p.a1 / p.b2)


def char_det(p: Params, lam: float, d: Optional[float] = None) -> float:
    """det(J* - λ JΔ). With ``d`` given, d1 = d2 = d; otherwise the params' own d1, d2.

    In the tied case this is d(d + d12 v*)λ² - (d trJ + d12 α)λ + det J*.
    """
    lin = linearize(p)
    d1 = p.d1 if d is None else d
    d2 = p.d2 if d is None else d
    a1u = p.a1 * lin.u
    a2v = p.a2 * lin.v
    c = d1 + p.d12 * lin.v
    quadratic = d2 * c
    linear = d2 * a1u + c * a2v - p.d12 * p.b2 * lin.u * lin.v
    return float(quadratic * lam**2 + linear * lam + lin.detJ)


def critical_d(p: Params, lam: float) -> Optional[float]:
    """Positive root d_B of char_det(p, λ, d) = 0, or None when there is none."""
    if not lam > 0:
        raise InvalidArgumentException(f"lambda must be positive, got {lam}")
    lin = linearize(p)
    b = p.d12 * lin.v * lam - lin.trJ
    disc = b * b - 4 * (lin.detJ - p.d12 * lin.alpha * lam)
    if disc < 0:
        return None
    root = (-b + math.sqrt(disc)) / (2 * lam)
    return root if root > 0 else None


def _merge(raw: List[Tuple[float, Tuple[int, ...]]]) -> List[LaplaceMode]:
    raw.sort(key=lambda item: (item[0], item[1]))
    modes: List[LaplaceMode] = []
    group: List[Tuple[float, Tuple[int, ...]]] = []
    for lam, idx in raw:
        if group and not math.isclose(lam, group[0][0], rel_tol=MERGE_RTOL):
            modes.append(LaplaceMode(group[0][0], tuple(i for _, i in group), len(group)))
            group = []
        group.append((lam, idx))
    if group:
        modes.append(LaplaceMode(group[0][0], tuple(i for _, i in group), len(group)))
    return modes


def laplacian_spectrum(
    spec: DomainSpec, lambda_max: float, include_zero: bool = False
) -> List[LaplaceMode]:
    """Neumann eigenvalues up to ``lambda_max``, ascending, equal values merged."""
    if not lambda_max > 0:
        raise InvalidArgumentException(f"lambda_max must be positive, got {lambda_max}")
    kx = math.pi / spec.Lx
    nmax = int(math.floor(math.sqrt(lambda_max) / kx)) + 1
    raw: List[Tuple[float, Tuple[int, ...]]] = []
    if spec.kind is DomainKind.INTERVAL:
        for n in range(nmax + 1):
            raw.append(((kx * n) ** 2, (n,)))
    else:
        ky = math.pi / spec.Ly  # type: ignore[operator]
        mmax = int(math.floor(math.sqrt(lambda_max) / ky)) + 1
        for n in range(nmax + 1):
            for m in range(mmax + 1):
                raw.append(((kx * n) ** 2 + (ky * m) ** 2, (n, m)))
    raw = [(lam, idx) for lam, idx in raw if lam <= lambda_max and (include_zero or lam > 0)]
    return _merge(raw)


def _scan_roots(
    func, lo: float, hi: float, scan_points: int, xtol: float
) -> List[float]:
    grid = np.linspace(lo, hi, scan_points)
    values = np.array([func(g) for g in grid])
    roots = []
    for i in range(scan_points - 1):
        fa, fb = values[i], values[i + 1]
        if fa == 0.0:
            roots.append(float(grid[i]))
        elif fa * fb < 0:
            roots.append(float(brentq(func, grid[i], grid[i + 1], xtol=xtol)))
    if values[-1] == 0.0:
        roots.append(float(grid[-1]))
    return roots


def _admissible_at(p: Params, param_name: str, value: float) -> bool:
    try:
        return equilibrium_cross(p.with_value(param_name, value)).admissible
    except InvalidArgumentException:
        return False


def admissible_interval(
    p: Params, param_name: str, value_range: Tuple[float, float], scan_points: int = 400
) -> Tuple[float, float]:
    """Largest subinterval of ``value_range`` (on the scan grid) with a positive equilibrium."""
    grid = np.linspace(value_range[0], value_range[1], scan_points)
    ok = [_admissible_at(p, param_name, g) for g in grid]
    if not any(ok):
        raise InvalidArgumentException(
            f"no admissible equilibrium for {param_name} in {value_range}"
        )
    idx = np.flatnonzero(ok)
    return float(grid[idx[0]]), float(grid[idx[-1]])


def predict_bifurcations(
    p: Params,
    spec: DomainSpec,
    param_name: str,
    value_range: Tuple[float, float],
    lambda_max: float,
    scan_points: int = 400,
    xtol: float = 1e-10,
) -> List[TuringPrediction]:
    """Homogeneous-branch bifurcation values in ``param_name`` for every mode up to lambda_max.

    For d the closed-form root is used; any other parameter is bracketed on a uniform
    scan grid and refined with Brent's method. Sorted by descending critical value.
    """
    if param_name not in PARAM_NAMES:
        raise InvalidArgumentException(f"unknown parameter {param_name!r}")
    lo, hi = value_range
    if not lo < hi:
        raise InvalidArgumentException(f"range must be increasing, got {value_range}")
    modes = laplacian_spectrum(spec, lambda_max)
    predictions: List[TuringPrediction] = []
    if param_name == "d":
        for mode in modes:
            d_b = critical_d(p, mode.lam)
            if d_b is not None and lo < d_b <= hi:
                predictions.append(TuringPrediction(mode, d_b, "d"))
    else:
        a_lo, a_hi = admissible_interval(p, param_name, value_range, scan_points)
        for mode in modes:
            def det_of(value: float, lam: float = mode.lam) -> float:
                return char_det(p.with_value(param_name, value), lam)

            for root in _scan_roots(det_of, a_lo, a_hi, scan_points, xtol):
                predictions.append(TuringPrediction(mode, root, param_name))
    predictions.sort(key=lambda pr: (-pr.critical_value, pr.mode.lam))
    logger.info(f"{len(predictions)} predicted bifurcations in {param_name} "
                f"from {len(modes)} modes")
    return predictions


def d_b_curve(p: Params, lambdas: Sequence[float]) -> np.ndarray:
    """d_B(λ) on a grid; NaN where no positive root exists."""
    return np.array([
        np.nan if (value := critical_d(p, float(lam))) is None else value for lam in lambdas
    ])
