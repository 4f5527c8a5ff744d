r"""Correlated thermal state of the damped oscillator.

The reduced equilibrium state of a harmonic oscillator bilinearly coupled
to a harmonic bath is Gaussian with zero means and second moments given by
Matsubara sums over nu_n = 2 pi n / beta,

    <q^2> = (1/beta) sum_n [nu_n^2 + |nu_n| gh(|nu_n|) + w0^2]^(-1),
    <p^2> = (1/beta) sum_n [w0^2 + |nu_n| gh(|nu_n|)]
                        * [nu_n^2 + |nu_n| gh(|nu_n|) + w0^2]^(-1),

where gh is the Laplace transform of the dissipative kernel.  The sums run
over all integers; the n = 0 term of <q^2> is 1/w0^2 and that of <p^2> is 1.
The <p^2> sum has a slow 1/nu_n^2 tail (and would be log-divergent for a
strictly Ohmic kernel).

For the Drude kernel both summands are rational in nu with the cubic
denominator p(nu) = nu^3 + omega_D nu^2 + (w0^2 + gamma omega_D) nu
+ w0^2 omega_D, so after partial fractions the sums collapse to exact
digamma values, sum_{n>=1} 1/(n - x) pairs cancelling because the residues
sum to zero.  Near-degenerate cubic roots fall back to the generic route:
explicit terms until |nu_n| is safely beyond every kernel scale, completed
with Hurwitz-zeta tails built from the large-nu expansion of the summands.
The sub-Ohmic kernel always uses the generic route, with gh taken from a
cached log-log spline of its Laplace transform.

Because the state is Gaussian it is fully determined by (q2, p2): its
position-representation kernel is

    rho(q, q') = (2 pi q2)^(-1/2) exp(-a (q^2 + q'^2) - 2 c q q'),
    a = 1/(8 q2) + p2/2,     c = 1/(8 q2) - p2/2,

and number-basis elements follow from the two-dimensional Hermite moment
recursion in ``_hermite``.  Odd n+m elements vanish identically (the
recursion only couples indices of equal parity), which is the parity
selection rule behind the stationary coherences.
"""

from __future__ import annotations

import dataclasses
import functools
import math

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import digamma, zeta

from ._hermite import fock_norm, hermite_coefficients
from .bath import OhmicDrude, SubOhmic, _coth, kernel_derivatives, laplace_gamma
from .errors import (
    DomainError,
    SeriesNotConverged,
    TruncationTooSmall,
    ValidationError,
)

__all__ = [
    "DensityMatrix",
    "EquilibriumState",
    "second_moments",
    "effective_hamiltonian",
    "gaussian_fock_matrix",
    "stationary_state",
    "thermal_state",
    "coherence_scan",
    "write_scan_csv",
]


@dataclasses.dataclass(frozen=True)
class DensityMatrix:
    """Truncated density matrix in the bare number basis.

    Attributes
    ----------
    dim : int
        Truncation dimension (highest retained state plus one).
    elements : ndarray, shape (dim, dim), complex
        Matrix elements <n|rho|m>, renormalized to unit trace within the
        truncated space.
    leakage : float
        Trace weight outside the truncation before renormalization.
    """

    dim: int
    elements: np.ndarray
    leakage: float = 0.0


@dataclasses.dataclass(frozen=True)
class EquilibriumState:
    """Second moments, effective-Hamiltonian parameters, and the projected
    stationary density matrix for one (bath, temperature) configuration."""

    q2: float
    p2: float
    m_eff: float
    omega_eff: float
    rho: DensityMatrix
    beta: float
    model: object


def _free_moments(beta, omega0):
    c = float(_coth(0.5 * beta * omega0))
    return c / (2.0 * omega0), 0.5 * omega0 * c


@functools.lru_cache(maxsize=8)
def _unit_laplace_spline(omega_ph, omega_D, s_exp):
    """Cubic spline of log gh_1(nu) vs log nu for a unit-strength kernel.

    One quadrature per node, cached per kernel shape; strength scales the
    transform linearly so a single table serves every gamma.
    """
    unit = SubOhmic(gamma=1.0, omega_ph=omega_ph, omega_D=omega_D, s_exp=s_exp)
    lo, hi = 1e-8, 64.0 * omega_D
    nodes = np.geomspace(lo, hi, max(96, int(32 * math.log10(hi / lo))))
    vals = np.array([laplace_gamma(unit, float(nu)) for nu in nodes])
    return CubicSpline(np.log(nodes), np.log(vals)), lo, hi


def _subohmic_g4(model):
    """Fourth kernel derivative at 0+, from Re (1 + i omega_D t)^(-s)."""
    s = model.s_exp
    g0, _, _ = kernel_derivatives(model)
    return g0 * s * (s + 1.0) * (s + 2.0) * (s + 3.0) * model.omega_D ** 4


def _nu_gamma_hat(model, nus):
    """|nu| gh(|nu|) on an array of positive Matsubara frequencies."""
    if isinstance(model, OhmicDrude):
        return model.gamma * model.omega_D * nus / (nus + model.omega_D)
    spline, lo, hi = _unit_laplace_spline(model.omega_ph, model.omega_D, model.s_exp)
    out = np.empty_like(nus)
    mid = (nus >= lo) & (nus <= hi)
    out[mid] = model.gamma * nus[mid] * np.exp(spline(np.log(nus[mid])))
    high = nus > hi
    if np.any(high):
        g0, _, g2 = kernel_derivatives(model)
        nv = nus[high]
        out[high] = g0 + g2 / nv ** 2 + _subohmic_g4(model) / nv ** 4
    low = nus < lo
    for i in np.nonzero(low)[0]:
        out[i] = nus[i] * laplace_gamma(model, float(nus[i]))
    return out


def _tail_coefficients(model, omega0):
    """Large-nu expansions of the two summands.

    Returns (cq, cp) where the q-summand tail is sum_k cq[k] nu^(-k) and
    likewise for p, as {power: coefficient} dicts.
    """
    if isinstance(model, OhmicDrude):
        # nu gh = g wD (1 - wD/nu + wD^2/nu^2 - wD^3/nu^3 + ...)
        g, wd = model.gamma, model.omega_D
        a = omega0 ** 2 + g * wd
        b, c, d = g * wd ** 2, g * wd ** 3, g * wd ** 4
        cq = {2: 1.0, 4: -a, 5: b, 6: a * a - c, 7: d - 2.0 * a * b}
        cp = {2: a, 3: -b, 4: -(a * a - c), 5: 2.0 * a * b - d}
    else:
        # even kernel: nu gh = g0 + g2/nu^2 + g4/nu^4 + O(nu^-6)
        g0, _, g2 = kernel_derivatives(model)
        g4 = _subohmic_g4(model)
        a = omega0 ** 2 + g0
        cq = {2: 1.0, 4: -a, 6: a * a - g2}
        cp = {2: a, 4: -(a * a - g2), 6: a ** 3 - 2.0 * a * g2 + g4}
    return cq, cp


def _moment_sums(model, beta, omega0, n_explicit):
    kappa = beta / (2.0 * math.pi)
    nus = np.arange(1, n_explicit + 1) / kappa
    nugh = _nu_gamma_hat(model, nus)
    denom = nus ** 2 + nugh + omega0 ** 2
    qsum = np.sum(1.0 / denom)
    psum = np.sum((omega0 ** 2 + nugh) / denom)
    cq, cp = _tail_coefficients(model, omega0)
    for k, coef in cq.items():
        qsum += coef * kappa ** k * zeta(k, n_explicit + 1)
    for k, coef in cp.items():
        psum += coef * kappa ** k * zeta(k, n_explicit + 1)
    q2 = (1.0 / omega0 ** 2 + 2.0 * qsum) / beta
    p2 = (1.0 + 2.0 * psum) / beta
    return q2, p2


def _drude_moments_closed(model, beta, omega0):
    """Exact Matsubara sums for the Drude kernel via digamma partial
    fractions, or None when the cubic roots are too close to separate."""
    g, wd = model.gamma, model.omega_D
    roots = np.roots([1.0, wd, omega0 ** 2 + g * wd, omega0 ** 2 * wd])
    spread = min(
        abs(roots[i] - roots[j]) for i in range(3) for j in range(i + 1, 3)
    )
    if spread < 1e-8 * max(abs(roots)):
        return None
    dp = 3.0 * roots ** 2 + 2.0 * wd * roots + omega0 ** 2 + g * wd
    res_q = (roots + wd) / dp
    res_p = (omega0 ** 2 * (roots + wd) + g * wd * roots) / dp
    kappa = beta / (2.0 * math.pi)
    psi = digamma(1.0 - kappa * roots)
    qsum = float(np.real(-kappa * np.sum(res_q * psi)))
    psum = float(np.real(-kappa * np.sum(res_p * psi)))
    q2 = (1.0 / omega0 ** 2 + 2.0 * qsum) / beta
    p2 = (1.0 + 2.0 * psum) / beta
    return q2, p2


def second_moments(model, beta, omega0=1.0):
    """Equilibrium second moments <q^2>, <p^2> of the damped oscillator.

    Parameters
    ----------
    model : OhmicDrude, SubOhmic, or None
        Spectral density; None (or zero coupling) gives the free-oscillator
        closed form coth(beta w0 / 2) * (1/(2 w0), w0/2).
    beta : float
        Inverse temperature, must be positive.
    omega0 : float, optional
        Oscillator frequency in natural units.

    Returns
    -------
    (q2, p2) : pair of float

    Raises
    ------
    DomainError
        If beta is not positive.
    SeriesNotConverged
        If doubling the explicit Matsubara cutoff moves either moment by
        more than one part in 1e12.
    """
    if not beta > 0.0:
        raise DomainError(f"beta must be positive, got {beta}")
    if model is not None and not isinstance(model, (OhmicDrude, SubOhmic)):
        raise ValidationError(f"unsupported spectral density model {model!r}")
    if model is None or model.gamma == 0.0:
        return _free_moments(beta, omega0)

    if isinstance(model, OhmicDrude):
        closed = _drude_moments_closed(model, beta, omega0)
        if closed is not None:
            return closed

    nu_cut = (200.0 if isinstance(model, OhmicDrude) else 80.0) * max(
        omega0, model.omega_D
    )
    n_explicit = max(8, math.ceil(beta * nu_cut / (2.0 * math.pi)))
    q2a, p2a = _moment_sums(model, beta, omega0, n_explicit)
    q2b, p2b = _moment_sums(model, beta, omega0, 2 * n_explicit)
    if abs(q2b - q2a) > 1e-12 * abs(q2b) + 1e-15 or (
        abs(p2b - p2a) > 1e-12 * abs(p2b) + 1e-15
    ):
        raise SeriesNotConverged(
            f"Matsubara sums not settled at {n_explicit} explicit terms: "
            f"dq2={q2b - q2a:.2e}, dp2={p2b - p2a:.2e}"
        )
    return q2b, p2b


def effective_hamiltonian(q2, p2, beta):
    """Effective mass and frequency reproducing the given moments.

    The quadratic Hamiltonian whose Gibbs state at inverse temperature beta
    has exactly these second moments is fixed by

        omega_eff = (2/beta) arccoth(2 sqrt(q2 p2)),
        m_eff = sqrt(p2/q2) / omega_eff.

    Raises
    ------
    DomainError
        If q2*p2 <= 1/4; the arccoth argument must exceed 1, and moments
        saturating the uncertainty bound admit no finite-temperature
        quadratic Gibbs description.
    """
    x = 2.0 * math.sqrt(q2 * p2)
    if not x > 1.0:
        raise DomainError(
            f"q2*p2 = {q2 * p2:.16g} must exceed 1/4 for a thermal Gaussian"
        )
    omega_eff = (2.0 / beta) * math.atanh(1.0 / x)
    if not math.isfinite(omega_eff):
        raise DomainError("moments saturate the uncertainty bound")
    m_eff = math.sqrt(p2 / q2) / omega_eff
    return m_eff, omega_eff


def gaussian_fock_matrix(q2, p2, dim):
    """Number-basis matrix of the zero-mean Gaussian state with moments
    (q2, p2).

    Parameters
    ----------
    q2, p2 : float
        Position and momentum variances; their product must respect the
        uncertainty bound q2*p2 >= 1/4.
    dim : int
        Number of retained basis states.

    Returns
    -------
    ndarray, shape (dim, dim), complex
        Elements <n|rho|m> of the untruncated state; the trace of the
        returned block falls short of 1 by the truncation leakage.
    """
    if not (q2 > 0.0 and p2 > 0.0):
        raise DomainError(f"variances must be positive, got q2={q2}, p2={p2}")
    if q2 * p2 < 0.25 * (1.0 - 1e-12):
        raise DomainError(f"q2*p2 = {q2 * p2:.16g} violates the uncertainty bound")
    if dim < 1:
        raise ValidationError(f"dim must be >= 1, got {dim}")

    a = 1.0 / (8.0 * q2) + 0.5 * p2
    c = 1.0 / (8.0 * q2) - 0.5 * p2
    qp = np.array([[2.0 * a + 1.0, 2.0 * c], [2.0 * c, 2.0 * a + 1.0]])
    det = (2.0 * a + 1.0) ** 2 - 4.0 * c ** 2
    q_inv = np.array([[qp[1, 1], -qp[0, 1]], [-qp[1, 0], qp[0, 0]]]) / det
    tcoef = hermite_coefficients(
        q_inv[None, :, :], np.zeros((1, 2)), (dim - 1, dim - 1)
    )[0]
    norms = np.array([fock_norm(n) for n in range(dim)])
    pref = 2.0 * math.pi / math.sqrt(2.0 * math.pi * q2 * det)
    return pref * norms[:, None] * norms[None, :] * tcoef


def stationary_state(q2, p2, n_max):
    """Stationary density matrix in the bare basis, truncated at n_max.

    Parameters
    ----------
    q2, p2 : float
        Equilibrium second moments.
    n_max : int
        Highest retained number state; must be at least 4.

    Returns
    -------
    DensityMatrix
        Renormalized to unit trace within the truncation, with the raw
        leakage recorded.

    Raises
    ------
    TruncationTooSmall
        If the trace weight beyond n_max exceeds 1e-6.
    """
    if n_max < 4:
        raise ValidationError(f"n_max must be >= 4, got {n_max}")
    block = gaussian_fock_matrix(q2, p2, n_max + 1)
    tr = float(np.trace(block).real)
    leakage = 1.0 - tr
    if leakage > 1e-6:
        raise TruncationTooSmall(
            f"truncation at n_max={n_max} leaks {leakage:.3e} of the trace"
        )
    return DensityMatrix(dim=n_max + 1, elements=block / tr, leakage=leakage)


def thermal_state(model, beta, n_max=12, omega0=1.0):
    """Assemble the full EquilibriumState for one configuration.

    For zero coupling the effective parameters are the bare ones (the
    moment product saturates the arccoth domain at low temperature, where
    the generic formula has no finite limit).
    """
    q2, p2 = second_moments(model, beta, omega0=omega0)
    if model is None or model.gamma == 0.0:
        m_eff, omega_eff = 1.0, omega0
    else:
        m_eff, omega_eff = effective_hamiltonian(q2, p2, beta)
    rho = stationary_state(q2, p2, n_max)
    return EquilibriumState(
        q2=q2, p2=p2, m_eff=m_eff, omega_eff=omega_eff, rho=rho,
        beta=beta, model=model,
    )


def coherence_scan(model_family, gamma_grid, T_grid):
    """Stationary coherence <0|rho|2> over a (gamma, T) grid.

    Parameters
    ----------
    model_family : callable
        Maps a coupling strength gamma to a spectral density model.
    gamma_grid, T_grid : array_like
        Positive coupling strengths and temperatures.

    Returns
    -------
    ndarray, shape (len(gamma_grid), len(T_grid))
        <0|rho|2> per cell; cells whose Matsubara sums fail to converge
        are set to NaN.
    """
    gamma_grid = np.asarray(gamma_grid, dtype=float)
    T_grid = np.asarray(T_grid, dtype=float)
    if gamma_grid.size == 0 or T_grid.size == 0:
        raise ValidationError("scan grids must be non-empty")
    if np.any(gamma_grid < 0.0) or np.any(T_grid <= 0.0):
        raise ValidationError("scan grids must be positive")
    out = np.full((gamma_grid.size, T_grid.size), np.nan)
    for i, g in enumerate(gamma_grid):
        model = model_family(g)
        for j, temp in enumerate(T_grid):
            try:
                q2, p2 = second_moments(model, 1.0 / temp)
                out[i, j] = gaussian_fock_matrix(q2, p2, 3)[0, 2].real
            except SeriesNotConverged:
                pass
    return out


def write_scan_csv(path, gamma_grid, T_grid, values):
    """Write a contour grid as CSV with header ``gamma,T,coh02``.

    One cell per line, gamma outer loop; floats printed with %.17g so
    reruns are byte-identical.
    """
    gamma_grid = np.asarray(gamma_grid, dtype=float)
    T_grid = np.asarray(T_grid, dtype=float)
    values = np.asarray(values)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("gamma,T,coh02\n")
        for i, g in enumerate(gamma_grid):
            for j, temp in enumerate(T_grid):
                fh.write(f"{g:.17g},{temp:.17g},{values[i, j]:.17g}\n")
