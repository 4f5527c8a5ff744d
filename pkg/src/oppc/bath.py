r"""Bath spectral densities and the kernels they induce.

Two families are supported, both in natural oscillator units:

* Ohmic with a Drude cutoff,

      J(omega) = gamma omega omega_D^2 / (omega^2 + omega_D^2),

  whose friction kernel is the exponential
  gamma(t) = gamma omega_D exp(-omega_D |t|).

* Sub-Ohmic with exponential cutoff,

      J(omega) = gamma omega_ph^(1-s) omega^s exp(-omega/omega_D),
      0 < s < 1,

  whose friction kernel follows from the defining cosine transform
  gamma(t) = (2/pi) int_0^inf domega (J/omega) cos(omega t):

      gamma(t) = (2 gamma/pi) omega_ph^(1-s) omega_D^s Gamma(s)
                 (1 + omega_D^2 t^2)^(-s/2) cos(s arctan(omega_D |t|)).

  Short and long time limits of the ratio gamma(t)/gamma(0) are
  1 - s(1+s)(omega_D t)^2/2 and cos(pi s/2)(omega_D t)^(-s); the power-law
  tail is what sustains the non-Markovian behavior this model is used for.

The decoherence kernel is

    K'(t) = int_0^inf (domega/pi) J(omega) coth(beta omega/2) cos(omega t).

For the Drude model at t > 0 it reduces by contour integration to one
cutoff pole plus a Matsubara series (nu_n = 2 pi n / beta):

    K'(t) = (gamma omega_D^2/2) cot(beta omega_D/2) e^(-omega_D t)
          + (2 gamma omega_D^2/beta) sum_{n>=1} nu_n e^(-nu_n t)
            / (nu_n^2 - omega_D^2).

At t = 0 the Drude integrand behaves as gamma omega_D^2/omega in the UV,
so K'(0) is log-divergent at every temperature and the evaluation raises
instead of returning a number.  The sub-Ohmic kernel is UV-finite.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.integrate import quad
from scipy.special import gamma as gamma_fn

from .errors import DomainError, QuadratureNotConverged, SeriesNotConverged, ValidationError

__all__ = [
    "OhmicDrude",
    "SubOhmic",
    "spectral_density",
    "dissipative_kernel",
    "kernel_derivatives",
    "laplace_gamma",
    "decoherence_kernel",
]


@dataclasses.dataclass(frozen=True)
class OhmicDrude:
    """Ohmic spectral density with Drude cutoff omega_D and strength gamma."""

    gamma: float
    omega_D: float

    def __post_init__(self):
        problems = []
        if not self.gamma >= 0.0:
            problems.append(f"gamma must be >= 0, got {self.gamma}")
        if not self.omega_D > 0.0:
            problems.append(f"omega_D must be > 0, got {self.omega_D}")
        if problems:
            raise ValidationError("; ".join(problems))


@dataclasses.dataclass(frozen=True)
class SubOhmic:
    """Sub-Ohmic spectral density with exponent 0 < s_exp < 1."""

    gamma: float
    omega_ph: float
    omega_D: float
    s_exp: float

    def __post_init__(self):
        problems = []
        if not self.gamma >= 0.0:
            problems.append(f"gamma must be >= 0, got {self.gamma}")
        if not self.omega_ph > 0.0:
            problems.append(f"omega_ph must be > 0, got {self.omega_ph}")
        if not self.omega_D > 0.0:
            problems.append(f"omega_D must be > 0, got {self.omega_D}")
        if not 0.0 < self.s_exp < 1.0:
            problems.append(f"s_exp must lie in (0, 1), got {self.s_exp}")
        if problems:
            raise ValidationError("; ".join(problems))


def spectral_density(model, omega):
    """J(omega), extended oddly to negative frequencies."""
    w = np.asarray(omega, dtype=float)
    if isinstance(model, OhmicDrude):
        val = model.gamma * w * model.omega_D ** 2 / (w * w + model.omega_D ** 2)
    elif isinstance(model, SubOhmic):
        a = np.abs(w)
        val = (
            np.sign(w)
            * model.gamma
            * model.omega_ph ** (1.0 - model.s_exp)
            * a ** model.s_exp
            * np.exp(-a / model.omega_D)
        )
    else:
        raise DomainError(f"unknown spectral density model {model!r}")
    if np.ndim(omega) == 0:
        return float(val)
    return val


def dissipative_kernel(model, t):
    """Friction kernel gamma(t); even in t."""
    a = np.abs(np.asarray(t, dtype=float))
    if isinstance(model, OhmicDrude):
        val = model.gamma * model.omega_D * np.exp(-model.omega_D * a)
    elif isinstance(model, SubOhmic):
        s = model.s_exp
        x = model.omega_D * a
        val = (
            (2.0 * model.gamma / math.pi)
            * model.omega_ph ** (1.0 - s)
            * model.omega_D ** s
            * gamma_fn(s)
            * (1.0 + x * x) ** (-0.5 * s)
            * np.cos(s * np.arctan(x))
        )
    else:
        raise DomainError(f"unknown spectral density model {model!r}")
    if np.ndim(t) == 0:
        return float(val)
    return val


def kernel_derivatives(model):
    """(gamma(0), gamma'(0+), gamma''(0+)) used by series startups."""
    if isinstance(model, OhmicDrude):
        g0 = model.gamma * model.omega_D
        return g0, -model.omega_D * g0, model.omega_D ** 2 * g0
    if isinstance(model, SubOhmic):
        s = model.s_exp
        g0 = dissipative_kernel(model, 0.0)
        return g0, 0.0, -s * (1.0 + s) * model.omega_D ** 2 * g0
    raise DomainError(f"unknown spectral density model {model!r}")


def _subohmic_u_cut(model):
    # u = omega^s substitution renders the omega->0 end smooth; beyond
    # omega = 45 omega_D the exponential cutoff is below 3e-20.
    return (45.0 * model.omega_D) ** model.s_exp


def laplace_gamma(model, z):
    """Laplace transform gamma_hat(z) = int_0^inf gamma(t) e^(-zt) dt.

    Defined for Re z > 0.  Complex z is supported; the sub-Ohmic model
    integrates its frequency representation
    (2/pi) int_0^inf domega (J/omega) z/(z^2 + omega^2).
    """
    if np.real(z) <= 0.0:
        raise DomainError(f"laplace_gamma requires Re z > 0, got {z}")
    if isinstance(model, OhmicDrude):
        return model.gamma * model.omega_D / (z + model.omega_D)
    if not isinstance(model, SubOhmic):
        raise DomainError(f"unknown spectral density model {model!r}")
    s = model.s_exp
    pref = 2.0 * model.gamma * model.omega_ph ** (1.0 - s) / (math.pi * s)
    u_cut = _subohmic_u_cut(model)

    def integrand(u):
        w = u ** (1.0 / s)
        return math.exp(-w / model.omega_D) * (z / (z * z + w * w))

    kw = dict(limit=400, epsabs=1e-13, epsrel=1e-12)
    if np.iscomplexobj(np.asarray(z)) and np.imag(z) != 0.0:
        re, err_re = quad(lambda u: integrand(u).real, 0.0, u_cut, **kw)
        im, err_im = quad(lambda u: integrand(u).imag, 0.0, u_cut, **kw)
        val, err = re + 1j * im, abs(err_re) + abs(err_im)
    else:
        zr = float(np.real(z))
        peak = zr ** s if zr < 45.0 * model.omega_D else None
        pts = [peak] if peak else None
        val, err = quad(integrand, 0.0, u_cut, points=pts, **kw)
    if err > 1e-8 * (abs(val) + 1e-300) + 1e-13:
        raise QuadratureNotConverged(
            f"laplace_gamma({z}) error estimate {err:.2e} too large"
        )
    return pref * val


def _coth(x):
    """coth(x) for x > 0 with a series guard near zero."""
    x = np.asarray(x, dtype=float)
    small = x < 1e-4
    with np.errstate(divide="ignore"):
        series = 1.0 / x + x / 3.0
    return np.where(small, series, 1.0 / np.tanh(np.where(small, 1.0, x)))


def _drude_kprime_series(model, t, beta, tol=1e-14):
    wd = model.omega_D
    pole = 0.5 * model.gamma * wd * wd / math.tan(0.5 * beta * wd) * math.exp(-wd * t)
    nu1 = 2.0 * math.pi / beta
    # Terms decay like e^(-nu_n t)/nu_n; sum in blocks until negligible.
    total = 0.0
    n0 = 1
    block = 4096
    for _ in range(2000):
        n = np.arange(n0, n0 + block)
        nu = nu1 * n
        term = nu * np.exp(-nu * t) / (nu * nu - wd * wd)
        total += term.sum()
        if abs(term[-1]) < tol * (abs(total) + 1e-300) or nu[-1] * t > 745.0:
            break
        n0 += block
    else:
        raise SeriesNotConverged(
            f"decoherence kernel series at t={t} did not settle"
        )
    return pole + (2.0 * model.gamma * wd * wd / beta) * total


def _kprime_quadrature(model, t, beta, rtol=1e-7):
    """Direct frequency quadrature of J coth cos; UV-finite models only."""
    if isinstance(model, SubOhmic):
        s = model.s_exp
        u_cut = _subohmic_u_cut(model)
        u_br = min(1.0, u_cut / 2.0)

        def g(u):
            # With u = omega^s the thermal w^(s-1) divergence cancels the
            # jacobian exactly and the u -> 0 limit is finite.
            if u <= 0.0:
                return 2.0 * model.gamma * model.omega_ph ** (1.0 - s) / (
                    math.pi * beta * s
                )
            w = u ** (1.0 / s)
            jac = (1.0 / s) * u ** (1.0 / s - 1.0)
            j = model.gamma * model.omega_ph ** (1.0 - s) * w ** s * math.exp(
                -w / model.omega_D
            )
            return j * float(_coth(0.5 * beta * w)) * math.cos(w * t) * jac / math.pi

        kw = dict(epsabs=1e-12, epsrel=1e-11)
        low, err1 = quad(g, 0.0, u_br, limit=400, **kw)

        def f(w):
            j = model.gamma * model.omega_ph ** (1.0 - s) * w ** s * math.exp(
                -w / model.omega_D
            )
            return j * float(_coth(0.5 * beta * w)) / math.pi

        w_br = u_br ** (1.0 / s)
        w_cut = 45.0 * model.omega_D
        if t > 0.0:
            high, err2 = quad(f, w_br, w_cut, weight="cos", wvar=t, limit=800,
                              epsabs=kw["epsabs"], epsrel=kw["epsrel"])
        else:
            high, err2 = quad(f, w_br, w_cut, limit=800, **kw)
        val, err = low + high, abs(err1) + abs(err2)
        if err > rtol * (abs(val) + 1e-300) + 1e-11:
            raise QuadratureNotConverged(
                f"decoherence kernel quadrature at t={t}: error {err:.2e}"
            )
        return val
    raise QuadratureNotConverged(
        "direct quadrature fallback is only defined for UV-finite models"
    )


def decoherence_kernel(model, t, beta, rtol=1e-7):
    """K'(t) at inverse temperature beta; scalar t or array of t.

    OhmicDrude uses the pole + Matsubara closed form (quadrature has no
    chance against the UV log divergence that appears as t -> 0), and
    raises QuadratureNotConverged at t = 0 exactly, where no finite value
    exists.  SubOhmic integrates its UV-finite spectral form directly.
    """
    if beta <= 0.0:
        raise DomainError(f"beta must be positive, got {beta}")
    scalar = np.ndim(t) == 0
    ts = np.atleast_1d(np.abs(np.asarray(t, dtype=float)))
    out = np.empty(ts.shape, dtype=float)
    if isinstance(model, OhmicDrude):
        resonance = abs(0.5 * beta * model.omega_D / math.pi
                        - round(0.5 * beta * model.omega_D / math.pi))
        if resonance < 1e-6:
            raise QuadratureNotConverged(
                "beta*omega_D/2 sits on a Matsubara resonance; the pole and "
                "series terms cancel beyond double precision here"
            )
        for i, tv in enumerate(ts):
            if tv == 0.0:
                raise QuadratureNotConverged(
                    "K'(0) is UV log-divergent for the Drude model"
                )
            out[i] = _drude_kprime_series(model, tv, beta)
    elif isinstance(model, SubOhmic):
        for i, tv in enumerate(ts):
            out[i] = _kprime_quadrature(model, tv, beta, rtol=rtol)
    else:
        raise DomainError(f"unknown spectral density model {model!r}")
    return float(out[0]) if scalar else out
