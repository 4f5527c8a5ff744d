import math

import numpy as np
import pytest

from oppc.errors import PhaseUndefined, ValidationError
from oppc.pulse import (
    FIELD_SCALE,
    PulseParams,
    calibrated,
    field_at,
    spectral_phase_amplitude,
    transform_on_grid,
    windowed_transform,
)

# Reference pulse used throughout (unit amplitude, natural units).
P_PLUS = PulseParams(E0=1.0, Omega_L=10.0, t0=10.0, width=4.0, chi=2.5)
P_MINUS = P_PLUS.flipped()

# Frozen values from the dense-trapezoid oracle below (n = 2_000_001).
ORACLE_FULL_PLUS = 5.5437472579547342e-02 + 4.1055969381360014e-01j
ORACLE_FULL_MINUS = -3.5219548449533011e-01 - 2.1815342365276968e-01j
ORACLE_T10_PLUS = 6.5216419172765883e-02 + 4.1599015935160882e-01j
ORACLE_AMP = 4.1428562073806635e-01
ORACLE_PHASE_PLUS = 1.4365790996372287
ORACLE_PHASE_MINUS = -2.5870231780984692
CALIBRATED_E0 = 0.01165751132491662


def oracle_transform(p, omega, t=None, n=2_000_001):
    """Dense trapezoid evaluation of the windowed transform."""
    r = p.width * math.sqrt(4.0 * math.log(10.0))
    hi = p.t0 + r if t is None else min(t, p.t0 + r)
    lo = p.t0 - r
    if hi <= lo:
        return 0.0j
    s = np.linspace(lo, hi, n)
    return np.trapezoid(field_at(p, s) * np.exp(-1j * omega * s), s)


def test_transform_matches_frozen_oracle():
    assert abs(windowed_transform(P_PLUS, 1.0) - ORACLE_FULL_PLUS) < 1e-10
    assert abs(windowed_transform(P_MINUS, 1.0) - ORACLE_FULL_MINUS) < 1e-10


def test_transform_matches_live_oracle_at_offresonant_frequency():
    val = windowed_transform(P_PLUS, 3.7)
    ref = oracle_transform(P_PLUS, 3.7, n=400_001)
    assert abs(val - ref) < 1e-8


def test_windowed_transform_midpulse():
    assert abs(windowed_transform(P_PLUS, 1.0, 10.0) - ORACLE_T10_PLUS) < 1e-9


def test_window_before_support_is_zero():
    t_lo, _ = P_PLUS.support
    assert windowed_transform(P_PLUS, 1.0, t_lo - 1.0) == 0.0


def test_spectral_amplitude_is_chirp_invariant():
    amp_p, _ = spectral_phase_amplitude(P_PLUS, 1.0)
    amp_m, _ = spectral_phase_amplitude(P_MINUS, 1.0)
    assert amp_p == pytest.approx(ORACLE_AMP, rel=1e-10)
    assert amp_m == pytest.approx(amp_p, rel=1e-12)


def test_spectral_phase_differs_between_chirps():
    _, ph_p = spectral_phase_amplitude(P_PLUS, 1.0)
    _, ph_m = spectral_phase_amplitude(P_MINUS, 1.0)
    assert ph_p == pytest.approx(ORACLE_PHASE_PLUS, abs=1e-10)
    assert ph_m == pytest.approx(ORACLE_PHASE_MINUS, abs=1e-10)
    assert abs(ph_p - ph_m) > 1e-3
    for ph in (ph_p, ph_m):
        assert -math.pi < ph <= math.pi


def test_chirp_flip_conjugation_identity():
    # E_{-chi}(inf; omega) = exp(-2 i omega t0) conj(E_{+chi}(inf; omega))
    for omega in (0.5, 1.0, 2.3):
        lhs = windowed_transform(P_MINUS, omega)
        rhs = np.exp(-2j * omega * P_PLUS.t0) * np.conj(
            windowed_transform(P_PLUS, omega)
        )
        assert abs(lhs - rhs) < 1e-12


def test_field_is_negligible_outside_support():
    t_lo, t_hi = P_PLUS.support
    assert abs(field_at(P_PLUS, t_lo)) <= 1.001e-16 * P_PLUS.E0
    assert abs(field_at(P_PLUS, t_hi + 2.0)) < 1e-16 * P_PLUS.E0


def test_transform_on_grid_matches_pointwise():
    ts = np.linspace(0.0, 24.0, 2401)
    vals = transform_on_grid(P_PLUS, 1.0, ts)
    for k in (0, 700, 1200, 2400):
        assert abs(vals[k] - windowed_transform(P_PLUS, 1.0, ts[k])) < 1e-10


def test_calibrated_reproduces_target_ratio():
    cal = calibrated(P_PLUS, 0.003415, 1.0)
    assert cal.E0 == pytest.approx(CALIBRATED_E0, rel=1e-10)
    amp, _ = spectral_phase_amplitude(cal, 1.0)
    assert amp / FIELD_SCALE == pytest.approx(0.003415, rel=1e-12)


def test_zero_field_transform_and_phase():
    off = PulseParams(E0=0.0, Omega_L=10.0, t0=10.0, width=4.0, chi=2.5)
    assert windowed_transform(off, 1.0) == 0.0
    with pytest.raises(PhaseUndefined):
        spectral_phase_amplitude(off, 1.0)


def test_parameter_validation():
    with pytest.raises(ValidationError):
        PulseParams(E0=-1.0, Omega_L=10.0, t0=0.0, width=4.0, chi=0.0)
    with pytest.raises(ValidationError):
        PulseParams(E0=1.0, Omega_L=0.0, t0=0.0, width=4.0, chi=0.0)
    with pytest.raises(ValidationError):
        PulseParams(E0=1.0, Omega_L=10.0, t0=0.0, width=-4.0, chi=0.0)
