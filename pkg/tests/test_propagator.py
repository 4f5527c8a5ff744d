import math

import numpy as np
import pytest

from oppc.bath import OhmicDrude, SubOhmic
from oppc.equilibrium import gaussian_fock_matrix
from oppc.errors import (
    IndexOutOfRange,
    NearZeroDenominator,
    OutOfGrid,
    QuadratureNotConverged,
    ValidationError,
)
from oppc.greens import build_greens, time_grid
from oppc.pulse import FIELD_SCALE, PulseParams, calibrated, windowed_transform
from oppc import propagator
from oppc.propagator import (
    N_MAX,
    a_matrix,
    element_block,
    element_series,
    iter_element_blocks,
    j_0000,
    j_0020,
    j_general,
    m_matrix,
    unitary_block,
    unitary_elements,
)

D05 = OhmicDrude(gamma=0.05, omega_D=1.0)
DTINY = OhmicDrude(gamma=1e-8, omega_D=1.0)
SUB = SubOhmic(gamma=0.05, omega_ph=1.0, omega_D=1.0, s_exp=0.1)

# the central-figure drive: carrier 10, quadratic spectral chirp +-2.5,
# amplitude calibrated to a 0.003415 line-strength ratio at the system
# frequency
RAW = PulseParams(E0=1.0, Omega_L=10.0, t0=10.0, width=4.0, chi=2.5)
PULSE = calibrated(RAW, 0.003415, 1.0)
PULSE_NEG = PULSE.flipped()
NO_FIELD = PulseParams(E0=0.0, Omega_L=10.0, t0=10.0, width=4.0, chi=2.5)

GRID50 = time_grid(50.0, 0.01)

# behavior pins for the damped table (gamma = 0.05), generated by this
# code after the element engine was checked index-by-index against a
# dense-basis Schroedinger integration in the small-gamma limit
J0000_D05 = {
    1.0: 9.999261693605312e-01,
    15.0: 9.993619569126605e-01,
    30.0: 9.988323975466596e-01,
}
J0020_D05 = {
    1.0: -6.270635952889028e-03 + 1.516890190085448e-03j,
    15.0: 5.132234847795596e-03 - 2.995959232677336e-04j,
    30.0: 9.187144152150011e-04 + 3.989628796690427e-03j,
}
J1100_D05 = {
    1.0: 1.962814878188828e-05,
    15.0: 6.224613001359037e-04,
    30.0: 1.133744370245101e-03,
}
J1101_D05 = {
    15.0: 2.516611993449119e-03 + 6.082081293274180e-04j,
    30.0: 1.736345388269889e-03 + 4.372235309348263e-04j,
}
J0200_D05 = {
    1.0: -6.254902617452378e-03 + 3.881584614611630e-03j,
    15.0: -2.832964253797426e-03 - 2.670178631554647e-03j,
    30.0: -5.389328198968380e-03 - 1.837026220683466e-03j,
}
# chirp reversal moves the ground-state survival at the seventh digit
J0000_D05_NEG30 = 9.988315467831899e-01
CHIRP_DIFF_30 = 8.507635e-07

J0000_SUB = {
    1.0: 9.937788571476e-01,
    15.0: 9.925425446266e-01,
    30.0: 9.981444463940e-01,
}

# spectral line strength of the calibrated pulse: (0.003415)^2
X_INF = 1.166222500000e-05


@pytest.fixture(scope="module")
def tab_d05():
    return build_greens(D05, beta=40.0, grid=GRID50)


@pytest.fixture(scope="module")
def tab_tiny():
    return build_greens(DTINY, beta=40.0, grid=time_grid(30.0, 0.01))


@pytest.fixture(scope="module")
def tab_free():
    return build_greens(None, beta=40.0, grid=time_grid(30.0, 0.01))


@pytest.fixture(scope="module")
def tab_sub():
    return build_greens(SUB, beta=40.0, grid=GRID50)


def drive_projections(tab, p, t):
    """(E_+, E_-) at one time, assembled cancellation-safe from the table."""
    a, adot, _, _ = propagator._coeffs(tab, np.array([t]))
    n_p, n_pd = propagator._drive_projections(tab, p, np.array([t]))
    e_plus = float(-n_p[0] / (2.0 * a[0]))
    e_minus = float(n_pd[0] - n_p[0] * adot[0] / a[0])
    return e_plus, e_minus


# ---------------------------------------------------------------------------
# validation and the t = 0 identity


def test_caps_validation():
    with pytest.raises(IndexOutOfRange):
        propagator._validate_caps((N_MAX + 1, 0, 0, 0))
    with pytest.raises(IndexOutOfRange):
        propagator._validate_caps((2, 2, -1, 2))
    with pytest.raises(ValidationError):
        propagator._validate_caps((2, 2, 2))


def test_element_series_rejects_out_of_range_index(tab_d05):
    with pytest.raises(IndexOutOfRange):
        element_series(tab_d05, PULSE, N_MAX + 1, 0, 0, 0, np.array([1.0]))


def test_out_of_grid_time(tab_d05):
    with pytest.raises(OutOfGrid):
        j_0000(tab_d05, PULSE, 60.0)
    with pytest.raises(OutOfGrid):
        a_matrix(tab_d05, 60.0)


def test_identity_at_zero_time_is_exact(tab_d05):
    blk = element_block(tab_d05, PULSE, np.array([0.0]), (4, 4, 4, 4))
    assert np.array_equal(blk[0], propagator._identity_block((4, 4, 4, 4)))
    assert j_0000(tab_d05, PULSE, 0.0) == 1.0
    assert j_0020(tab_d05, PULSE, 0.0) == 0.0


# ---------------------------------------------------------------------------
# bath-free closed forms


def test_unitary_elements_without_field():
    for n, expect in ((0, (1.0, 0.0, 0.0)), (1, (0.0, 0.0, 1.0)),
                      (2, (0.0, 0.0, 0.0))):
        vals = unitary_elements(NO_FIELD, n, 7.0)
        assert vals == expect


def test_unitary_weak_field_balance():
    """Survival and one-photon gain exhaust the column to second order."""
    e00, _, e11 = unitary_elements(PULSE, 0, 50.0)
    x = abs(windowed_transform(PULSE, 1.0, None)) ** 2 / FIELD_SCALE**2
    assert math.isclose(x, X_INF, rel_tol=1e-9)
    assert abs(e11 - x * math.exp(-x)) < 1e-16
    assert abs(e00 + e11 - 1.0) < 1e-9
    # the first-order reading J_0011 = x misses by exactly 1 - e^-x; at
    # this line strength that is 1.17e-5 relative, far above the element
    # accuracy, so comparisons must use the exponential-order form
    gap = abs(e11 - x) / x
    assert math.isclose(gap, 1.0 - math.exp(-x), rel_tol=1e-6)
    assert gap > 1e-6


def test_unitary_no_postpulse_phase_control():
    """Populations forget the chirp sign once the pulse has passed."""
    for n in (0, 1):
        pos = unitary_elements(PULSE, n, 50.0)
        neg = unitary_elements(PULSE_NEG, n, 50.0)
        assert abs(pos[0] - neg[0]) < 1e-10
        assert abs(pos[2] - neg[2]) < 1e-10
    # but the phase-carrying element does not: equal magnitudes, order-one
    # phase separation
    p01 = unitary_elements(PULSE, 0, 50.0)[1]
    n01 = unitary_elements(PULSE_NEG, 0, 50.0)[1]
    assert abs(abs(p01) - abs(n01)) < 1e-12
    assert abs(p01 - n01) > 0.1 * abs(p01)


def test_unitary_block_matches_elements():
    ts = np.array([4.0, 12.0, 30.0])
    blk = unitary_block(PULSE, ts, (1, 1, 1, 1))
    for k, t in enumerate(ts):
        e00, e01, e11 = unitary_elements(PULSE, 0, float(t))
        assert abs(blk[k, 0, 0, 0, 0] - e00) < 1e-13
        assert abs(blk[k, 0, 0, 0, 1] - e01) < 1e-13
        assert abs(blk[k, 0, 0, 1, 0] - np.conj(e01)) < 1e-13
        assert abs(blk[k, 0, 0, 1, 1] - e11) < 1e-13


def test_unitary_block_coarse_grid_falls_back():
    """Wide time steps must not degrade the cumulative drive transform."""
    ts = np.arange(0.0, 50.1, 5.0)
    blk = unitary_block(PULSE, ts, (2, 2, 2, 2))
    per = np.stack(
        [unitary_block(PULSE, np.array([t]), (2, 2, 2, 2))[0] for t in ts]
    )
    assert np.max(np.abs(blk - per)) < 1e-13


# ---------------------------------------------------------------------------
# open-system block invariants


def test_block_trace_channel_sums(tab_d05):
    blk = element_block(tab_d05, PULSE, np.array([5.0, 15.0, 30.0]),
                        (12, 12, 4, 4))
    tr = np.einsum("tnncd->tcd", blk)
    assert np.max(np.abs(tr - np.eye(5)[None])) < 1e-12


def test_block_conjugation_symmetry(tab_d05):
    blk = element_block(tab_d05, PULSE, np.array([5.0, 15.0, 30.0]),
                        (4, 4, 4, 4))
    herm = np.conj(np.transpose(blk, (0, 2, 1, 4, 3)))
    assert np.max(np.abs(blk - herm)) < 1e-12


def test_undriven_block_fixes_thermal_state(tab_d05):
    """The correlated thermal matrix is a fixed point of the bare channel."""
    lam = gaussian_fock_matrix(tab_d05.q2, tab_d05.p2, 9)
    blk = element_block(tab_d05, NO_FIELD, np.array([10.0, 25.0]),
                        (8, 8, 8, 8))
    rho = np.einsum("tabcd,cd->tab", blk, lam)
    assert np.max(np.abs(rho[:, :6, :6] - lam[None, :6, :6])) < 1e-12


def test_small_gamma_recovers_driven_closed_forms(tab_tiny):
    """J_0000, J_1100, J_1111 against the bath-free forms, full window."""
    ts = np.round(np.arange(0.0, 30.0 + 1e-9, 0.5), 10)
    blk = element_block(tab_tiny, PULSE, ts, (1, 1, 1, 1))
    for k, t in enumerate(ts):
        e00 = unitary_elements(PULSE, 0, float(t))[0]
        f00, _, f11 = unitary_elements(PULSE, 1, float(t))
        assert abs(blk[k, 0, 0, 0, 0] - e00) < 1e-6
        assert abs(blk[k, 1, 1, 0, 0] - f00) < 1e-6
        assert abs(blk[k, 1, 1, 1, 1] - f11) < 1e-6


def test_small_gamma_full_corner_matches_unitary(tab_tiny):
    ts = np.array([4.0, 12.0, 21.0, 30.0])
    blk = element_block(tab_tiny, PULSE, ts, (3, 3, 3, 3))
    ref = unitary_block(PULSE, ts, (3, 3, 3, 3))
    assert np.max(np.abs(blk - ref)) < 1e-6


def test_free_table_diagonal_elements_forget_chirp(tab_free):
    """Element-level no-control at exactly zero coupling, post pulse."""
    ts = np.array([25.0, 30.0])
    pos = element_block(tab_free, PULSE, ts, (1, 1, 1, 1))
    neg = element_block(tab_free, PULSE_NEG, ts, (1, 1, 1, 1))
    for i in ((0, 0, 0, 0), (0, 0, 1, 1), (1, 1, 0, 0), (1, 1, 1, 1)):
        sel = (slice(None),) + i
        assert np.max(np.abs(pos[sel] - neg[sel])) < 1e-10


def test_free_table_survival_is_exactly_exponential(tab_free):
    for t in (5.0, 15.0, 25.0):
        x = abs(windowed_transform(PULSE, 1.0, t)) ** 2 / FIELD_SCALE**2
        assert abs(j_0000(tab_free, PULSE, t) - math.exp(-x)) < 1e-12


# ---------------------------------------------------------------------------
# field-coupling matrix


def test_a_matrix_is_real_symmetric(tab_d05):
    am = a_matrix(tab_d05, 12.3)
    assert am.entries.dtype == np.float64
    assert np.array_equal(am.entries, am.entries.T)
    qf = am.quadratic_form(0.3, -1.7)
    e = np.array([0.3, -1.7])
    assert math.isclose(qf, float(e @ am.entries @ e), rel_tol=1e-12)


def test_a_matrix_small_gamma_closed_form(tab_tiny):
    for t in (2.0, 7.5):
        ref = -np.array([[1.0, math.cos(t)], [math.cos(t), 1.0]])
        assert np.max(np.abs(a_matrix(tab_tiny, t).entries - ref)) < 1e-6


def test_exponent_reduces_to_line_power_at_small_gamma(tab_tiny):
    """E^T A E -> -2 |field transform|^2 / E0^2, by two distinct routes."""
    for t in (15.0, 25.0):
        rhs = -abs(windowed_transform(PULSE, 1.0, t)) ** 2
        ep, em = drive_projections(tab_tiny, PULSE, t)
        qf = a_matrix(tab_tiny, t).quadratic_form(ep, em)
        assert abs(qf - rhs) < 1e-10
        dual = 2.0 * (
            np.log(j_0000(tab_tiny, PULSE, t))
            - np.log(j_0000(tab_tiny, NO_FIELD, t))
        ).real
        assert abs(dual - rhs) < 1e-10


def test_exponent_insensitive_to_drive_projection_rescale(tab_d05):
    """A relative reweighting of the E_+ integrand leaves the exponent put."""
    ep, em = drive_projections(tab_d05, PULSE, 30.0)
    am = a_matrix(tab_d05, 30.0)
    shift = am.quadratic_form(ep * (1.0 + 1e-6), em) - am.quadratic_form(ep, em)
    assert abs(shift) < 1e-10


def test_exponent_retains_decaying_absolute_sensitivity(tab_d05):
    """The strict reading of 'depends on E_- only' does not hold.

    The partial derivative of the exponent along E_+ is finite
    (about -1.26e-3 at t = 30) and only fades with the damped pulse
    memory; what keeps the rescale test above small is that E_+ itself
    is small there, not an exact cancellation.
    """
    slopes = {}
    for t in (30.0, 50.0):
        ep, em = drive_projections(tab_d05, PULSE, t)
        am = a_matrix(tab_d05, t)
        slopes[t] = (
            am.quadratic_form(ep + 5e-7, em) - am.quadratic_form(ep - 5e-7, em)
        ) / 1e-6
    assert math.isclose(slopes[30.0], -1.260391e-03, rel_tol=1e-3)
    assert abs(slopes[50.0]) < 0.6 * abs(slopes[30.0])


def test_a_matrix_raises_at_caustics(tab_d05, tab_free):
    with pytest.raises(NearZeroDenominator):
        a_matrix(tab_d05, 0.0)
    with pytest.raises(NearZeroDenominator, match="G_\\+"):
        a_matrix(tab_free, math.pi)
    # near (not at) the zero the assembled entries stay order one
    am = a_matrix(tab_free, 3.13)
    assert np.all(np.isfinite(am.entries))
    assert np.max(np.abs(am.entries)) < 10.0


# ---------------------------------------------------------------------------
# kernel quadratic form


def test_m_matrix_structural_zeros_and_symmetry(tab_d05):
    for t in (0.5, 7.0, 23.0):
        mm = m_matrix(tab_d05, t)
        assert np.array_equal(mm.entries, mm.entries.T)
        for i, j in ((1, 1), (1, 3), (3, 1), (3, 3)):
            assert mm.entries[i, j] == 0.0


def test_m_matrix_rejects_zero_time(tab_d05):
    with pytest.raises(NearZeroDenominator):
        m_matrix(tab_d05, 0.0)


def test_m_matrix_is_congruent_to_kernel(tab_d05):
    """Mixed-coordinate entries equal B^T (Q' - 1) B with the fixed mixer."""
    a, adot, s, sdot = propagator._coeffs(tab_d05, np.array([7.3]))
    qp = propagator._q_prime_stack(tab_d05, a, adot, s, sdot)[0]
    cong = propagator._MIX.T @ (qp - np.eye(4)) @ propagator._MIX
    assert np.max(np.abs(cong - m_matrix(tab_d05, 7.3).entries)) < 1e-12


def test_m_matrix_det_bounded_away_from_zero(tab_d05):
    ts = np.round(np.arange(0.1, 30.0, 0.37), 10)
    dets = np.array([abs(m_matrix(tab_d05, float(t)).det) for t in ts])
    assert dets.min() > 0.01


def test_free_kernel_det_is_unity(tab_free):
    for t in (1.7, 2.9):
        assert abs(m_matrix(tab_free, t).det - 1.0) < 1e-6


def test_det_transfer_identity(tab_d05):
    """det Q' = det(M + diag(1/2, 2, 1/2, 2)), the exact amplitude link."""
    for t in (5.0, 15.0, 25.0):
        a, adot, s, sdot = propagator._coeffs(tab_d05, np.array([t]))
        qp = propagator._q_prime_stack(tab_d05, a, adot, s, sdot)[0]
        lhs = np.linalg.det(qp)
        rhs = np.linalg.det(
            m_matrix(tab_d05, t).entries + np.diag([0.5, 2.0, 0.5, 2.0])
        )
        assert abs(lhs - rhs) < 1e-10 * abs(lhs)


@pytest.mark.xfail(
    reason="the naive Gaussian-reduction normalization det Q' = "
    "2 pi^3 <q^2> det M does not hold for this kernel; the measured "
    "ratio wanders between 0.16 and 7 over the window.  The transfer "
    "identity above is what the amplitude actually uses.",
    strict=True,
)
def test_naive_gaussian_normalization(tab_d05):
    worst = 0.0
    for t in (5.0, 10.0, 15.0, 20.0, 25.0, 30.0):
        a, adot, s, sdot = propagator._coeffs(tab_d05, np.array([t]))
        qp = propagator._q_prime_stack(tab_d05, a, adot, s, sdot)[0]
        ratio = np.linalg.det(qp) / (
            2.0 * np.pi**3 * tab_d05.q2 * m_matrix(tab_d05, t).det
        )
        worst = max(worst, abs(ratio - 1.0))
    assert worst < 0.1


# ---------------------------------------------------------------------------
# ground-state survival element


def test_j0000_frozen_values(tab_d05):
    for t, expect in J0000_D05.items():
        val = j_0000(tab_d05, PULSE, t)
        assert abs(val.imag) < 1e-15
        assert math.isclose(val.real, expect, rel_tol=1e-9)


def test_j0000_frozen_values_subohmic(tab_sub):
    for t, expect in J0000_SUB.items():
        assert math.isclose(j_0000(tab_sub, PULSE, t).real, expect,
                            rel_tol=1e-9)


def test_j0000_array_input_matches_scalars(tab_d05):
    ts = np.array([1.0, 15.0, 30.0])
    arr = j_0000(tab_d05, PULSE, ts)
    assert arr.shape == (3,)
    for k, t in enumerate(ts):
        assert arr[k] == j_0000(tab_d05, PULSE, float(t))


def test_j0000_without_field_ignores_chirp(tab_d05):
    other = PulseParams(E0=0.0, Omega_L=10.0, t0=10.0, width=4.0, chi=-2.5)
    for t in (5.0, 20.0, 40.0):
        assert j_0000(tab_d05, NO_FIELD, t) == j_0000(tab_d05, other, t)


@pytest.mark.xfail(
    reason="the undriven survival factor is not strictly monotone: it "
    "breathes at twice the system frequency with 1e-4 steps while "
    "relaxing by 1.6e-3 overall, because the correlated initial state "
    "is not an exact eigenstate of the damped kernel",
    strict=True,
)
def test_j0000_undriven_relaxation_is_monotone(tab_d05):
    ts = np.round(np.arange(0.5, 50.0 + 1e-9, 0.5), 10)
    vals = np.real(j_0000(tab_d05, NO_FIELD, ts))
    assert np.all(np.diff(vals) <= 1e-12)


def test_j0000_undriven_net_relaxation(tab_d05):
    """What is true instead: bounded breathing on a slow net decay."""
    ts = np.round(np.arange(0.5, 50.0 + 1e-9, 0.5), 10)
    vals = np.real(j_0000(tab_d05, NO_FIELD, ts))
    assert vals[-1] < vals[0] - 1e-3
    assert np.max(np.diff(vals)) < 1e-4


def test_j0000_chirp_separation_and_remerge(tab_d05):
    pos30 = j_0000(tab_d05, PULSE, 30.0).real
    neg30 = j_0000(tab_d05, PULSE_NEG, 30.0).real
    assert math.isclose(neg30, J0000_D05_NEG30, rel_tol=1e-9)
    assert math.isclose(pos30 - neg30, CHIRP_DIFF_30, rel_tol=1e-3)
    d50 = j_0000(tab_d05, PULSE, 50.0).real - j_0000(tab_d05, PULSE_NEG, 50.0).real
    assert 0.0 < d50 < 0.5 * (pos30 - neg30)


# ---------------------------------------------------------------------------
# coherence-feeding element


def test_j0020_frozen_values(tab_d05):
    for t, expect in J0020_D05.items():
        val = j_0020(tab_d05, PULSE, t)
        assert abs(val - expect) < 1e-9 * abs(expect) + 1e-15


def test_j0020_nonzero_before_the_pulse(tab_d05):
    """Initial-state correlations act before any field arrives."""
    j1 = j_0020(tab_d05, PULSE, 1.0)
    j2 = j_0020(tab_d05, PULSE, 2.0)
    assert abs(j1) > 1e-3
    assert abs(j1 - j2) > 1e-4


def test_j0020_vanishes_without_coupling_or_drive(tab_tiny, tab_free):
    for t in (5.0, 20.0):
        assert abs(j_0020(tab_tiny, NO_FIELD, t)) < 1e-8
        assert abs(j_0020(tab_free, NO_FIELD, t)) < 1e-14


def test_j0020_undriven_tail_rotates_without_decay(tab_d05):
    """The initial-correlation part persists, turning at ~2 omega0."""
    ts = np.round(np.arange(30.0, 50.0 + 1e-9, 0.5), 10)
    vals = j_0020(tab_d05, NO_FIELD, ts)
    assert math.isclose(np.mean(np.abs(vals)), 3.815371e-03, rel_tol=1e-3)
    rate = np.polyfit(ts, np.unwrap(np.angle(vals)), 1)[0]
    assert abs(rate - (-2.0277)) < 0.02


def test_j0020_drive_induced_part_decays_at_damping_rate(tab_d05):
    ts = np.round(np.arange(30.0, 50.0 + 1e-9, 0.5), 10)
    diff = np.abs(j_0020(tab_d05, PULSE, ts) - j_0020(tab_d05, NO_FIELD, ts))
    slope = np.polyfit(ts, np.log(diff), 1)[0]
    assert abs(slope - (-D05.gamma)) < 0.005


@pytest.mark.xfail(
    reason="a long-time form proportional to the damped drive memory "
    "would send the whole element to zero; measured, the undriven "
    "element keeps a 3.4e-3 initial-correlation tail at t = 50 (the "
    "persistence is required by thermal-state stationarity).  Only the "
    "drive-induced part decays, at the damping rate, as the preceding "
    "test shows.",
    strict=True,
)
def test_j0020_decays_to_zero_at_long_times(tab_d05):
    assert abs(j_0020(tab_d05, NO_FIELD, 50.0)) < 1e-4


# ---------------------------------------------------------------------------
# general quadrature element


def test_j_general_matches_closed_forms(tab_d05):
    for t in (1.0, 15.0, 30.0):
        d0 = j_general(tab_d05, PULSE, 0, 0, 0, 0, t) - j_0000(tab_d05, PULSE, t)
        d2 = j_general(tab_d05, PULSE, 0, 0, 2, 0, t) - j_0020(tab_d05, PULSE, t)
        assert abs(d0) < 1e-8
        assert abs(d2) < 1e-8


def test_j_general_conjugation_pair(tab_d05):
    a1 = j_general(tab_d05, PULSE, 2, 1, 0, 1, 15.0)
    a2 = j_general(tab_d05, PULSE, 1, 2, 1, 0, 15.0)
    assert abs(a1 - np.conj(a2)) < 1e-12


def test_j_general_weak_field_gain_structure(tab_tiny):
    """J_1100 is (-E^T A E / 2) exp(E^T A E / 2) in the weak-field limit."""
    val = j_general(tab_tiny, PULSE, 1, 1, 0, 0, 30.0)
    eae = -abs(windowed_transform(PULSE, 1.0, 30.0)) ** 2
    assert abs(val - (-0.5 * eae) * math.exp(0.5 * eae)) < 1e-10


def test_j_general_quadrature_guard(tab_d05, monkeypatch):
    monkeypatch.setattr(propagator, "_GH_ORDERS", (4, 6))
    with pytest.raises(QuadratureNotConverged):
        j_general(tab_d05, PULSE, 3, 3, 2, 2, 15.0)


def test_j_general_rejects_out_of_range_index(tab_d05):
    with pytest.raises(IndexOutOfRange):
        j_general(tab_d05, PULSE, N_MAX + 1, 0, 0, 0, 15.0)


# ---------------------------------------------------------------------------
# element tables


def test_element_series_frozen_values(tab_d05):
    ts = np.array([1.0, 15.0, 30.0])
    for pins, idx in ((J1100_D05, (1, 1, 0, 0)), (J1101_D05, (1, 1, 0, 1)),
                      (J0200_D05, (0, 2, 0, 0))):
        ser = element_series(tab_d05, PULSE, *idx, ts)
        assert ser.indices == idx
        for k, t in enumerate(ts):
            if t not in pins:
                continue
            assert abs(ser.values[k] - pins[t]) < 1e-9 * abs(pins[t]) + 1e-15


def test_drive_linear_element_silent_before_pulse(tab_d05):
    ser = element_series(tab_d05, PULSE, 1, 1, 0, 1, np.array([1.0]))
    assert abs(ser.values[0]) < 1e-11


def test_element_series_matches_block_corner(tab_d05):
    ts = np.array([5.0, 15.0, 30.0])
    blk = element_block(tab_d05, PULSE, ts, (4, 4, 4, 4))
    ser = element_series(tab_d05, PULSE, 1, 1, 0, 1, ts)
    assert np.max(np.abs(ser.values - blk[:, 1, 1, 0, 1])) < 1e-14


def test_iter_element_blocks_streams_the_same_values(tab_d05):
    ts = np.round(np.arange(0.0, 30.0 + 1e-9, 0.1), 10)
    blk = element_block(tab_d05, PULSE, ts, (2, 2, 2, 2))
    parts = np.empty_like(blk)
    covered = 0
    for sl, chunk in iter_element_blocks(tab_d05, PULSE, ts, (2, 2, 2, 2),
                                         chunk=77):
        parts[sl] = chunk
        covered += chunk.shape[0]
    assert covered == ts.size
    assert np.allclose(parts, blk, rtol=1e-12, atol=0.0)
