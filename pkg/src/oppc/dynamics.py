"""Reduced density-matrix trajectories and chirp-contrast observables.

The propagating function is linear in the initial state, so a trajectory
is one tensor contraction per grid time:

    rho_nm(t) = sum_{nu mu} J_{nm;nu mu}(t) rho_nu mu(0).

Everything here organizes that contraction: pruning the initial pairs
that actually carry weight, grouping the needed element columns, and
differencing the two chirp signs into a phase-contrast record.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .equilibrium import DensityMatrix, thermal_state
from .errors import InvariantViolation, MissingElement, ValidationError
from .greens import build_greens, time_grid
from .propagator import N_MAX, iter_element_blocks, unitary_block

__all__ = [
    "Trajectory",
    "PhaseContrast",
    "ElementSet",
    "needed_pairs",
    "evolve",
    "expectation",
    "post_pulse_start",
    "contrast_run",
    "phase_contrast",
    "write_trajectory_csv",
    "write_contrast_csv",
]

# Initial elements below this weight are never propagated; the thermal
# state's parity zeros fall out automatically at this cutoff.
WEIGHT_TOL = 1e-14
# Pairs whose propagated contribution stays below this are not recorded.
_RECORD_TOL = 1e-12

_TRACE_TOL = 1e-6
_POSITIVITY_FLOOR = -1e-8
# Near-caustic grid times (isolated, spaced ~pi) lose digits in the
# element recursion, and the loss deepens as the propagator envelope
# shrinks: measured asymmetry spikes are 3e-10 on a t_end=50 grid and
# 3e-8 by t_end=120.  The gate stays far above that roundoff and far
# below the O(element) asymmetry a conjugation-symmetry bug produces.
_HERMITICITY_TOL = 1e-6


def _as_matrix(initial):
    if isinstance(initial, DensityMatrix):
        mat = np.asarray(initial.elements, dtype=complex)
    else:
        mat = np.asarray(initial, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValidationError(
            f"initial state must be a square matrix, got shape {mat.shape}"
        )
    tr = complex(np.trace(mat))
    if abs(tr - 1.0) > 1e-6:
        raise ValidationError(
            f"initial state must have unit trace, got {tr:.8g}"
        )
    if np.max(np.abs(mat - mat.conj().T)) > 1e-10:
        raise ValidationError("initial state must be hermitian")
    return mat


def needed_pairs(initial, tol=WEIGHT_TOL):
    """Initial index pairs (nu, mu) carrying weight above `tol`.

    Accepts a DensityMatrix or a plain square array.  For an even-parity
    state (any undisplaced thermal state) the odd nu-mu pairs are exact
    zeros and drop out here, which is what keeps the element workload at
    a handful of columns.
    """
    mat = np.asarray(
        initial.elements if isinstance(initial, DensityMatrix) else initial
    )
    idx = np.argwhere(np.abs(mat) > tol)
    return tuple(sorted((int(a), int(b)) for a, b in idx))


@dataclasses.dataclass(frozen=True)
class ElementSet:
    """Propagating-function columns grouped by the initial pair they feed.

    Attributes
    ----------
    grid : ndarray
        Evaluation times, shared by every column.
    n_cap : int
        Largest final index on either side; trajectories built from this
        set have dimension n_cap + 1.
    blocks : dict
        Maps (nu, mu) to a complex array of shape
        (len(grid), n_cap + 1, n_cap + 1) holding J_{nm;nu mu}.
    """

    grid: np.ndarray
    n_cap: int
    blocks: dict

    @classmethod
    def from_table(cls, tab, p, grid, pairs, n_cap=N_MAX, chunk=256):
        """Open-system columns for `pairs`, streamed off the kernel."""
        pairs, nu_cap, mu_cap = _normalize_pairs(pairs)
        grid = np.asarray(grid, dtype=float)
        blocks = {
            pr: np.empty((grid.size, n_cap + 1, n_cap + 1), dtype=complex)
            for pr in pairs
        }
        caps = (n_cap, n_cap, nu_cap, mu_cap)
        for sl, blk in iter_element_blocks(tab, p, grid, caps, chunk=chunk):
            for nu, mu in pairs:
                blocks[(nu, mu)][sl] = blk[:, :, :, nu, mu]
        return cls(grid=grid, n_cap=n_cap, blocks=blocks)

    @classmethod
    def from_unitary(cls, p, grid, pairs, n_cap=N_MAX):
        """Bath-free columns from the displacement closed forms."""
        pairs, nu_cap, mu_cap = _normalize_pairs(pairs)
        grid = np.asarray(grid, dtype=float)
        blk = unitary_block(p, grid, (n_cap, n_cap, nu_cap, mu_cap))
        blocks = {
            (nu, mu): np.ascontiguousarray(blk[:, :, :, nu, mu])
            for nu, mu in pairs
        }
        return cls(grid=grid, n_cap=n_cap, blocks=blocks)

    @classmethod
    def from_elements(cls, elements, grid):
        """Assemble from individual PropagatorElement series.

        Every (nu, mu) pair present must be covered by all final indices
        (n, m) up to the largest one seen; holes raise MissingElement.
        """
        grid = np.asarray(grid, dtype=float)
        by_pair = {}
        n_cap = 0
        for el in elements:
            n, m, nu, mu = el.indices
            n_cap = max(n_cap, n, m)
            if el.values.shape != grid.shape:
                raise ValidationError(
                    f"element {el.indices} has {el.values.size} values for "
                    f"a grid of {grid.size} times"
                )
            by_pair.setdefault((nu, mu), {})[(n, m)] = el.values
        if not by_pair:
            raise ValidationError("at least one element series is required")
        blocks = {}
        for pair, cols in by_pair.items():
            arr = np.empty((grid.size, n_cap + 1, n_cap + 1), dtype=complex)
            for n in range(n_cap + 1):
                for m in range(n_cap + 1):
                    try:
                        arr[:, n, m] = cols[(n, m)]
                    except KeyError:
                        raise MissingElement(
                            f"element ({n}, {m}; {pair[0]}, {pair[1]}) is "
                            f"absent but the set reaches n_cap = {n_cap}"
                        ) from None
            blocks[pair] = arr
        return cls(grid=grid, n_cap=n_cap, blocks=blocks)


def _normalize_pairs(pairs):
    pairs = tuple(sorted({(int(a), int(b)) for a, b in pairs}))
    if not pairs:
        raise ValidationError("at least one initial pair is required")
    for nu, mu in pairs:
        if not (0 <= nu <= N_MAX and 0 <= mu <= N_MAX):
            raise ValidationError(
                f"initial pair ({nu}, {mu}) outside the supported range"
            )
    nu_cap = max(p[0] for p in pairs)
    mu_cap = max(p[1] for p in pairs)
    return pairs, nu_cap, mu_cap


@dataclasses.dataclass(frozen=True)
class Trajectory:
    """Density-matrix history on a time grid.

    Attributes
    ----------
    grid : ndarray
        Times.
    states : ndarray, shape (len(grid), dim, dim)
        <n|rho(t)|m> with dim = n_cap + 1 of the element set used.
    contributing : tuple
        Initial (nu, mu) pairs whose propagated contribution exceeded
        1e-12 somewhere on the grid.
    config : object
        Whatever scenario description the caller wants attached; not
        interpreted here.
    """

    grid: np.ndarray
    states: np.ndarray
    contributing: tuple
    config: object = None

    @property
    def dim(self):
        return self.states.shape[1]

    def state(self, k):
        """One grid point as a DensityMatrix (truncation loss as leakage)."""
        mat = self.states[k]
        leak = 1.0 - float(np.trace(mat).real)
        return DensityMatrix(dim=self.dim, elements=mat,
                             leakage=max(leak, 0.0))

    def population(self, n):
        """<n|rho(t)|n> as a real array."""
        vals = self.states[:, n, n]
        return vals.real


def evolve(initial, elements, grid=None, config=None,
           positivity_floor=_POSITIVITY_FLOOR):
    """Contract an initial state through an element set.

    Parameters
    ----------
    initial : DensityMatrix or square array
        Hermitian, unit trace.
    elements : ElementSet or iterable of PropagatorElement
        Must cover every initial pair with weight above 1e-14; an
        iterable needs `grid` to be passed as well.
    grid : ndarray, optional
        Required with a bare element iterable; with an ElementSet it
        must match the set's own grid if given.
    config : object, optional
        Attached to the trajectory untouched.
    positivity_floor : float, optional
        Most negative eigenvalue tolerated, -1e-8 by default.  The
        element tensor encodes a correlated thermal preparation, so a
        bare (factorized) initial state picks up transient negativity
        of order gamma while the bath adjusts; callers propagating such
        states on purpose pass a floor sized to that slippage.

    Raises
    ------
    MissingElement
        A needed column is absent.
    InvariantViolation
        Hermiticity, trace, or positivity drift beyond bounds, which
        signals broken element input rather than interesting physics.
    """
    mat = _as_matrix(initial)
    if not isinstance(elements, ElementSet):
        if grid is None:
            raise ValidationError(
                "a bare element iterable needs an explicit time grid"
            )
        elements = ElementSet.from_elements(elements, grid)
    if grid is not None:
        grid = np.asarray(grid, dtype=float)
        if grid.shape != elements.grid.shape or np.max(
            np.abs(grid - elements.grid)
        ) > 1e-12:
            raise ValidationError("grid does not match the element set")
    grid = elements.grid

    dim = elements.n_cap + 1
    states = np.zeros((grid.size, dim, dim), dtype=complex)
    contributing = []
    for nu, mu in needed_pairs(mat):
        try:
            blk = elements.blocks[(nu, mu)]
        except KeyError:
            raise MissingElement(
                f"no element column for initial pair ({nu}, {mu}) with "
                f"weight {abs(mat[nu, mu]):.2e}"
            ) from None
        term = blk * mat[nu, mu]
        states += term
        if np.max(np.abs(term)) > _RECORD_TOL:
            contributing.append((nu, mu))

    herm = np.max(np.abs(states - np.conj(np.transpose(states, (0, 2, 1)))))
    if herm > _HERMITICITY_TOL:
        raise InvariantViolation(
            f"propagated state lost hermiticity ({herm:.2e})"
        )
    traces = np.einsum("tnn->t", states).real
    drift = float(np.max(np.abs(traces - 1.0)))
    if drift > _TRACE_TOL:
        raise InvariantViolation(
            f"trace drifted by {drift:.2e}; raise n_cap or check the "
            "element input"
        )
    if not positivity_floor <= 0.0:
        raise ValidationError(
            f"positivity floor must be non-positive, got {positivity_floor}"
        )
    floor = float(np.min(np.linalg.eigvalsh(states)))
    if floor < positivity_floor:
        raise InvariantViolation(
            f"propagated state has eigenvalue {floor:.2e} below the "
            f"positivity floor {positivity_floor:.2e}"
        )
    return Trajectory(grid=grid, states=states,
                      contributing=tuple(contributing), config=config)


def expectation(traj, o_diag):
    """Expectation of a number-diagonal observable along a trajectory.

    o_diag holds the weights o_n; the result is sum_n o_n <n|rho(t)|n>
    per grid point.  The imaginary residue is checked (bound 1e-10) and
    discarded.
    """
    o = np.asarray(o_diag, dtype=float)
    if o.shape != (traj.dim,):
        raise ValidationError(
            f"observable weights must have length {traj.dim}, "
            f"got {o.shape}"
        )
    vals = np.einsum("tnn,n->t", traj.states, o)
    resid = float(np.max(np.abs(vals.imag)))
    if resid > 1e-10:
        raise InvariantViolation(
            f"diagonal observable picked up imaginary part {resid:.2e}"
        )
    return vals.real


def post_pulse_start(p):
    """Time after which the envelope is below exp(-4) of its peak."""
    return p.t0 + p.width


def _observable(observable_id, dim):
    """(weights, canonical id) for the supported diagonal observables."""
    if isinstance(observable_id, (int, np.integer)):
        n = int(observable_id)
        if not 0 <= n < dim:
            raise ValidationError(
                f"population index {n} outside dimension {dim}"
            )
        w = np.zeros(dim)
        w[n] = 1.0
        return w, f"pop{n}"
    if isinstance(observable_id, str):
        name = observable_id.strip().lower()
        if name.startswith("pop"):
            return _observable(int(name[3:]), dim)
        if name == "number":
            return np.arange(dim, dtype=float), "number"
        if name == "trace":
            return np.ones(dim), "trace"
        raise ValidationError(
            f"unknown observable {observable_id!r}; use popN, number, "
            "trace, or explicit weights"
        )
    w = np.asarray(observable_id, dtype=float)
    if w.shape != (dim,):
        raise ValidationError(
            f"observable weights must have length {dim}, got {w.shape}"
        )
    return w, "custom"


@dataclasses.dataclass(frozen=True)
class PhaseContrast:
    """Pointwise difference of one observable between the two chirp signs.

    delta is observable(+chi) - observable(-chi) on the grid.  The
    summary scalars use the window after `pulse_end`: `post_pulse_max`
    is max |delta| there, and `decay_time` is the first time after that
    maximum at which |delta| drops below a tenth of it (None when that
    never happens inside the grid).
    """

    grid: np.ndarray
    delta: np.ndarray
    observable_id: str
    pulse_end: float
    post_pulse_max: float
    decay_time: float | None


def contrast_run(cfg, observable_ids):
    """Run both chirp signs of a scenario and difference several observables.

    The kernel table and the per-sign element sets are built once and
    shared across observables, which is what keeps multi-observable
    contrast runs affordable; the element sets dominate the cost.
    Returns one PhaseContrast per entry of `observable_ids`, in order.
    """
    p = cfg.pulse
    if not p.chi > 0.0:
        raise ValidationError(
            f"contrast runs are defined for chi > 0, got {p.chi}"
        )
    if not len(observable_ids):
        raise ValidationError("need at least one observable")
    grid = time_grid(cfg.t_end, cfg.dt)
    state = thermal_state(cfg.bath, cfg.beta, n_max=cfg.n_max)
    pairs = needed_pairs(state.rho)
    resolved = [_observable(o, cfg.n_max + 1) for o in observable_ids]

    free = cfg.bath is None or cfg.bath.gamma == 0.0
    tab = None if free else build_greens(cfg.bath, beta=cfg.beta, grid=grid)

    traces = []
    for pulse in (p, p.flipped()):
        if free:
            eset = ElementSet.from_unitary(pulse, grid, pairs,
                                           n_cap=cfg.n_max)
        else:
            eset = ElementSet.from_table(tab, pulse, grid, pairs,
                                         n_cap=cfg.n_max)
        traj = evolve(state.rho, eset, config=cfg)
        traces.append(np.stack([expectation(traj, w) for w, _ in resolved]))
        del eset, traj

    end = post_pulse_start(p)
    out = []
    for k, (_, obs_id) in enumerate(resolved):
        delta = traces[0][k] - traces[1][k]
        if not np.all(np.isfinite(delta)):
            raise InvariantViolation(
                f"contrast of {obs_id} is not finite everywhere"
            )
        if abs(delta[0]) > 1e-12:
            raise InvariantViolation(
                f"contrast at t=0 is {delta[0]:.2e}; the two signs must "
                "start from the same state"
            )
        pmax, decay_time = _summarize(grid, delta, end)
        out.append(PhaseContrast(grid=grid, delta=delta,
                                 observable_id=obs_id, pulse_end=end,
                                 post_pulse_max=pmax,
                                 decay_time=decay_time))
    return out


def phase_contrast(cfg, observable_id):
    """Run both chirp signs of a scenario and difference one observable.

    `cfg` carries the scenario: attributes `pulse` (chi > 0), `bath`
    (spectral density model, or None for no coupling), `beta`, `t_end`,
    `dt`, and `n_max`.  The initial state is the correlated thermal
    state of the configured bath; zero coupling dispatches to the
    bath-free closed forms and needs no kernel table.
    """
    return contrast_run(cfg, (observable_id,))[0]


def _summarize(grid, delta, end):
    """Post-pulse peak of |delta| and the time it falls below 10% of it.

    The decay time is searched from the peak onward; None when |delta|
    never drops that far inside the grid.
    """
    post = np.flatnonzero(grid >= end)
    if post.size == 0:
        raise ValidationError(
            f"grid ends at {grid[-1]} before the pulse window closes "
            f"at {end}"
        )
    tail = np.abs(delta[post])
    pmax = float(tail.max())
    decay_time = None
    if pmax > 0.0:
        k0 = int(np.argmax(tail))
        below = np.flatnonzero(tail[k0:] < 0.1 * pmax)
        if below.size:
            decay_time = float(grid[post[k0 + below[0]]])
    return pmax, decay_time


# ---------------------------------------------------------------------------
# CSV export


def _fmt(x):
    return "%.17g" % x


def write_trajectory_csv(path, traj, index_pairs):
    """Write t plus re/im columns of the configured matrix elements."""
    pairs = [(int(n), int(m)) for n, m in index_pairs]
    for n, m in pairs:
        if not (0 <= n < traj.dim and 0 <= m < traj.dim):
            raise ValidationError(
                f"index pair ({n}, {m}) outside dimension {traj.dim}"
            )
    header = "t," + ",".join(
        f"rho_{n}_{m}_re,rho_{n}_{m}_im" for n, m in pairs
    )
    lines = [header]
    for k, t in enumerate(traj.grid):
        row = [_fmt(t)]
        for n, m in pairs:
            v = traj.states[k, n, m]
            row.append(_fmt(v.real))
            row.append(_fmt(v.imag))
        lines.append(",".join(row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_contrast_csv(path, pc):
    """Write the t,delta record of one phase contrast."""
    lines = ["t,delta"]
    for t, d in zip(pc.grid, pc.delta):
        lines.append(f"{_fmt(t)},{_fmt(d)}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
