"""Dissipative dynamics of a driven harmonic oscillator under chirped
weak pulses, and the phase control that system-bath coupling enables.

Modules
-------
pulse        chirped Gaussian field and its windowed spectral transform
bath         spectral densities, friction and decoherence kernels
greens       damped Green's function, symmetric correlation, field projections
equilibrium  correlated thermal state: second moments, Fock matrix, scans
propagator   propagating-function elements J_{nm;nu mu}(t)
dynamics     reduced density-matrix evolution and phase-contrast observables
cli          configuration-driven scenario runner (`oppc` console script)
"""

from . import errors

__all__ = ["errors"]
__version__ = "0.1.0"
