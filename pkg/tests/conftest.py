"""Shared fixtures: cached ground-state solves and a dense reference operator."""

import numpy as np
import pytest

from mxgs.groundstate import SolverConfig, solve_ground_state
from mxgs.spectral import SymbolParams, build_grid

_STATE_CACHE = {}


def cached_state(s, p=2.0, N=2048, L=40.0, n=1):
    """Solve once per (n, s, p, N, L) for the whole session."""
    key = (n, float(s), float(p), int(N), float(L))
    if key not in _STATE_CACHE:
        grid = build_grid(n, N, L)
        params = SymbolParams(n=n, s=float(s), p=float(p))
        _STATE_CACHE[key] = solve_ground_state(params, grid, config=SolverConfig())
    return _STATE_CACHE[key]


@pytest.fixture
def state_half():
    return cached_state(0.5)


def dense_multiplier_matrix(N, L, s, shift=1.0):
    """Dense symbol matrix built from the explicit DFT matrix (oracle route)."""
    j = np.arange(N)
    F = np.exp(-2j * np.pi * np.outer(j, j) / N)
    xi = (np.pi / L) * np.fft.fftfreq(N, d=1.0 / N)
    w = shift + xi ** 2 + np.abs(xi) ** (2 * s)
    A = np.real(np.conj(F.T) @ (w[:, None] * F)) / N
    return 0.5 * (A + A.T)
