"""Shared fixtures: expensive reference runs computed once per session."""

import time

import numpy as np
import pytest

from maxdiss.fields import Grid
from maxdiss.solver import Forcing, SystemSpec, solve, taylor_green


@pytest.fixture(scope="session")
def tg_reference():
    """Benchmark-scale decaying-vortex run: n=32, nu=0.1, dt=1e-3, T=1.

    Returns (trajectory, elapsed seconds, max L2 error vs the closed form).
    Shared by the fidelity, certification and recovery tests.
    """
    from maxdiss.fields import l2_norm

    nu = 0.1
    grid = Grid(32)
    spec = SystemSpec(nu=nu, grid=grid, t_end=1.0, dt=1e-3,
                      forcing=Forcing("zero"))
    v0 = taylor_green(0.0, nu, grid)
    start = time.perf_counter()
    traj = solve(spec, v0, sample_stride=25)
    elapsed = time.perf_counter() - start
    err = max(l2_norm(s - taylor_green(t, nu, grid))
              for t, s in zip(traj.times, traj.states))
    return traj, elapsed, err


@pytest.fixture(scope="session")
def tg_ladder():
    """Resolution-ladder family members n in {16, 24, 32}, shared data."""
    nu = 0.05
    members = []
    for n in (16, 24, 32):
        grid = Grid(n)
        spec = SystemSpec(nu=nu, grid=grid, t_end=0.5, dt=2.5e-3,
                          forcing=Forcing("zero"))
        members.append(solve(spec, taylor_green(0.0, nu, grid),
                             sample_stride=10))
    return members


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
