import numpy as np
import pytest

from torusns.diagnostics import build_report
from torusns.fespace import build_spaces
from torusns.forms import assemble_operators
from torusns.mesh import build_torus_mesh
from torusns.steppers import SchemeConfig, run
from torusns.trig import sine_shear, tg_like


@pytest.fixture(scope="session")
def level():
    """Shared (spaces, operators) per mesh level; built once per session."""
    cache = {}

    def get(n):
        if n not in cache:
            spaces = build_spaces(build_torus_mesh(n))
            cache[n] = (spaces, assemble_operators(spaces))
        return cache[n]

    return get


@pytest.fixture(scope="session")
def cn_runs(level):
    """Midpoint-scheme trajectories for all three convective cases."""
    spaces, ops = level(3)
    out = {}
    for case in (1, 2, 3):
        cfg = SchemeConfig(scheme="CN", case=case, nu=0.1, T=1.0, N=16)
        out[case] = run(cfg, spaces, ops, tg_like())
    return out


@pytest.fixture(scope="session")
def cnle_run(level):
    spaces, ops = level(3)
    cfg = SchemeConfig(scheme="CNLE", case=1, nu=0.1, T=1.0, N=16)
    return run(cfg, spaces, ops, tg_like())


@pytest.fixture(scope="session")
def cnab_runs(level):
    """Calm and deliberately overdriven explicit-convection runs.

    The step sizes differ by a factor 100 at fixed mesh; the large one
    overflows on purpose, so arithmetic warnings are silenced.
    """
    spaces, ops = level(3)
    out = {}
    with np.errstate(all="ignore"):
        for tag, dt in (("stable", 0.02), ("unstable", 2.0)):
            cfg = SchemeConfig(scheme="CNAB", case=1, nu=0.005, T=dt * 64,
                               N=64, c1=5.0)
            out[tag] = run(cfg, spaces, ops, tg_like())
    return out


STUDY_ALPHA = 0.6
STUDY_DT2 = 0.125  # target step at the coarsest level


@pytest.fixture(scope="session")
def shear_study(level):
    """Three-level refinement study with dt slaved to h^0.6."""
    h2 = np.sqrt(3.0) * np.pi
    C = STUDY_DT2 / h2 ** STUDY_ALPHA
    rows = []
    for n in (2, 3, 4):
        spaces, ops = level(n)
        dt_target = C * spaces.h ** STUDY_ALPHA
        N = int(np.ceil(1.0 / dt_target))
        cfg = SchemeConfig(scheme="CN", case=1, nu=0.1, T=1.0, N=N)
        traj = run(cfg, spaces, ops, sine_shear())
        report = build_report(traj, spaces, ops,
                              u0_norm=sine_shear().l2_norm())
        rows.append((n, spaces, ops, traj, report))
    return rows
