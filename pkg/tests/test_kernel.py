import os
import subprocess
import sys

import numpy as np
import pytest

from gausselim import _backend, _kernel_py
from gausselim.hilbert import SMEGenerator, dag
from gausselim.sde import IntegrationConfig, SimModel, StepSizeError, wiener_increments

from conftest import random_density, random_operator

compiled = pytest.importorskip("gausselim._kernel", reason="compiled kernel not built")


def random_model(d, rng, n_meas=2, n_jump=2, d_sys=None):
    H = random_operator(d, rng)
    jumps = tuple(0.3 * random_operator(d, rng) for _ in range(n_jump))
    meas = tuple(0.5 * j for j in jumps[:n_meas])
    gen = SMEGenerator(H=0.5 * (H + dag(H)), jumps=jumps, meas=meas)
    return SimModel(gen, random_density(d, rng), d_sys or d, "test")


@pytest.mark.parametrize("d,d_sys", [(3, 3), (8, 2), (40, 2)])
@pytest.mark.parametrize("mode", [0, 1])
def test_backends_agree(d, d_sys, mode, rng):
    model = random_model(d, rng, d_sys=d_sys)
    cfg = IntegrationConfig(dt=0.001, T=0.5, record_every=7, renormalize_every=3)
    inc = wiener_increments(5, 0, cfg.n_steps, model.n_meas, cfg.dt)
    if mode == 1:
        inc = inc + 0.01  # treat as a measured current
    out_c = model.run(inc, mode, cfg, kernel=compiled.integrate)
    out_p = model.run(inc, mode, cfg, kernel=_kernel_py.integrate)
    for a, b in zip(out_c, out_p):
        assert np.max(np.abs(a - b)) <= 1e-12


def test_states_are_normalized_and_hermitian(rng):
    model = random_model(6, rng, d_sys=6)
    cfg = IntegrationConfig(dt=0.001, T=1.0, record_every=1)
    inc = wiener_increments(1, 0, cfg.n_steps, model.n_meas, cfg.dt)
    _, states, final = model.run(inc, 0, cfg)
    traces = np.trace(states, axis1=1, axis2=2)
    assert np.max(np.abs(traces - 1)) <= 1e-14
    assert np.max(np.abs(states - np.conj(np.swapaxes(states, 1, 2)))) <= 1e-12


@pytest.mark.parametrize("kernel", [compiled.integrate, _kernel_py.integrate], ids=["compiled", "python"])
def test_trace_failure_reports_step(kernel, rng):
    model = random_model(4, rng)
    cfg = IntegrationConfig(dt=5.0, T=50.0)
    inc = wiener_increments(1, 0, cfg.n_steps, model.n_meas, cfg.dt)
    with pytest.raises(StepSizeError, match="at step"):
        model.run(inc, 0, cfg, kernel=kernel)


def test_backend_selection_env():
    code = "from gausselim import _backend; print(_backend.BACKEND)"
    env = dict(os.environ, GAUSSELIM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    env.pop("GAUSSELIM_PURE_PYTHON")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "compiled"
    assert _backend.python_integrate is _kernel_py.integrate
