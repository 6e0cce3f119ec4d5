import os
import subprocess
import sys

import numpy as np
import pytest

from caraman import _kernel, _rng
from caraman.experiment import ProtocolConfig, build_rate_matrix, protocol_for

needs_compiled = pytest.mark.skipif(_kernel.compiled_kernel is None, reason="compiled kernel not built")


def test_splitmix64_reference_output():
    # first output of the reference splitmix64 generator seeded with 0
    assert int(_rng.mix64(np.array([_rng.GOLDEN]))[0]) == 0xE220A8397B1DCDAF


def test_uniforms_lie_in_half_open_unit_interval():
    keys = _rng.trial_keys(5, 0, 0, np.arange(100_000))
    u = _rng.draw(keys, 0)
    assert u.min() > 0.0 and u.max() <= 1.0
    assert abs(u.mean() - 0.5) < 5 * np.sqrt(1 / 12 / u.size)
    assert _rng.to_uniform(np.array([0], dtype=np.uint64))[0] == 2.0**-53
    assert _rng.to_uniform(np.array([2**64 - 1], dtype=np.uint64))[0] == 1.0


def test_draws_do_not_depend_on_batch_composition():
    all_keys = _rng.trial_keys(11, 1, 3, np.arange(50))
    some = _rng.trial_keys(11, 1, 3, np.array([7, 42]))
    assert np.array_equal(all_keys[[7, 42]], some)
    assert not np.array_equal(_rng.trial_keys(12, 1, 3, np.arange(50)), all_keys)
    assert not np.array_equal(_rng.trial_keys(11, 0, 3, np.arange(50)), all_keys)


def _inputs(n=20_000, intensity=8.7e7, seed=3):
    matrix = build_rate_matrix(protocol_for("+3/2", "x", intensity))
    keys = _rng.trial_keys(seed, 0, 0, np.arange(n))
    init = np.arange(n, dtype=np.int64) % 6
    return matrix, init, keys


@needs_compiled
@pytest.mark.parametrize("horizon", [0.0, 0.05, 1.0, 20.0])
def test_backends_agree_exactly(horizon):
    matrix, init, keys = _inputs()
    for mat in (matrix, matrix.single_step()):
        cum = mat.cumulative()
        a = _kernel.python_kernel(cum, init, keys, horizon)
        b = _kernel.compiled_kernel(cum, init, keys, horizon)
        assert np.array_equal(a, b)


@pytest.mark.parametrize("kernel", ["python_kernel", "compiled_kernel"])
def test_single_exit_rate_survival(kernel):
    fn = getattr(_kernel, kernel)
    if fn is None:
        pytest.skip("compiled kernel not built")
    r, t, n = 2.0, 0.5, 40_000
    rates = np.zeros((7, 7))
    rates[0, 6] = r
    keys = _rng.trial_keys(0, 0, 0, np.arange(n))
    final = fn(np.cumsum(rates, axis=1), np.zeros(n, dtype=np.int64), keys, t)
    p = np.mean(final == 0)
    expected = np.exp(-r * t)
    assert abs(p - expected) < 4 * np.sqrt(expected * (1 - expected) / n)


def test_horizon_zero_returns_initial_states():
    matrix, init, keys = _inputs(1000)
    assert np.array_equal(_kernel.run_jump_chain(matrix.cumulative(), init, keys, 0.0), init)


def test_absorbing_start_never_moves():
    matrix, _, keys = _inputs(100)
    init = np.full(100, 6, dtype=np.int64)
    assert np.all(_kernel.run_jump_chain(matrix.cumulative(), init, keys, 100.0) == 6)


def test_environment_variable_forces_python_backend():
    code = "from caraman import _kernel; print(_kernel.BACKEND)"
    env = dict(os.environ, CARAMAN_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_compiled
def test_protocol_output_identical_across_backends():
    code = (
        "from caraman.experiment import protocol_for, run_protocol;"
        "print(run_protocol(protocol_for('+5/2', 'sigma-', 8.7e7, trials_per_delay=3000, seed=9)).to_json())"
    )
    outs = []
    for flag in ("1", "0"):
        env = dict(os.environ, CARAMAN_PURE_PYTHON=flag)
        outs.append(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout)
    assert outs[0] == outs[1]
