import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fcpl import _pykernels, kernels

needs_ext = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled extension not built")


def random_net(rng, n):
    q = np.sort(rng.integers(0, 8, n)).astype(float)
    r = rng.integers(0, 8, n).astype(float)
    order = np.lexsort((r, q))
    return q[order], r[order], rng.uniform(0.1, 1.0, n).round(2), (rng.random(n) > 0.15).astype(np.uint8)


@needs_ext
def test_backend_is_compiled():
    from fcpl import _ckernels
    assert kernels._impl is _ckernels


@needs_ext
@given(st.integers(0, 2**32 - 1), st.integers(0, 40), st.sampled_from([1.0, 2.0, 3.0, 10.0]))
def test_best_path_implementations_agree(seed, n, gap):
    from fcpl import _ckernels
    q, r, s, alive = random_net(np.random.default_rng(seed), n)
    a = kernels.best_path_dp(q, r, s, alive, gap, impl=_ckernels)
    b = kernels.best_path_dp(q, r, s, alive, gap, impl=_pykernels)
    assert list(a) == list(b)


@needs_ext
@given(st.lists(st.booleans(), max_size=60), st.integers(0, 5))
def test_average_precision_implementations_agree(labels, extra):
    from fcpl import _ckernels
    n_pos = sum(labels) + extra
    if n_pos == 0:
        return
    assert kernels.average_precision(labels, n_pos, impl=_ckernels) == \
        kernels.average_precision(labels, n_pos, impl=_pykernels)


def test_empty_inputs():
    for impl in {kernels._impl, _pykernels}:
        assert list(kernels.best_path_dp([], [], [], [], 3.0, impl=impl)) == []
        assert kernels.average_precision([], 1, impl=impl) == 0.0


def test_pure_python_switch():
    env = dict(os.environ, FCPL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import fcpl.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
