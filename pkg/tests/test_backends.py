import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scorefollow import backend
from scorefollow.inference import Follower
from scorefollow.model import ModelConfig, Variant, build_performance_hmm, flatten
from scorefollow.simulator import random_score


def test_compiled_extension_is_built_and_preferred():
    assert backend.available() == ["cython", "python"]
    if not os.environ.get("SCOREFOLLOW_BACKEND"):
        assert backend.ACTIVE == "cython"


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        backend.get("fortran")


@pytest.mark.parametrize("name", ["python", "cython"])
def test_environment_override(name):
    env = dict(os.environ, SCOREFOLLOW_BACKEND=name)
    out = subprocess.run([sys.executable, "-c", "import scorefollow; print(scorefollow.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == name


def test_bad_override_fails_at_import():
    env = dict(os.environ, SCOREFOLLOW_BACKEND="fortran")
    out = subprocess.run([sys.executable, "-c", "import scorefollow"], env=env, capture_output=True, text=True)
    assert out.returncode != 0 and "fortran" in out.stderr


@given(
    n=st.integers(1, 60),
    seed=st.integers(0, 2**31),
    variant=st.sampled_from(list(Variant)),
    pause=st.booleans(),
    log10_s=st.sampled_from([-100.0, -5.0, float("-inf")]),
)
@settings(max_examples=100, deadline=None)
def test_followers_agree_across_backends(models, n, seed, variant, pause, log10_s):
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(variant=variant, pause_states=pause, log10_s=log10_s)
    std = flatten(build_performance_hmm(random_score(n, seed=rng), cfg), models)
    Y = models.means[rng.integers(0, 89, 12)] + 0.01 * rng.random((12, 85))
    Y /= Y.sum(axis=1, keepdims=True)
    fp, fc = Follower(std, backend="python"), Follower(std, backend="cython")
    for y in Y:
        ep, ec = fp.push(y), fc.push(y)
        assert (ep.event, ep.bottom, ep.suspended) == (ec.event, ec.bottom, ec.suspended)
        a, b = fp.state.log_alpha, fc.state.log_alpha
        fin = np.isfinite(a)
        assert np.array_equal(fin, np.isfinite(b))
        np.testing.assert_allclose(a[fin], b[fin], rtol=0, atol=1e-9)
        assert fp.log_evidence == pytest.approx(fc.log_evidence, rel=1e-12)
