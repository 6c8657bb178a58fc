import numpy as np
import pytest

from xcal.parallel import ordered_map, resolve_threads
from xcal.stats import ChannelMoments


def test_env_overrides_thread_argument(monkeypatch):
    monkeypatch.delenv("XCAL_THREADS", raising=False)
    assert resolve_threads(None) == 1
    assert resolve_threads(3) == 3
    monkeypatch.setenv("XCAL_THREADS", "5")
    assert resolve_threads(2) == 5
    monkeypatch.setenv("XCAL_THREADS", "0")
    with pytest.raises(ValueError):
        resolve_threads(None)


def test_ordered_map_keeps_submission_order():
    assert list(ordered_map(lambda v: v * v, range(50), threads=8)) == [v * v for v in range(50)]


def test_moments_match_numpy_and_ignore_order():
    rng = np.random.default_rng(0)
    x = rng.normal(3.0, 2.0, size=(20, 4, 5, 5))
    a = ChannelMoments()
    for i in range(0, 20, 6):
        a.add(x[i:i + 6])
    b = ChannelMoments().add(x[10:][::-1]).merge(ChannelMoments().add(x[:10]))
    n, mean, var = a.finalize()
    assert n == 500
    np.testing.assert_allclose(mean, x.mean(axis=(0, 2, 3)), rtol=1e-12)
    np.testing.assert_allclose(var, x.var(axis=(0, 2, 3)), rtol=1e-12)
    nb, mb, vb = b.finalize()
    assert nb == n and mb.tobytes() == mean.tobytes() and vb.tobytes() == var.tobytes()
    with pytest.raises(ValueError):
        ChannelMoments().finalize()
