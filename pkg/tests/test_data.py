import numpy as np
import pytest
from hypothesis import given, strategies as st

from xcal import xten
from xcal.data import DomainSpec, batch_iter, generate_domain, load_dataset, read_ppm, synthesize
from xcal.errors import DataError


def _write_ppm(path, img):
    h, w, _ = img.shape
    path.write_bytes(f"P6\n# comment\n{w} {h}\n255\n".encode() + img.astype(np.uint8).tobytes())


def test_load_orders_by_name_and_pairs_masks(tmp_path):
    rng = np.random.default_rng(0)
    arrs = {name: rng.normal(size=(2, 4, 4)).astype(np.float32) for name in ("b.xten", "a.xten", "c.xten")}
    for name, a in arrs.items():
        xten.save(tmp_path / name, a)
    xten.save(tmp_path / "a.mask.xten", np.zeros((4, 4), np.int32))
    (tmp_path / "labels.csv").write_text("filename,label\nc.xten,2\na.xten,0\nb.xten,1\n")
    with pytest.raises(DataError, match="missing masks"):
        load_dataset(tmp_path)
    for name in ("b", "c"):
        xten.save(tmp_path / f"{name}.mask.xten", np.zeros((4, 4), np.int32))
    ds = load_dataset(tmp_path)
    assert ds.files == ["a.xten", "b.xten", "c.xten"]
    assert ds.labels.tolist() == [0, 1, 2]
    assert ds.samples.tobytes() == np.stack([arrs[f] for f in ds.files]).tobytes()
    assert ds.masks is not None and ds.masks[0].shape == (4, 4)


def test_resize_and_pass_through(tmp_path):
    img = np.random.default_rng(1).random((3, 64, 64)).astype(np.float32)
    xten.save(tmp_path / "x.xten", img)
    assert load_dataset(tmp_path, (1, 3, 32, 32)).samples.shape == (1, 3, 32, 32)
    assert load_dataset(tmp_path, (3, 64, 64)).samples[0].tobytes() == img.tobytes()
    norm = {"mean": [0.5] * 3, "std": [0.25] * 3}
    np.testing.assert_allclose(load_dataset(tmp_path, (3, 64, 64), norm).samples[0], (img - 0.5) / 0.25, rtol=1e-6)


def test_load_errors(tmp_path):
    with pytest.raises(DataError, match="no samples"):
        load_dataset(tmp_path)
    xten.save(tmp_path / "a.xten", np.zeros((3, 4, 4), np.float32))
    xten.save(tmp_path / "b.xten", np.zeros((1, 4, 4), np.float32))
    with pytest.raises(DataError, match="channels"):
        load_dataset(tmp_path)
    (tmp_path / "b.xten").unlink()
    with pytest.raises(DataError, match="model expects"):
        load_dataset(tmp_path, (1, 1, 4, 4))
    (tmp_path / "labels.csv").write_text("filename,label\nother.xten,1\n")
    with pytest.raises(DataError, match="no label"):
        load_dataset(tmp_path)


def test_ppm_reader(tmp_path):
    img = np.arange(2 * 3 * 3).reshape(2, 3, 3) * 9
    _write_ppm(tmp_path / "a.ppm", img)
    got = read_ppm(tmp_path / "a.ppm")
    assert got.shape == (3, 2, 3)
    np.testing.assert_allclose(got, img.transpose(2, 0, 1) / 255, rtol=1e-6)
    ds = load_dataset(tmp_path, (3, 4, 6), from_ppm=True)
    assert ds.samples.shape == (1, 3, 4, 6)
    (tmp_path / "b.ppm").write_bytes(b"P6\n2 2\n65535\n" + b"\0" * 24)
    with pytest.raises(DataError):
        read_ppm(tmp_path / "b.ppm")


@given(st.integers(1, 30), st.integers(1, 40))
def test_batch_iter_covers_samples_in_order(n, bs):
    x = np.arange(n * 2, dtype=np.float32).reshape(n, 2, 1, 1)
    batches = list(batch_iter(x, bs))
    assert sum(len(b) for b in batches) == n
    assert len(batches) == -(-n // bs)
    np.testing.assert_array_equal(np.concatenate(batches), x)


def test_generate_is_byte_deterministic(tmp_path):
    spec = DomainSpec(seed=7, family="checker", noise=0.1, resolution=(8, 8))
    generate_domain(spec, 5, tmp_path / "a")
    generate_domain(spec, 5, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    assert load_dataset(tmp_path / "a").labels.max() < 4
    with pytest.raises(ValueError):
        generate_domain(spec, 0, tmp_path / "c")


def test_shift_and_contrast_act_by_construction():
    base = DomainSpec(seed=3, family="blobs")
    x0, y0 = synthesize(base, 6)
    x1, y1 = synthesize(DomainSpec(seed=3, family="blobs", shift=(0.25, -0.5, 0.0)), 6)
    assert y0.tolist() == y1.tolist()
    np.testing.assert_allclose(x1 - x0, np.array([0.25, -0.5, 0.0])[None, :, None, None] + 0 * x0, atol=1e-6)
    x2, _ = synthesize(DomainSpec(seed=3, family="blobs", contrast=2.0), 6)
    np.testing.assert_allclose(x2 - 0.5, 2 * (x0 - 0.5), atol=1e-6)


def test_noise_statistics_within_three_sigma():
    sigma, n = 0.2, 50
    clean, _ = synthesize(DomainSpec(seed=5, family="stripes", resolution=(16, 16)), n)
    noisy, _ = synthesize(DomainSpec(seed=5, family="stripes", noise=sigma, resolution=(16, 16)), n)
    resid = (noisy - clean).astype(np.float64)
    m = resid.shape[0] * resid.shape[2] * resid.shape[3]
    for c in range(3):
        r = resid[:, c]
        assert abs(r.mean()) <= 3 * sigma / np.sqrt(m)
        assert abs(r.std() - sigma) <= 3 * sigma / np.sqrt(2 * m)
