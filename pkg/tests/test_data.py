"""Synthetic dataset generation, PPM round trips, manifest handling."""
import numpy as np
import pytest

from xgan.data import (
    DatasetError,
    VIEW_PRESETS,
    generate_dataset,
    load_dataset,
    read_ppm,
    render_identity,
    sample_identity,
    save_dataset,
    write_ppm,
    write_ppm_grid,
)
from xgan.rng import Rng


def test_same_seed_byte_identical_files(tmp_path):
    d1 = save_dataset(generate_dataset(6, 2, seed=5), tmp_path / "a")
    d2 = save_dataset(generate_dataset(6, 2, seed=5), tmp_path / "b")
    files1 = sorted(p.relative_to(d1) for p in d1.rglob("*.ppm"))
    files2 = sorted(p.relative_to(d2) for p in d2.rglob("*.ppm"))
    assert files1 == files2 and files1
    for rel in files1:
        assert (d1 / rel).read_bytes() == (d2 / rel).read_bytes()
    assert (d1 / "manifest.csv").read_text() == (d2 / "manifest.csv").read_text()


def test_identity_views_zero_noise_pairs_equal():
    va, vb = VIEW_PRESETS["identity"]
    ds = generate_dataset(4, 2, view_a=va, view_b=vb, seed=3)
    assert np.array_equal(ds.train.images_a, ds.train.images_b)


def test_default_views_cross_view_gap_exceeds_within_view_jitter():
    """Frozen fixture bound: the view transform dominates per-sample jitter."""
    ds = generate_dataset(12, 4, seed=1)
    tr = ds.train
    cross = np.linalg.norm(
        (tr.images_a - tr.images_b).reshape(len(tr), -1), axis=1
    ).mean()
    within = []
    for identity in np.unique(tr.identities):
        idx = np.flatnonzero(tr.identities == identity)
        imgs = tr.images_a[idx].reshape(len(idx), -1)
        within.append(np.linalg.norm(imgs[0] - imgs[1]))
    within = float(np.mean(within))
    assert cross > within


def test_split_identities_disjoint():
    ds = generate_dataset(9, 2, seed=0)
    assert not set(ds.train.identities.tolist()) & set(ds.test.identities.tolist())
    assert len(np.unique(ds.train.identities)) == 6
    assert len(np.unique(ds.test.identities)) == 3


def test_minimum_identities():
    with pytest.raises(DatasetError):
        generate_dataset(1, 2, seed=0)


def test_trainer_view_excludes_identity_column():
    ds = generate_dataset(4, 2, seed=2)
    pair_view = ds.train_pairs_only()
    assert isinstance(pair_view, tuple) and len(pair_view) == 2
    xa, xb = pair_view
    assert xa.shape == xb.shape
    assert xa.dtype == np.float32


def test_ppm_round_trip_bits(tmp_path):
    img = (np.random.RandomState(0).rand(3, 32, 32) * 255).astype(np.uint8)
    path = tmp_path / "img.ppm"
    write_ppm(path, img)
    back = read_ppm(path)
    assert np.array_equal(img, back)


def test_dataset_save_load_round_trip(tmp_path):
    ds = generate_dataset(6, 3, seed=8)
    out = save_dataset(ds, tmp_path / "ds")
    loaded = load_dataset(out)
    assert np.array_equal(ds.train.images_a, loaded.train.images_a)
    assert np.array_equal(ds.train.images_b, loaded.train.images_b)
    assert np.array_equal(ds.test.images_a, loaded.test.images_a)
    assert np.array_equal(ds.train.identities, loaded.train.identities)


def test_manifest_row_count_matches_files(tmp_path):
    ds = generate_dataset(5, 2, seed=4)
    out = save_dataset(ds, tmp_path / "ds")
    n_files = len(list(out.rglob("*.ppm")))
    rows = (out / "manifest.csv").read_text().strip().splitlines()
    assert len(rows) - 1 == n_files == 5 * 2 * 2


def test_missing_file_error_names_path(tmp_path):
    ds = generate_dataset(4, 2, seed=6)
    out = save_dataset(ds, tmp_path / "ds")
    victim = next(out.rglob("*.ppm"))
    victim.unlink()
    with pytest.raises(DatasetError) as err:
        load_dataset(out)
    assert victim.name in str(err.value)


def test_malformed_manifest_rejected(tmp_path):
    ds = generate_dataset(4, 2, seed=6)
    out = save_dataset(ds, tmp_path / "ds")
    (out / "manifest.csv").write_text("nonsense,header\n1,2\n")
    with pytest.raises(DatasetError):
        load_dataset(out)


def test_images_in_tanh_range():
    ds = generate_dataset(4, 2, seed=9)
    for split in (ds.train, ds.test):
        for arr in (split.images_a, split.images_b):
            assert arr.min() >= -1.0 and arr.max() <= 1.0


def test_identity_rendering_has_bands_and_head():
    spec = sample_identity(3, Rng(12))
    img = render_identity(spec)
    assert img.shape == (3, 32, 32)
    assert img.min() >= 0.0 and img.max() <= 1.0
    # rows differ because of the band structure
    assert np.abs(np.diff(img.mean(axis=(0, 2)))).max() > 0.01


def test_ppm_grid_writer(tmp_path):
    imgs = np.random.RandomState(1).uniform(-1, 1, (6, 3, 8, 8)).astype(np.float32)
    path = tmp_path / "grid.ppm"
    write_ppm_grid(path, imgs, cols=3)
    grid = read_ppm(path)
    assert grid.shape[0] == 3
    assert grid.shape[1] == 2 * (8 + 2) + 2
    assert grid.shape[2] == 3 * (8 + 2) + 2


def test_dataset_json_written(tmp_path):
    import json

    ds = generate_dataset(4, 2, seed=13)
    out = save_dataset(ds, tmp_path / "ds")
    config = json.loads((out / "dataset.json").read_text())
    assert config["n_identities"] == 4
    assert config["seed"] == 13
    assert config["view_b"]["brightness"] == 0.85


def test_corrupt_ppm_rejected(tmp_path):
    bad = tmp_path / "bad.ppm"
    bad.write_bytes(b"P6\n4 x\n255\n")
    with pytest.raises(DatasetError):
        read_ppm(bad)
    short = tmp_path / "short.ppm"
    short.write_bytes(b"P6\n4 4\n255\n\x00\x00")
    with pytest.raises(DatasetError):
        read_ppm(short)
