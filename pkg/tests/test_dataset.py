import collections
import itertools

import numpy as np
import pytest

from cwcc.dataset import (Sample, SynthConfig, cross_validation_splits, load_manifest,
                          read_image, resize_image, sample_illuminants, stack, synthesize,
                          write_image, write_manifest)
from cwcc.model import CwccConfig, CwccModel, correct_image


def exact_config(**kw):
    return SynthConfig(size=24, clip=False, noise_std=0.0, **kw)


def test_inversion_recovers_reflectance():
    for s in synthesize(exact_config(seed=1), 10):
        corrected = correct_image(s.image, s.gt).astype(np.float64)
        ratio = corrected / s.reflectance
        scale = np.median(ratio)
        assert np.abs(corrected - scale * s.reflectance).max() < 1e-6


def test_neutral_illuminant_gives_reflectance():
    s = synthesize(exact_config(seed=2), 1, illuminant=[1, 1, 1])[0]
    np.testing.assert_array_equal(s.image, s.reflectance)


def test_illuminant_box_monte_carlo():
    rng = np.random.default_rng(11)
    draws = sample_illuminants(rng, (0.6, 1.4), (0.7, 1.1), 10_000)
    n = len(draws)
    for col, centre in ((0, 1.0), (2, 0.9)):
        se = draws[:, col].std(ddof=1) / np.sqrt(n)
        assert abs(draws[:, col].mean() - centre) < 3 * se
    assert np.all(draws[:, 1] == 1.0)


def test_synthesize_deterministic():
    a = synthesize(SynthConfig(seed=5, noise_std=0.01), 4)
    b = synthesize(SynthConfig(seed=5, noise_std=0.01), 4)
    for x, y in zip(a, b):
        assert x.image.tobytes() == y.image.tobytes()
        assert x.gt.tobytes() == y.gt.tobytes()


def test_synthesize_contracts():
    samples = synthesize(SynthConfig(size=16, noise_std=0.05, seed=0, folds=3), 7)
    assert [s.fold for s in samples] == [0, 1, 2, 0, 1, 2, 0]
    for s in samples:
        assert s.image.shape == (16, 16, 3) and s.image.dtype == np.float32
        assert s.image.min() >= 0 and s.image.max() <= 1
        assert np.all(s.gt > 0) and np.linalg.norm(s.gt) == pytest.approx(1.0)


def test_biased_scenes_are_not_grey():
    cfg = SynthConfig(size=32, reflectance_bias=(1.2, 1.0, 0.8), seed=0)
    means = np.mean([s.reflectance.reshape(-1, 3).mean(0) for s in synthesize(cfg, 20)], axis=0)
    assert means[0] > 1.2 * means[2]


@pytest.mark.parametrize("kw,msg", [({"rg_range": (1.0, 1.0)}, "zero width"),
                                    ({"noise_std": -1.0}, "noise"),
                                    ({"patch_range": (5, 2)}, "patch_range")])
def test_config_rejects(kw, msg):
    with pytest.raises(ValueError, match=msg):
        SynthConfig(**kw)


def test_synthesize_rejects_zero_n():
    with pytest.raises(ValueError):
        synthesize(SynthConfig(), 0)


def test_resize_keeps_constant_and_range(rng):
    img = np.full((40, 30, 3), 0.25, np.float32)
    np.testing.assert_allclose(resize_image(img, 16), 0.25, atol=1e-7)
    out = resize_image(rng.random((50, 70, 3)), 32)
    assert out.shape == (32, 32, 3) and out.min() >= 0 and out.max() <= 1


# ------------------------------------------------------------------ image I/O
def test_rif_round_trip_bit_exact(tmp_path, rng):
    img = rng.random((7, 5, 3)).astype(np.float32)
    write_image(img, tmp_path / "a.rif")
    assert read_image(tmp_path / "a.rif").tobytes() == img.tobytes()


def test_zero_image_round_trip(tmp_path):
    write_image(np.zeros((4, 4, 3)), tmp_path / "z.rif")
    assert np.all(read_image(tmp_path / "z.rif") == 0)


def test_png_import_16bit(tmp_path, rng):
    pytest.importorskip("cv2")
    img = rng.random((6, 4, 3)).astype(np.float32)
    write_image(img, tmp_path / "a.png")
    back = read_image(tmp_path / "a.png")
    np.testing.assert_allclose(back, np.round(img * 65535) / 65535, atol=1e-7)
    assert back[0, 0, 0] == pytest.approx(img[0, 0, 0], abs=1 / 65535)


def test_written_image_gives_same_estimate(tmp_path):
    s = synthesize(SynthConfig(size=32, seed=9), 1)[0]
    model = CwccModel(CwccConfig(input_size=32), seed=0)
    write_image(s.image, tmp_path / "s.rif")
    np.testing.assert_allclose(model.predict(read_image(tmp_path / "s.rif")),
                               model.predict(s.image), atol=1e-6)


def test_read_missing_image(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_image(tmp_path / "nope.rif")


# ------------------------------------------------------------------- manifest
def save_samples(samples, root):
    for i, s in enumerate(samples):
        s.path = root / "img" / f"{i:04d}.rif"
        s.path.parent.mkdir(exist_ok=True)
        write_image(s.image, s.path)
    write_manifest(samples, root / "manifest.csv")


def test_manifest_round_trip(tmp_path):
    samples = synthesize(SynthConfig(size=8, seed=4), 50)
    save_samples(samples, tmp_path)
    back = load_manifest(tmp_path / "manifest.csv")
    assert len(back) == 50
    for a, b in zip(samples, back):
        assert a.gt.tobytes() == b.gt.tobytes()
        assert a.fold == b.fold and a.path.resolve() == b.path
        assert b.load().tobytes() == a.image.tobytes()
    first = (tmp_path / "manifest.csv").read_text().splitlines()[1]
    assert first.startswith("img/0000.rif,")


def test_manifest_rejects_bad_gt(tmp_path):
    (tmp_path / "m.csv").write_text("path,e_r,e_g,e_b,fold\n"
                                    "a.rif,0.3,0.3,0.3,0\nb.rif,0,0.5,0.5,1\n")
    with pytest.raises(ValueError, match="row 2.*positive"):
        load_manifest(tmp_path / "m.csv", check_files=False)


@pytest.mark.parametrize("row,msg", [("a.rif,0.1,0.2,0\n", "expected 5 fields"),
                                     ("a.rif,x,0.2,0.3,0\n", "malformed"),
                                     ("a.rif,0.1,0.2,0.3,0\n", "missing image")])
def test_manifest_rejects_bad_rows(tmp_path, row, msg):
    (tmp_path / "m.csv").write_text("path,e_r,e_g,e_b,fold\n" + row)
    with pytest.raises(ValueError, match=f"row 1.*{msg}"):
        load_manifest(tmp_path / "m.csv")


def test_manifest_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_manifest(tmp_path / "none.csv")


def test_manifest_7022_fold_histogram(tmp_path):
    # dataset size of the standard 10-fold benchmark, round-robin folds
    gt = np.array([0.5, 0.6, 0.4])
    samples = [Sample(gt=gt, fold=i % 10, path=tmp_path / f"{i}.rif") for i in range(7022)]
    write_manifest(samples, tmp_path / "m.csv")
    loaded = load_manifest(tmp_path / "m.csv", check_files=False)
    # independent oracle: count raw text lines by their last field
    lines = (tmp_path / "m.csv").read_text().splitlines()[1:]
    oracle = collections.Counter(line.rsplit(",", 1)[1] for line in lines)
    assert len(lines) == 7022
    hist = np.bincount([s.fold for s in loaded], minlength=10)
    assert [oracle[str(k)] for k in range(10)] == hist.tolist()
    assert hist.tolist() == [703, 703] + [702] * 8


# --------------------------------------------------------------------- splits
def test_splits_two_folds():
    samples = [Sample(gt=[1, 1, 1], fold=f) for f in (0, 0, 1, 1)]
    splits = list(cross_validation_splits(samples, 2))
    assert [[samples.index(s) for s in test] for _, test in splits] == [[0, 1], [2, 3]]
    assert [[samples.index(s) for s in train] for train, _ in splits] == [[2, 3], [0, 1]]


@pytest.mark.parametrize("seed", range(10))
def test_splits_partition_random(seed):
    rng = np.random.default_rng(seed)
    folds = int(rng.integers(2, 11))
    ids = np.concatenate([np.arange(folds), rng.integers(0, folds, size=40)])
    samples = [Sample(gt=[1, 2, 3], fold=int(f)) for f in rng.permutation(ids)]
    tests = []
    for train, test in cross_validation_splits(samples, folds):
        t, tr = {id(s) for s in test}, {id(s) for s in train}
        assert not t & tr and len(t | tr) == len(samples)
        tests.append(t)
    assert set().union(*tests) == {id(s) for s in samples}
    for a, b in itertools.combinations(tests, 2):
        assert not a & b


def test_splits_reject_empty_fold():
    with pytest.raises(ValueError, match="empty"):
        list(cross_validation_splits([Sample(gt=[1, 1, 1], fold=0)] * 3, 2))


def test_stack_shapes():
    samples = synthesize(SynthConfig(size=20, seed=0), 3)
    x, y = stack(samples, size=16)
    assert x.shape == (3, 16, 16, 3) and x.dtype == np.float32 and y.shape == (3, 3)
