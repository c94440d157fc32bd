import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mpfrnn import pnm
from mpfrnn.data import (Dataset, Sample, SyntheticTaskConfig, generate_dataset,
                         generate_scene, load_dataset, scene_from_layout, texture,
                         write_dataset)
from mpfrnn.errors import DataError, FormatError
from mpfrnn.loss import VOID


@given(c=st.sampled_from([1, 3]), h=st.integers(1, 6), w=st.integers(1, 6),
       seed=st.integers(0, 1000))
def test_pnm_round_trip(c, h, w, seed):
    arr = np.random.default_rng(seed).integers(0, 256, (c, h, w), dtype=np.uint8)
    np.testing.assert_array_equal(pnm.decode_pnm(pnm.encode_pnm(arr)), arr)


def test_pnm_header_comments_and_layout():
    data = b"P6\n# made by hand\n2 1\n# another\n255\n" + bytes([1, 2, 3, 4, 5, 6])
    arr = pnm.decode_pnm(data)
    assert arr.shape == (3, 1, 2)
    np.testing.assert_array_equal(arr[:, 0, 1], [4, 5, 6])


@pytest.mark.parametrize("data", [
    b"P3\n1 1\n255\n1 2 3",          # ascii variant
    b"P5\n2 2\n255\n\x00\x00\x00",   # short raster
    b"P5\n2 2\n65535\n" + b"\x00" * 8,
    b"P5\n2 x\n255\n\x00\x00",
    b"P5\n2",
    b"P5\n0 2\n255\n",
])
def test_pnm_rejects(data):
    with pytest.raises(FormatError):
        pnm.decode_pnm(data)


def test_label_range_error_names_position(tmp_path):
    lab = np.zeros((3, 4), np.uint8)
    lab[2, 1] = 9
    lab[0, 0] = VOID
    path = tmp_path / "l.pgm"
    pnm.write_labels(path, lab)
    with pytest.raises(DataError, match="row 2, column 1"):
        pnm.read_labels(path, 8)
    np.testing.assert_array_equal(pnm.read_labels(path, 10), lab)


def test_image_quantization(tmp_path):
    img = np.random.default_rng(0).random((3, 4, 5))
    pnm.write_image(tmp_path / "a.ppm", img)
    back = pnm.read_image(tmp_path / "a.ppm")
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_textures_are_period_four_and_phase_locked():
    for kind in range(4):
        t = texture(kind, 12, 12)
        np.testing.assert_array_equal(t[4:, :], t[:-4, :])
        np.testing.assert_array_equal(t[:, 4:], t[:, :-4])
        np.testing.assert_array_equal(texture(kind, 4, 4, 3, 5), t[3:7, 5:9])
    assert len({texture(k, 8, 8).tobytes() for k in range(4)}) == 4


def test_scene_labels_encode_cue_and_texture():
    cfg = SyntheticTaskConfig(image_size=16, border=2)
    s = scene_from_layout(cfg, 1, (8, 6), [0, 1, 2, 3])
    assert np.all(s.labels[:2] == VOID) and np.all(s.labels[:, -2:] == VOID)
    assert s.labels[3, 3] == 4 and s.labels[3, 10] == 5
    assert s.labels[12, 3] == 6 and s.labels[12, 10] == 7
    assert s.image.shape == (3, 16, 16)
    np.testing.assert_allclose(s.image[:, 0, 0], np.round(np.array([0.15, 0.15, 0.9]) * 255) / 255)
    # the interior is gray: identical in every channel whatever the cue
    other = scene_from_layout(cfg, 0, (8, 6), [0, 1, 2, 3])
    np.testing.assert_array_equal(s.image[:, 2:-2, 2:-2], other.image[:, 2:-2, 2:-2])


def test_generation_is_deterministic_and_uses_all_classes():
    cfg = SyntheticTaskConfig(noise=0.05)
    a = generate_scene(cfg, 3, 7)
    b = generate_scene(cfg, 3, 7)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.labels, b.labels)
    ds = generate_dataset(cfg, 64, 0)
    seen = set(np.unique(np.concatenate([s.labels.ravel() for s in ds])))
    assert seen == set(range(8)) | {VOID}


def test_config_json():
    cfg = SyntheticTaskConfig(image_size=24, cues=3)
    assert SyntheticTaskConfig.from_json(cfg.to_json()) == cfg
    assert cfg.num_classes == 12
    for bad in ('{"size": 3}', "[1]", "{", '{"cues": 9}', '{"image_size": 8, "border": 3}'):
        with pytest.raises(ValueError):
            SyntheticTaskConfig.from_json(bad)


def test_dataset_files_round_trip(tmp_path):
    ds = generate_dataset(SyntheticTaskConfig(image_size=12), 3, 1)
    manifest = write_dataset(ds, tmp_path)
    back = load_dataset(manifest, 8)
    assert len(back) == 3
    for a, b in zip(ds, back):
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_allclose(a.image, b.image, atol=1e-12)
    assert len(list(back.label_maps())) == 3


def test_dataset_errors(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nope.txt")
    (tmp_path / "empty.txt").write_text("\n")
    with pytest.raises(DataError, match="no entries"):
        load_dataset(tmp_path / "empty.txt")
    (tmp_path / "bad.txt").write_text("a.ppm\tb.pgm\n")
    with pytest.raises(DataError, match="missing"):
        load_dataset(tmp_path / "bad.txt")
    pnm.write_image(tmp_path / "a.ppm", np.zeros((3, 4, 4)))
    pnm.write_labels(tmp_path / "b.pgm", np.zeros((4, 5), np.uint8))
    with pytest.raises(DataError, match="4x4 vs labels 4x5"):
        load_dataset(tmp_path / "bad.txt")
    pnm.write_labels(tmp_path / "b.pgm", np.full((4, 4), 9, np.uint8))
    with pytest.raises(DataError):
        load_dataset(tmp_path / "bad.txt", 8)
    with pytest.raises(DataError):
        Sample(np.zeros((3, 4, 4)), np.zeros((4, 5), np.uint8))
    with pytest.raises(ValueError):
        Dataset()
