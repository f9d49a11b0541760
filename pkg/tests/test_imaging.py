"""PGM I/O, bicubic resampling, synthetic corpus, manifests."""

import math

import numpy as np
import pytest

from textsr.imaging import (
    DatasetManifest,
    ManifestEntry,
    PgmError,
    bicubic_downscale,
    bicubic_upscale_x2,
    generate_synthetic_corpus,
    keys_cubic,
    load_manifest,
    load_pgm,
    render_text_strip,
    save_manifest,
    save_pgm,
    split_dataset,
)


def keys_scalar(t):
    """Independent scalar evaluation of the a = -0.5 cubic kernel."""
    t = abs(t)
    if t <= 1.0:
        return 1.5 * t ** 3 - 2.5 * t ** 2 + 1.0
    if t < 2.0:
        return -0.5 * (t ** 3 - 5.0 * t ** 2 + 8.0 * t - 4.0)
    return 0.0


def upscale_row_oracle(row, out_len):
    """Scalar half-pixel-centered bicubic with edge replication."""
    in_len = len(row)
    out = []
    for i in range(out_len):
        x = (i + 0.5) * in_len / out_len - 0.5
        base = math.floor(x)
        acc = 0.0
        for off in (-1, 0, 1, 2):
            idx = base + off
            w = keys_scalar(x - idx)
            acc += w * row[min(max(idx, 0), in_len - 1)]
        out.append(acc)
    return np.array(out)


class TestPgm:
    def test_byte_scaling(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
        img = load_pgm(path)
        assert np.allclose(img, np.array([[0, 128], [255, 64]]) / 255.0)

    def test_round_trip_byte_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.random((7, 11))
        p1, p2 = tmp_path / "a.pgm", tmp_path / "b.pgm"
        save_pgm(img, p1)
        save_pgm(load_pgm(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_comments_accepted(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 1\n# another\n255\n\x10\x20")
        img = load_pgm(path)
        assert img.shape == (1, 2)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P6\n1 1\n255\n\x00")
        with pytest.raises(PgmError, match="magic"):
            load_pgm(path)

    def test_wrong_maxval(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5\n1 1\n128\n\x00")
        with pytest.raises(PgmError, match="maxval"):
            load_pgm(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "h.pgm"
        path.write_bytes(b"P5\n2")
        with pytest.raises(PgmError):
            load_pgm(path)

    def test_truncated_raster(self, tmp_path):
        path = tmp_path / "r.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x01\x02")
        with pytest.raises(PgmError, match="truncated"):
            load_pgm(path)

    def test_save_clamps_and_rounds(self, tmp_path):
        path = tmp_path / "s.pgm"
        save_pgm(np.array([[1.2, -0.1, 0.5019607843137255]]), path)
        assert load_pgm(path)[0].tolist() == [1.0, 0.0, 128 / 255]


class TestBicubic:
    def test_partition_of_unity(self):
        rng = np.random.default_rng(1)
        fracs = rng.random(1000)
        total = sum(keys_cubic(fracs - off) for off in (-1, 0, 1, 2))
        assert np.max(np.abs(total - 1.0)) <= 1e-12

    def test_constant_image(self):
        img = np.full((5, 6), 0.5)
        up = bicubic_upscale_x2(img)
        assert up.shape == (10, 12)
        assert np.array_equal(up, np.full((10, 12), 0.5))  # dyadic constant stays exact
        c = 0.3711
        up2 = bicubic_upscale_x2(np.full((4, 4), c))
        assert np.max(np.abs(up2 - c)) <= 1e-15
        assert abs(up2.mean() - c) <= 1e-15

    def test_one_pixel_replicates(self):
        up = bicubic_upscale_x2(np.array([[0.7]]))
        assert up.shape == (2, 2)
        assert np.allclose(up, 0.7)

    def test_ramp_matches_scalar_oracle(self):
        ramp = np.tile(np.linspace(0.1, 0.9, 13), (4, 1))
        up = bicubic_upscale_x2(ramp)
        want = upscale_row_oracle(ramp[0], 26)
        for r in range(8):
            assert np.max(np.abs(up[r] - np.clip(want, 0, 1))) <= 1e-12

    def test_downscale_constant(self):
        img = np.full((8, 12), 0.25)
        down = bicubic_downscale(img, 4)
        assert down.shape == (2, 3)
        assert np.allclose(down, 0.25, atol=1e-15)

    def test_downscale_rejects_factor_3(self):
        with pytest.raises(ValueError, match="factor"):
            bicubic_downscale(np.ones((6, 6)), 3)

    def test_downscale_rejects_non_divisible(self):
        with pytest.raises(ValueError, match="divisible"):
            bicubic_downscale(np.ones((7, 8)), 2)

    def test_smooth_round_trip(self):
        y, x = np.mgrid[0:24, 0:36]
        img = 0.5 + 0.35 * np.cos(2 * np.pi * y / 24) * np.cos(2 * np.pi * x / 36)
        back = bicubic_downscale(bicubic_upscale_x2(img), 2)
        assert np.mean(np.abs(back - img)) <= 0.02

    def test_upscale_doubles_exactly(self):
        rng = np.random.default_rng(2)
        for h, w in ((1, 1), (3, 9), (9, 3), (29, 17)):
            up = bicubic_upscale_x2(rng.random((h, w)))
            assert up.shape == (2 * h, 2 * w)
            assert up.min() >= 0.0 and up.max() <= 1.0


class TestRender:
    def test_even_width(self):
        for text in ("A", "HELLO", "A1.B!"):
            img = render_text_strip(text, 20, 2, 0.1, 0.9)
            assert img.shape[1] % 2 == 0

    def test_scale_too_large_rejected(self):
        with pytest.raises(ValueError, match="fit"):
            render_text_strip("A", 13, 2, 0.1, 0.9)

    def test_ink_and_background_present(self):
        img = render_text_strip("X", 18, 2, 0.05, 0.9)
        assert (img == 0.05).any() and (img == 0.9).any()


class TestCorpus:
    def test_deterministic_bytes(self, tmp_path):
        m1 = generate_synthetic_corpus(6, 42, tmp_path / "a")
        m2 = generate_synthetic_corpus(6, 42, tmp_path / "b")
        for e1, e2 in zip(m1.entries, m2.entries):
            assert e1.text == e2.text
            with open(e1.hr_path, "rb") as f1, open(e2.hr_path, "rb") as f2:
                assert f1.read() == f2.read()
            with open(e1.lr_path, "rb") as f1, open(e2.lr_path, "rb") as f2:
                assert f1.read() == f2.read()
        t1 = (tmp_path / "a" / "manifest.tsv").read_bytes()
        t2 = (tmp_path / "b" / "manifest.tsv").read_bytes()
        assert t1 == t2

    def test_different_seed_differs(self, tmp_path):
        m1 = generate_synthetic_corpus(3, 1, tmp_path / "a")
        m2 = generate_synthetic_corpus(3, 2, tmp_path / "b")
        texts1 = [e.text for e in m1.entries]
        texts2 = [e.text for e in m2.entries]
        assert texts1 != texts2

    def test_heights_even_in_range_and_lr_half(self, tmp_path):
        manifest = generate_synthetic_corpus(10, 5, tmp_path)
        for entry in manifest.entries:
            hr = load_pgm(entry.hr_path)
            lr = load_pgm(entry.lr_path)
            assert hr.shape[0] % 2 == 0 and 18 <= hr.shape[0] <= 58
            assert lr.shape == (hr.shape[0] // 2, hr.shape[1] // 2)

    def test_annotation_matches_manifest_file(self, tmp_path):
        manifest = generate_synthetic_corpus(4, 9, tmp_path)
        loaded = load_manifest(tmp_path / "manifest.tsv")
        assert [e.text for e in loaded.entries] == [e.text for e in manifest.entries]
        assert all(e.text for e in loaded.entries)

    def test_count_validated(self, tmp_path):
        with pytest.raises(ValueError):
            generate_synthetic_corpus(0, 1, tmp_path)


class TestManifest:
    def _dummy(self, n):
        return DatasetManifest([ManifestEntry(f"id{i:03d}", f"h{i}.pgm", f"l{i}.pgm", "t")
                                for i in range(n)])

    def test_split_567_30(self):
        train, val = split_dataset(self._dummy(567), 30, seed=0)
        assert len(train.entries) == 537
        assert len(val.entries) == 30
        assert train.split == "train" and val.split == "validation"

    def test_split_disjoint_exhaustive(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            n = int(rng.integers(10, 80))
            k = int(rng.integers(1, n))
            manifest = self._dummy(n)
            train, val = split_dataset(manifest, k, seed=int(rng.integers(1000)))
            train_ids, val_ids = set(train.ids()), set(val.ids())
            assert not (train_ids & val_ids)
            assert train_ids | val_ids == set(manifest.ids())

    def test_split_seeded(self):
        m = self._dummy(50)
        a1, b1 = split_dataset(m, 10, seed=4)
        a2, b2 = split_dataset(m, 10, seed=4)
        assert a1.ids() == a2.ids() and b1.ids() == b2.ids()
        _, b3 = split_dataset(m, 10, seed=5)
        assert b1.ids() != b3.ids()

    def test_split_validates_count(self):
        with pytest.raises(ValueError):
            split_dataset(self._dummy(10), 10, seed=0)

    def test_save_load_round_trip(self, tmp_path):
        img = np.zeros((2, 2))
        save_pgm(img, tmp_path / "x_hr.pgm")
        save_pgm(img, tmp_path / "x_lr.pgm")
        m = DatasetManifest([ManifestEntry("x", "x_hr.pgm", "x_lr.pgm", "AB C")])
        save_manifest(m, tmp_path / "m.tsv")
        loaded = load_manifest(tmp_path / "m.tsv")
        assert loaded.entries[0].image_id == "x"
        assert loaded.entries[0].text == "AB C"
        assert loaded.entries[0].hr_path.endswith("x_hr.pgm")

    def test_load_missing_file_rejected(self, tmp_path):
        m = DatasetManifest([ManifestEntry("x", "nope_hr.pgm", "nope_lr.pgm", "")])
        save_manifest(m, tmp_path / "m.tsv")
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "m.tsv")

    def test_duplicate_id_rejected(self, tmp_path):
        (tmp_path / "m.tsv").write_text("a\th\tl\tt\na\th\tl\tt\n")
        with pytest.raises(ValueError, match="duplicate"):
            load_manifest(tmp_path / "m.tsv", check_files=False)
