import json
import math

import numpy as np
import pytest

from twostream.imagery import (
    BoundingBox,
    DatasetManifest,
    Image,
    LabeledSample,
    ManifestError,
    crop,
    load_image,
    load_manifest,
    random_center_crops,
    resize_bilinear,
    save_image,
    save_manifest,
)


def checker(h, w, c=3):
    yy, xx = np.mgrid[0:h, 0:w]
    base = ((yy + xx) % 2).astype(float)
    return Image(np.repeat(base[:, :, None], c, axis=2))


class TestImage:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            Image(np.full((4, 4, 3), 1.5))
        with pytest.raises(ValueError):
            Image(np.full((4, 4, 3), -0.1))

    def test_rejects_bad_channels(self):
        with pytest.raises(ValueError):
            Image(np.zeros((4, 4, 2)))

    def test_immutable(self):
        img = checker(4, 4)
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 0.5

    def test_gray_promotes_to_rgb(self):
        img = Image(np.linspace(0, 1, 12).reshape(3, 4))
        rgb = img.as_rgb()
        assert rgb.channels == 3
        assert np.array_equal(rgb.data[:, :, 0], img.data[:, :, 0])
        assert np.array_equal(rgb.data[:, :, 1], img.data[:, :, 0])


class TestBoundingBox:
    def test_malformed(self):
        with pytest.raises(ValueError):
            BoundingBox(5, 0, 2, 3)
        with pytest.raises(ValueError):
            BoundingBox(0, 5, 3, 2)

    def test_area_inclusive(self):
        assert BoundingBox(0, 0, 0, 0).area == 1
        assert BoundingBox(2, 3, 4, 5).area == 9


class TestManifest:
    def write(self, tmp_path, lines):
        p = tmp_path / "m.jsonl"
        p.write_text("\n".join(lines) + "\n")
        return p

    def test_empty_sample_list(self, tmp_path):
        p = self.write(tmp_path, ['{"classes": ["a", "b"]}'])
        m = load_manifest(p)
        assert m.class_names == ("a", "b")
        assert len(m.samples) == 0

    def test_class_name_maps_to_index(self, tmp_path):
        p = self.write(tmp_path, [
            '{"classes": ["ape", "bee", "cow"]}',
            '{"path": "x.png", "class": "cow", "split": "train"}',
        ])
        m = load_manifest(p)
        assert m.samples[0].label == 2

    def test_unknown_class(self, tmp_path):
        p = self.write(tmp_path, [
            '{"classes": ["ape"]}',
            '{"path": "x.png", "class": "yak", "split": "train"}',
        ])
        with pytest.raises(ManifestError, match="unknown class"):
            load_manifest(p)

    def test_malformed_box(self, tmp_path):
        p = self.write(tmp_path, [
            '{"classes": ["ape"]}',
            '{"path": "x.png", "class": "ape", "split": "train", "boxes": [[9, 0, 3, 5]]}',
        ])
        with pytest.raises(ManifestError, match="malformed box"):
            load_manifest(p)

    def test_parse_error_reports_line(self, tmp_path):
        p = self.write(tmp_path, ['{"classes": ["a"]}', "{nope"])
        with pytest.raises(ManifestError, match=":2:"):
            load_manifest(p)

    def test_round_trip(self, tmp_path):
        m = DatasetManifest(
            class_names=("a", "b"),
            samples=(
                LabeledSample("img/0.png", 0, "train"),
                LabeledSample("img/1.png", 1, "test",
                              boxes=(BoundingBox(1, 2, 10, 12),)),
            ),
        )
        p = tmp_path / "rt.jsonl"
        save_manifest(m, p)
        again = load_manifest(p)
        assert again == m

    def test_label_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            DatasetManifest(("a",), (LabeledSample("x", 1, "train"),))


class TestCrop:
    def test_full_image_identity(self):
        img = checker(6, 8)
        out = crop(img, BoundingBox(0, 0, 7, 5))
        assert np.array_equal(out.data, img.data)

    def test_single_pixel(self):
        img = checker(6, 8)
        out = crop(img, BoundingBox(3, 2, 3, 2))
        assert out.width == out.height == 1
        assert np.array_equal(out.data[0, 0], img.data[2, 3])

    def test_out_of_bounds(self):
        img = checker(6, 8)
        with pytest.raises(ValueError):
            crop(img, BoundingBox(0, 0, 8, 5))

    def test_crop_composition_matches_offset(self):
        # Cropping twice equals one crop at the summed offsets.
        rng = np.random.default_rng(0)
        img = Image(rng.random((20, 24, 3)))
        outer = BoundingBox(3, 4, 18, 15)
        inner = BoundingBox(2, 1, 9, 8)
        once = crop(crop(img, outer), inner)
        direct = crop(img, BoundingBox(outer.x1 + inner.x1, outer.y1 + inner.y1,
                                       outer.x1 + inner.x2, outer.y1 + inner.y2))
        assert np.array_equal(once.data, direct.data)


class TestRandomCenterCrops:
    def test_default_count_is_40(self):
        img = checker(100, 100)
        boxes = random_center_crops(img, rng=np.random.default_rng(1))
        assert len(boxes) == 40

    def test_corner_intervals_200(self):
        img = checker(200, 200)
        rng = np.random.default_rng(7)
        boxes = random_center_crops(img, count=10_000, rng=rng)
        x1 = np.array([b.x1 for b in boxes])
        y1 = np.array([b.y1 for b in boxes])
        x2 = np.array([b.x2 for b in boxes])
        y2 = np.array([b.y2 for b in boxes])
        assert x1.min() >= 10 and x1.max() <= 30
        assert y1.min() >= 10 and y1.max() <= 30
        assert x2.min() >= 170 and x2.max() <= 190
        assert y2.min() >= 170 and y2.max() <= 190
        # The whole lattice gets hit with 10k draws over 21 values.
        assert set(x1) == set(range(10, 31))
        assert set(x2) == set(range(170, 191))

    def test_center_area_fraction(self):
        # Extreme corners keep between 49% and 81% of the image area.
        img = checker(200, 200)
        boxes = random_center_crops(img, count=2000, rng=np.random.default_rng(3))
        for b in boxes:
            frac = ((b.x2 - b.x1) * (b.y2 - b.y1)) / (200.0 * 200.0)
            assert 0.49 - 1e-9 <= frac <= 0.81 + 1e-9

    def test_deterministic_under_seed(self):
        img = checker(64, 48)
        a = random_center_crops(img, 25, np.random.default_rng(42))
        b = random_center_crops(img, 25, np.random.default_rng(42))
        assert a == b

    def test_too_small(self):
        img = checker(19, 30)
        with pytest.raises(ValueError):
            random_center_crops(img, rng=np.random.default_rng(0))


class TestResizeBilinear:
    def test_identity(self):
        img = checker(5, 7)
        out = resize_bilinear(img, 7, 5)
        assert np.array_equal(out.data, img.data)

    def test_constant_stays_constant(self):
        img = Image(np.full((4, 6, 3), 0.37))
        out = resize_bilinear(img, 13, 9)
        assert np.allclose(out.data, 0.37)

    def test_two_to_three_hand_values(self):
        # Corner-aligned: [0, 1] resampled at 3 points gives [0, 0.5, 1].
        img = Image(np.array([[0.0, 1.0]]))
        out = resize_bilinear(img, 3, 1)
        assert np.allclose(out.data[0, :, 0], [0.0, 0.5, 1.0])

    def test_range_preserved(self):
        rng = np.random.default_rng(5)
        img = Image(rng.random((11, 13, 3)))
        out = resize_bilinear(img, 29, 17)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_downscale_to_one(self):
        img = Image(np.array([[0.0, 1.0]]))
        out = resize_bilinear(img, 1, 1)
        assert out.data.shape == (1, 1, 1)
        assert np.allclose(out.data, 0.5)


class TestFileIO:
    def test_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        img = Image(np.round(rng.random((17, 23, 3)) * 255) / 255.0)
        p = tmp_path / "x.png"
        save_image(img, p)
        back = load_image(p)
        assert np.allclose(back.data, img.data, atol=1e-12)

    def test_png_gray_round_trip(self, tmp_path):
        img = Image(np.round(np.linspace(0, 1, 64).reshape(8, 8) * 255) / 255.0)
        p = tmp_path / "g.png"
        save_image(img, p)
        back = load_image(p)
        assert back.channels == 1
        assert np.allclose(back.data, img.data)

    def test_ppm_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        img = Image(np.round(rng.random((6, 9, 3)) * 255) / 255.0)
        p = tmp_path / "x.ppm"
        save_image(img, p)
        back = load_image(p)
        assert np.allclose(back.data, img.data)

    def test_ppm_png_agree(self, tmp_path):
        rng = np.random.default_rng(13)
        img = Image(np.round(rng.random((10, 10, 3)) * 255) / 255.0)
        save_image(img, tmp_path / "a.ppm")
        save_image(img, tmp_path / "a.png")
        assert np.array_equal(load_image(tmp_path / "a.ppm").data,
                              load_image(tmp_path / "a.png").data)

    def test_gray_replication_on_load(self, tmp_path):
        img = Image(np.round(np.linspace(0, 1, 16).reshape(4, 4) * 255) / 255.0)
        p = tmp_path / "g.png"
        save_image(img, p)
        rgb = load_image(p, channels=3)
        assert rgb.channels == 3
        assert np.array_equal(rgb.data[:, :, 0], rgb.data[:, :, 2])

    def test_ppm_comment_header(self, tmp_path):
        raw = b"P6\n# a comment\n2 2\n255\n" + bytes(range(12))
        p = tmp_path / "c.ppm"
        p.write_bytes(raw)
        img = load_image(p)
        assert img.width == 2 and img.height == 2
        assert np.allclose(img.data.ravel(), np.arange(12) / 255.0)
