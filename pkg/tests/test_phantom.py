import json

import numpy as np
import pytest

from fpdm.phantom import (
    HEALTHY,
    UNHEALTHY,
    DatasetManifest,
    FormatError,
    PhantomConfig,
    decode_sample,
    encode_sample,
    generate_dataset,
    generate_sample,
    generate_unhealthy,
    load_sample,
    save_sample,
)

SMALL = PhantomConfig(size=32, area_range=(20, 100))


@pytest.fixture(scope="module")
def population():
    cfg = PhantomConfig()
    return cfg, [generate_sample(cfg, 10_000 + i) for i in range(1000)]


class TestGenerator:
    def test_same_seed_same_bits(self):
        a, b = generate_sample(SMALL, 5), generate_sample(SMALL, 5)
        assert a.image.tobytes() == b.image.tobytes()
        assert a.label == b.label and np.array_equal(a.lesion_mask, b.lesion_mask)
        assert not np.array_equal(a.image, generate_sample(SMALL, 6).image)

    def test_range_and_dtype(self):
        s = generate_sample(SMALL, 1)
        assert s.image.dtype == np.float32 and s.image.shape == (32, 32)
        assert s.image.min() >= -1.0 and s.image.max() <= 1.0

    def test_unhealthy_area_within_bounds(self):
        lo, hi = SMALL.area_range
        for seed in range(40):
            s = generate_unhealthy(SMALL, seed)
            assert s.label == UNHEALTHY
            assert lo <= s.lesion_area <= hi
            assert not (s.lesion_mask & ~s.foreground).any()

    def test_healthy_mask_empty(self):
        cfg = PhantomConfig.from_dict(dict(SMALL.to_dict(), unhealthy_prob=0.0))
        for seed in range(10):
            s = generate_sample(cfg, seed)
            assert s.label == HEALTHY and not s.lesion_mask.any()

    def test_bad_config(self):
        with pytest.raises(ValueError):
            PhantomConfig(area_range=(50, 10))
        with pytest.raises(ValueError):
            PhantomConfig(unhealthy_prob=1.5)

    def test_mean_contrast_within_five_percent(self, population):
        cfg, samples = population
        contrasts = [s.contrast for s in samples if s.label == UNHEALTHY]
        assert len(contrasts) > 400
        assert abs(np.mean(contrasts) - cfg.lesion_contrast) <= 0.05 * abs(cfg.lesion_contrast)

    def test_foreground_coverage(self, population):
        _, samples = population
        cover = np.array([s.foreground.mean() for s in samples])
        assert cover.min() >= 0.30 and cover.max() <= 0.80

    def test_oracle_components_reproduce_mean(self):
        s = generate_unhealthy(SMALL, 3)
        o = s.oracle()
        np.testing.assert_allclose(o.means[1] - o.means[0], s.lesion_offset)
        assert o.means.shape == (2, 32, 32)
        with pytest.raises(ValueError):
            s.oracle(location_weight=2.0)


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        s = generate_unhealthy(SMALL, 9)
        digest = save_sample(s, tmp_path / "a.fpd")
        back = load_sample(tmp_path / "a.fpd")
        assert back.same_content(s)
        assert back.image.tobytes() == s.image.tobytes()
        assert len(digest) == 64

    def test_bad_magic(self):
        blob = bytearray(encode_sample(generate_sample(SMALL, 1)))
        blob[:4] = b"NOPE"
        with pytest.raises(FormatError, match="magic"):
            decode_sample(bytes(blob))

    @pytest.mark.parametrize("cut", [3, 20, 1])
    def test_truncation(self, cut):
        blob = encode_sample(generate_sample(SMALL, 1))
        with pytest.raises(FormatError):
            decode_sample(blob[:cut] if cut < 10 else blob[:-cut])


class TestDataset:
    def test_counts_and_files(self, tmp_path):
        m = generate_dataset(SMALL, {"train": 100, "val": 20, "test": 50}, 3, tmp_path)
        assert len(list(tmp_path.rglob("*.fpd"))) == 170
        assert (tmp_path / "manifest.json").exists()
        back = DatasetManifest.load(tmp_path / "manifest.json")
        assert [back.count(k) for k in ("train", "val", "test")] == [100, 20, 50]
        assert back.sample("val", 4).same_content(m.sample("val", 4))
        assert back.sample("test", 0, with_components=True).healthy_mean is not None

    def test_zero_count_split(self, tmp_path):
        m = generate_dataset(SMALL, {"train": 2, "val": 0, "test": 0}, 3, tmp_path)
        assert m.count("val") == 0 and m.entries("test") == []
        assert DatasetManifest.load(tmp_path / "manifest.json").count("train") == 2

    def test_regeneration_same_hash(self, tmp_path):
        a = generate_dataset(SMALL, {"train": 5, "test": 3}, 11, tmp_path / "a")
        b = generate_dataset(SMALL, {"train": 5, "test": 3}, 11, tmp_path / "b")
        c = generate_dataset(SMALL, {"train": 5, "test": 3}, 12, tmp_path / "c")
        assert a.digest() == b.digest() != c.digest()

    def test_tampered_manifest(self, tmp_path):
        generate_dataset(SMALL, {"train": 2}, 0, tmp_path)
        doc = json.loads((tmp_path / "manifest.json").read_text())
        doc["master_seed"] = 99
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(FormatError):
            DatasetManifest.load(tmp_path / "manifest.json")

    def test_negative_count(self, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset(SMALL, {"train": -1}, 0, tmp_path)
