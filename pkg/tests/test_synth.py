import itertools
import math

import numpy as np
import pytest

from conftest import paint
from fiberdet.errors import ConfigError, InsufficientData
from fiberdet.formats import read_annotations, read_manifest
from fiberdet.geometry import Ellipse, hbe_of
from fiberdet.raster import pixel_iou, rasterize, write_png
from fiberdet.synth import (DEFAULT_PRIOR, ChannelPrior, GaussianPrior, SceneGroundTruth, StainSpec,
                            BlurSpec, SynthConfig, export_dataset, fit_priors, load_scene,
                            render_scene, sample_scene, scene_rngs, shape_stream, synthesize_one)

CLEAN = dict(noise_std=0.0)


def rows(semi_majors, semi_minor=1.0):
    return [(Ellipse(0, 0, 0.5, R, semi_minor), 100.0) for R in semi_majors]


class TestFitPriors:
    def test_mean_and_sample_std(self):
        p = fit_priors(rows([1.0, 2.0, 3.0], semi_minor=0.5))
        assert p.semi_major.mean == 2.0
        assert p.semi_major.std == 1.0

    def test_identical_samples_have_zero_std(self):
        p = fit_priors(rows([7.3] * 5))
        assert p.semi_major.std == 0.0
        assert p.intensity.std == 0.0

    @pytest.mark.parametrize("n", [0, 1])
    def test_too_few_samples(self, n):
        with pytest.raises(InsufficientData):
            fit_priors(rows([5.0] * n))

    def test_recovers_normal_parameters(self, rng):
        n = 10_000
        R = rng.normal(25, 3, n)
        p = fit_priors([(Ellipse(0, 0, 0, max(x, 2.0), 1.0), 0.0) for x in R])
        assert abs(p.semi_major.mean - 25) < 3 * 3 / math.sqrt(n)
        assert p.semi_major.std == pytest.approx(3, rel=0.05)

    def test_dict_round_trip(self):
        assert GaussianPrior.from_dict(DEFAULT_PRIOR.to_dict()) == DEFAULT_PRIOR


class TestSampleScene:
    def test_zero_count_is_empty(self, rng):
        gt = sample_scene(DEFAULT_PRIOR, SynthConfig(count=0), rng)
        assert gt.objects == ()

    def test_same_seed_same_scene(self):
        cfg = SynthConfig(count=30)
        a = sample_scene(DEFAULT_PRIOR, cfg, np.random.default_rng(3))
        b = sample_scene(DEFAULT_PRIOR, cfg, np.random.default_rng(3))
        assert a == b

    def test_fifty_pixel_disjoint_and_contained(self, rng):
        gt = sample_scene(DEFAULT_PRIOR, SynthConfig(count=50, margin=2), rng)
        assert len(gt.objects) == 50
        es = gt.ellipses
        for a, b in itertools.combinations(es, 2):
            assert pixel_iou(a, b, 646, 484) == 0.0
        for e in es:
            box = hbe_of(e)
            assert box.x0 >= 0 and box.y0 >= 0 and box.x1 <= 646 and box.y1 <= 484

    def test_zero_margin_still_disjoint(self, rng):
        cfg = SynthConfig(width=200, height=150, count=40, margin=0)
        gt = sample_scene(DEFAULT_PRIOR, cfg, rng)
        total = np.zeros((150, 200), int)
        for e in gt.ellipses:
            total += rasterize(e, 200, 150)
        assert total.max() <= 1

    def test_shape_constraints(self, rng):
        gt = sample_scene(DEFAULT_PRIOR, SynthConfig(count=50), rng)
        for e, inten in gt.objects:
            assert 8 <= e.semi_minor <= e.semi_major <= 20
            assert 0 <= inten <= 255

    def test_shape_larger_than_image(self, rng):
        big = GaussianPrior(ChannelPrior(100, 0), ChannelPrior(90, 0), ChannelPrior(0, 0), ChannelPrior(200, 0))
        cfg = SynthConfig(width=50, height=50, count=3, semi_major_range=None, semi_minor_range=None)
        with pytest.raises(ConfigError):
            sample_scene(big, cfg, rng)

    def test_attempt_budget_reports_shortfall(self, rng, caplog):
        cfg = SynthConfig(width=100, height=100, count=200, max_attempts=300)
        gt = sample_scene(DEFAULT_PRIOR, cfg, rng)
        assert len(gt.objects) < 200
        assert gt.attempts == 300
        assert "placed" in caplog.text

    def test_pre_rejection_stream_matches_prior(self, rng):
        n = 10_000
        draws = np.array(list(itertools.islice(shape_stream(DEFAULT_PRIOR, rng), n)))
        for k, ch in enumerate((DEFAULT_PRIOR.semi_major, DEFAULT_PRIOR.semi_minor,
                                DEFAULT_PRIOR.theta, DEFAULT_PRIOR.intensity)):
            se = ch.std / math.sqrt(n)
            assert abs(draws[:, k].mean() - ch.mean) < 4 * se


class TestRender:
    def test_empty_flat_scene(self, rng):
        cfg = SynthConfig(width=40, height=30, count=0, background_level=128, **CLEAN)
        img = render_scene(SceneGroundTruth("x", 40, 30), cfg, rng)
        assert img.dtype == np.uint8 and img.shape == (30, 40)
        assert (img == 128).all()

    def test_single_circle(self, rng):
        e = Ellipse(30.3, 25.7, 0, 12, 12)
        cfg = SynthConfig(width=64, height=48, background_level=50, **CLEAN)
        img = render_scene(SceneGroundTruth("x", 64, 48, ((e, 200.0),)), cfg, rng)
        assert np.array_equal(img, paint([e], 64, 48, fg=200, bg=50))

    def test_noise_is_clipped(self, rng):
        cfg = SynthConfig(width=50, height=50, background_level=250, noise_std=30)
        img = render_scene(SceneGroundTruth("x", 50, 50), cfg, rng)
        assert img.max() == 255 and img.std() > 5

    def test_stain_halves_disk(self):
        cfg = SynthConfig(width=80, height=80, background_level=200, **CLEAN,
                          stains=(StainSpec(1, (15, 15), (0.5, 0.5)),))
        img = render_scene(SceneGroundTruth("x", 80, 80), cfg, np.random.default_rng(0))
        dark = img < 200
        assert dark.sum() > 0.9 * math.pi * 15 ** 2 * 0.25  # at least a partial disk
        assert (img[dark] == 100).all()

    def test_blur_smooths_edge_only_inside_region(self):
        e = Ellipse(40, 40, 0, 20, 20)
        cfg = SynthConfig(width=80, height=80, background_level=0, **CLEAN,
                          blurs=(BlurSpec(1, (80, 80), 2),))
        img = render_scene(SceneGroundTruth("x", 80, 80, ((e, 255.0),)), cfg, np.random.default_rng(0))
        hard = paint([e], 80, 80, fg=255, bg=0)
        assert not np.array_equal(img, hard)
        assert ((img > 0) & (img < 255)).any()
        assert img[40, 40] == 255 and img[0, 0] == 0

    def test_degrade_flag_overrides(self, rng):
        cfg = SynthConfig(width=60, height=60, background_level=200, **CLEAN,
                          stains=(StainSpec(3, (10, 20), (0.5, 0.6)),))
        img = render_scene(SceneGroundTruth("x", 60, 60), cfg, rng, degrade=False)
        assert (img == 200).all()

    def test_background_image_crop(self, tmp_path, rng):
        src = rng.integers(0, 256, (100, 120), dtype=np.uint8)
        write_png(tmp_path / "bg.png", src)
        cfg = SynthConfig(width=40, height=30, background_image=str(tmp_path / "bg.png"))
        img = render_scene(SceneGroundTruth("x", 40, 30), cfg, rng)
        found = any(np.array_equal(src[y:y + 30, x:x + 40], img)
                    for y in range(71) for x in range(81))
        assert found

    def test_background_image_too_small(self, tmp_path, rng):
        write_png(tmp_path / "bg.png", np.zeros((10, 10), np.uint8))
        cfg = SynthConfig(width=40, height=30, background_image=str(tmp_path / "bg.png"),
                          allow_resample=False)
        with pytest.raises(ConfigError):
            render_scene(SceneGroundTruth("x", 40, 30), cfg, rng)
        ok = SynthConfig(width=40, height=30, background_image=str(tmp_path / "bg.png"))
        assert render_scene(SceneGroundTruth("x", 40, 30), ok, rng).shape == (30, 40)

    def test_invalid_config(self):
        with pytest.raises(ConfigError):
            SynthConfig(count=-1)
        with pytest.raises(ConfigError):
            SynthConfig(margin=-0.5)


class TestExport:
    def _samples(self, seed, n=2):
        cfg = SynthConfig(width=160, height=120, count=8)
        return [synthesize_one(DEFAULT_PRIOR, cfg, g, f"s{i}") for i, g in enumerate(scene_rngs(seed, n))]

    def test_manifest_lists_entries(self, tmp_path):
        manifest = export_dataset(self._samples(1), tmp_path)
        assert [e["image"] for e in manifest["images"]] == ["images/s0.png", "images/s1.png"]
        assert [e["annotations"] for e in manifest["images"]] == ["annotations/s0.csv", "annotations/s1.csv"]
        assert (tmp_path / "manifest.json").exists()

    def test_byte_identical_reexport(self, tmp_path):
        export_dataset(self._samples(9), tmp_path / "a")
        export_dataset(self._samples(9), tmp_path / "b")
        for rel in ("annotations/s0.csv", "annotations/s1.csv", "images/s1.png", "manifest.json"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_round_trip(self, tmp_path):
        samples = self._samples(4)
        export_dataset(samples, tmp_path)
        entries = read_manifest(tmp_path / "manifest.json")
        for s, entry in zip(samples, entries):
            back = load_scene(entry)
            assert (back.width, back.height) == (160, 120)
            assert len(back.objects) == len(s.scene.objects)
            for (a, ia), (b, ib) in zip(s.scene.objects, back.objects):
                assert abs(a.cx - b.cx) <= 1e-4 and abs(a.cy - b.cy) <= 1e-4
                assert abs(a.semi_major - b.semi_major) <= 1e-4
                assert abs(a.semi_minor - b.semi_minor) <= 1e-4
                assert abs(a.theta - b.theta) <= 1e-6
                assert abs(ia - ib) <= 1e-6

    def test_annotation_ids(self, tmp_path):
        export_dataset(self._samples(5), tmp_path)
        ids, objs = read_annotations(tmp_path / "annotations" / "s0.csv")
        assert set(ids) == {"s0"} and len(objs) == 8
