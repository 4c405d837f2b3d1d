import json

import numpy as np
import pytest

from segnerf.errors import BandEmptyError, EmptyMaskError, NotFoundError
from segnerf.scene import Mask, MaskStatus
from segnerf.segmenter import OracleSegmenter
from segnerf.selfprompt import (SelfPromptConfig, box_to_mask, distance_map,
                                edge_band_points, kmeans_prompts,
                                save_batch_report, self_prompt_dataset,
                                self_prompt_view)


def make_mask(bits):
    return Mask(view_id=0, bits=bits, score=1.0, status=MaskStatus.ACCEPTED)


def square_mask(size, lo, hi):
    bits = np.zeros((size, size), dtype=bool)
    bits[lo:hi, lo:hi] = True
    return make_mask(bits)


def disk_mask(size, center, radius):
    yy, xx = np.mgrid[:size, :size]
    return make_mask((xx - center[0]) ** 2 + (yy - center[1]) ** 2 <= radius ** 2)


class TestDistanceMap:
    def test_center_of_11x11_square(self):
        # center pixel is 5 in-mask steps from the outside, plus the border
        dist = distance_map(square_mask(11, 0, 11))
        assert 5 <= dist[5, 5] <= 6
        assert dist.max() == dist[5, 5]

    def test_single_pixel_is_one(self):
        bits = np.zeros((5, 5), dtype=bool)
        bits[2, 2] = True
        assert distance_map(make_mask(bits))[2, 2] == 1.0

    def test_disk_max_distance_is_radius(self):
        dist = distance_map(disk_mask(64, (32, 32), 20))
        assert dist.max() == pytest.approx(20, abs=1.5)
        assert dist[32, 32] == dist.max()

    def test_zero_outside_mask(self):
        dist = distance_map(square_mask(16, 4, 12))
        assert (dist[square_mask(16, 4, 12).bits == False] == 0).all()  # noqa: E712

    def test_border_counts_as_outside(self):
        # full-frame mask: corner pixel still has distance 1
        dist = distance_map(square_mask(8, 0, 8))
        assert dist[0, 0] == 1.0

    def test_empty_mask_errors(self):
        with pytest.raises(EmptyMaskError):
            distance_map(make_mask(np.zeros((4, 4), dtype=bool)))


class TestEdgeBandPoints:
    def test_annulus_selection_on_disk(self):
        dist = distance_map(disk_mask(64, (32, 32), 20))
        cfg = SelfPromptConfig(band_lo=2.0, band_hi=4.0)
        pts = edge_band_points(dist, cfg)
        r = np.hypot(pts[:, 0] - 32, pts[:, 1] - 32)
        # distance-to-edge d corresponds to radius ~ 20 - d
        assert r.min() >= 20 - 4.0 - 1.5
        assert r.max() <= 20 - 2.0 + 1.5

    def test_band_pixel_count_tracks_perimeter(self):
        dist = distance_map(disk_mask(128, (64, 64), 40))
        cfg = SelfPromptConfig(band_lo=2.0, band_hi=4.0)
        pts = edge_band_points(dist, cfg)
        # annulus area ~ perimeter x band width at mean radius ~ 37
        expected = 2 * np.pi * 37 * 3
        assert len(pts) == pytest.approx(expected, rel=0.2)

    def test_default_hi_scales_with_mask(self):
        dist = distance_map(disk_mask(128, (64, 64), 50))
        pts_default = edge_band_points(dist, SelfPromptConfig(band_lo=2.0))
        pts_four = edge_band_points(dist, SelfPromptConfig(band_lo=2.0,
                                                           band_hi=4.0))
        assert len(pts_default) == len(pts_four)  # 5% of 50 = 2.5 < 4 floor

    def test_band_empty_suggests_retry(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[3, 3] = True  # max distance 1 < band_lo
        dist = distance_map(make_mask(bits))
        with pytest.raises(BandEmptyError) as err:
            edge_band_points(dist, SelfPromptConfig(band_lo=2.0, band_hi=4.0))
        lo, hi = err.value.suggested_band
        assert lo < 2.0 and hi > 4.0


class TestKmeansPrompts:
    def test_k1_is_single_deep_prompt(self):
        dist = distance_map(disk_mask(64, (32, 32), 20))
        pts = edge_band_points(dist, SelfPromptConfig(band_lo=2.0, band_hi=4.0))
        prompts = kmeans_prompts(pts, SelfPromptConfig(k=1))
        assert len(prompts.points) == 1
        (u, v, pos) = prompts.points[0]
        assert pos and [u, v] in pts.tolist()

    def test_four_prompts_spread_around_annulus(self):
        dist = distance_map(disk_mask(96, (48, 48), 30))
        pts = edge_band_points(dist, SelfPromptConfig(band_lo=2.0, band_hi=4.0))
        prompts = kmeans_prompts(pts, SelfPromptConfig(k=4, seed=3))
        angles = sorted(np.arctan2(v - 48, u - 48)
                        for u, v, _ in prompts.points)
        gaps = np.diff(angles + [angles[0] + 2 * np.pi])
        # roughly even angular spacing: every gap within 90 +/- 45 degrees
        assert all(np.pi / 4 <= g <= 3 * np.pi / 4 for g in gaps)

    def test_fewer_candidates_than_k_returns_all(self):
        pts = np.array([[1.0, 1.0], [5.0, 5.0]])
        prompts = kmeans_prompts(pts, SelfPromptConfig(k=5))
        assert len(prompts.points) == 2

    def test_deterministic(self):
        dist = distance_map(disk_mask(64, (32, 32), 20))
        pts = edge_band_points(dist)
        a = kmeans_prompts(pts, SelfPromptConfig(k=5, seed=7))
        b = kmeans_prompts(pts, SelfPromptConfig(k=5, seed=7))
        assert a.points == b.points


class TestSelfPromptView:
    def test_prompts_land_inside_silhouette(self, sphere_scene):
        _, rendered = sphere_scene
        seg = OracleSegmenter(rendered, label_map={"red ball": 1})
        view = rendered.views[0]
        prompts, mask, box = self_prompt_view(view, "red ball", seg, seg)
        imap = rendered.instance_map(view.view_id)
        assert len(prompts.points) == 5
        for u, v, pos in prompts.points:
            assert pos
            assert imap[int(round(v)), int(round(u))] == 1
        np.testing.assert_array_equal(mask.bits, imap == 1)

    def test_unknown_text_is_not_found(self, sphere_scene):
        _, rendered = sphere_scene
        seg = OracleSegmenter(rendered, label_map={"red ball": 1})
        with pytest.raises(NotFoundError):
            box_to_mask(rendered.views[0], "zebra", seg, seg)


class TestSelfPromptDataset:
    def test_mixed_batch_reports_ok_and_skipped(self, sphere_scene, tmp_path):
        _, rendered = sphere_scene
        known = OracleSegmenter(rendered, label_map={"red ball": 1})
        unknown = OracleSegmenter(rendered, label_map={})
        scenes = [("with-object", rendered.views, known, known),
                  ("without-object", rendered.views, unknown, unknown)]
        results = self_prompt_dataset(scenes, "red ball")
        assert [r.status for r in results] == ["ok", "skipped"]
        ok = results[0]
        assert ok.prompts and len(ok.prompts.points) == 5
        assert ok.detector_score == 1.0
        path = save_batch_report(results, tmp_path / "batch.json")
        data = json.loads(path.read_text())
        assert data[0]["status"] == "ok" and len(data[0]["prompts"]) == 5
        assert data[1]["status"] == "skipped" and "reason" in data[1]

    def test_picks_highest_scoring_view(self, sphere_scene):
        _, rendered = sphere_scene
        seg = OracleSegmenter(rendered, label_map={"red ball": 1})
        results = self_prompt_dataset([("s", rendered.views, seg, seg)],
                                      "red ball")
        assert results[0].view_id in {v.view_id for v in rendered.views}


class TestConfig:
    def test_bad_band_rejected(self):
        with pytest.raises(ValueError):
            SelfPromptConfig(band_lo=4.0, band_hi=2.0)

    def test_bad_k_rejected(self):
        with pytest.raises(ValueError):
            SelfPromptConfig(k=0)
