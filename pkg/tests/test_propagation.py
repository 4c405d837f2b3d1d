import numpy as np
import pytest

from segnerf.errors import EmptyObjectError, UninitializableObjectError
from segnerf.propagation import (ObjectPointList, PropagationConfig,
                                 _kmeans_medoids, export_object_cloud,
                                 init_object, load_masks, propagate,
                                 save_masks, select_prompts)
from segnerf.scene import MaskStatus, project_point
from segnerf.segmenter import OracleSegmenter, PromptSet
from segnerf.synthetic import fabricate_sparse_cloud, point_instances


def iou(a, b):
    return (a & b).sum() / max((a | b).sum(), 1)


def center_prompt(rendered, view_id, instance_id):
    imap = rendered.instance_map(view_id)
    ys, xs = np.nonzero(imap == instance_id)
    return PromptSet(points=((float(xs.mean().round()), float(ys.mean().round()),
                              True),))


class TestKmeansMedoids:
    def test_medoids_are_input_indices(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(40, 2))
        idx = _kmeans_medoids(pts, 5, seed=1)
        assert len(idx) <= 5
        assert all(0 <= i < 40 for i in idx)

    def test_k_ge_n_returns_all(self):
        pts = np.array([[0.0, 0.0], [1.0, 1.0]])
        np.testing.assert_array_equal(_kmeans_medoids(pts, 5), [0, 1])

    def test_separated_clusters_get_one_medoid_each(self):
        a = np.random.default_rng(1).normal(size=(20, 2)) * 0.1
        clusters = [a + [0, 0], a + [10, 0], a + [0, 10]]
        pts = np.concatenate(clusters)
        idx = _kmeans_medoids(pts, 3, seed=2)
        groups = sorted(i // 20 for i in idx)
        assert groups == [0, 1, 2]

    def test_deterministic_for_fixed_seed(self):
        pts = np.random.default_rng(5).normal(size=(30, 2))
        np.testing.assert_array_equal(_kmeans_medoids(pts, 4, seed=9),
                                      _kmeans_medoids(pts, 4, seed=9))


class TestInitObject:
    def test_seeds_only_object_points(self, sphere_scene, sphere_cloud):
        spec, rendered = sphere_scene
        seg = OracleSegmenter(rendered)
        view0 = rendered.views[0]
        _, olist = init_object(sphere_cloud, view0, center_prompt(rendered, 0, 1),
                               seg)
        assert len(olist) > 10
        inst = point_instances(spec, sphere_cloud)
        assert all(inst[pid] == 1 for pid in olist.ids())

    def test_featureless_mask_is_uninitializable(self, sphere_scene, sphere_cloud):
        _, rendered = sphere_scene
        seg = OracleSegmenter(rendered)
        # erosion larger than the silhouette leaves no linked features
        cfg = PropagationConfig(erosion_px=60)
        with pytest.raises(UninitializableObjectError):
            init_object(sphere_cloud, rendered.views[0],
                        center_prompt(rendered, 0, 1), seg, cfg)

    def test_larger_erosion_never_adds_points(self, sphere_scene, sphere_cloud):
        _, rendered = sphere_scene
        seg = OracleSegmenter(rendered)
        view0 = rendered.views[0]
        prompts = center_prompt(rendered, 0, 1)
        sizes = []
        for px in (0, 2, 5):
            cfg = PropagationConfig(erosion_px=px)
            _, olist = init_object(sphere_cloud, view0, prompts, seg, cfg)
            sizes.append(len(olist))
        assert sizes[0] >= sizes[1] >= sizes[2]


class TestSelectPrompts:
    def test_prompts_are_linked_feature_pixels(self, sphere_scene, sphere_cloud):
        _, rendered = sphere_scene
        seg = OracleSegmenter(rendered)
        _, olist = init_object(sphere_cloud, rendered.views[0],
                               center_prompt(rendered, 0, 1), seg)
        view = rendered.views[1]
        prompts = select_prompts(sphere_cloud, olist, view)
        assert 1 <= len(prompts.points) <= 5
        feats = sphere_cloud.features[view.view_id]
        uv_set = {(u, v) for u, v in feats.uv.tolist()}
        for u, v, pos in prompts.points:
            assert pos
            assert (u, v) in uv_set

    def test_view_without_object_features_gives_empty_set(self, sphere_scene,
                                                          sphere_cloud):
        _, rendered = sphere_scene
        olist = ObjectPointList(object_id=1)  # empty list: nothing to match
        assert not select_prompts(sphere_cloud, olist, rendered.views[3])


class TestPropagate:
    def test_full_ring_masks_match_silhouettes(self, sphere_scene, sphere_cloud):
        _, rendered = sphere_scene
        seg = OracleSegmenter(rendered)
        result = propagate(sphere_cloud, rendered.views,
                           [(rendered.views[0], center_prompt(rendered, 0, 1))],
                           seg)
        assert set(result.masks[1]) == {v.view_id for v in rendered.views}
        for view in rendered.views:
            mask = result.masks[1][view.view_id]
            assert mask.status is MaskStatus.ACCEPTED
            truth = rendered.instance_map(view.view_id) == 1
            assert iou(mask.bits, truth) >= 0.99

    def test_point_list_grows_monotonically(self, sphere_scene, sphere_cloud):
        spec, rendered = sphere_scene
        seg = OracleSegmenter(rendered)
        cfg = PropagationConfig(min_track_hits=1)  # disable final pruning
        view0 = rendered.views[0]
        _, olist0 = init_object(sphere_cloud, view0,
                                center_prompt(rendered, 0, 1), seg, cfg)
        result = propagate(sphere_cloud, rendered.views,
                           [(view0, center_prompt(rendered, 0, 1))], seg, cfg)
        assert set(olist0.ids()) <= set(result.point_lists[1].ids())

    def test_two_objects_stay_disjoint(self, two_object_scene):
        spec, rendered = two_object_scene
        cloud = fabricate_sparse_cloud(spec, rendered, 4000, 0.0, seed=7)
        seg = OracleSegmenter(rendered)
        result = propagate(cloud, rendered.views,
                           [(rendered.views[0], center_prompt(rendered, 0, 1)),
                            (rendered.views[0], center_prompt(rendered, 0, 2))],
                           seg)
        ids1 = set(result.point_lists[1].ids())
        ids2 = set(result.point_lists[2].ids())
        assert ids1 and ids2 and not (ids1 & ids2)
        inst = point_instances(spec, cloud)
        assert all(inst[p] == 1 for p in ids1)
        assert all(inst[p] == 2 for p in ids2)

    def test_multi_object_pass_matches_single_object_passes(self, two_object_scene):
        spec, rendered = two_object_scene
        cloud = fabricate_sparse_cloud(spec, rendered, 4000, 0.0, seed=7)
        seg = OracleSegmenter(rendered)
        both = propagate(cloud, rendered.views,
                         [(rendered.views[0], center_prompt(rendered, 0, 1)),
                          (rendered.views[0], center_prompt(rendered, 0, 2))],
                         seg)
        solo = propagate(cloud, rendered.views,
                         [(rendered.views[0], center_prompt(rendered, 0, 1))],
                         seg)
        for view in rendered.views:
            np.testing.assert_array_equal(both.masks[1][view.view_id].bits,
                                          solo.masks[1][view.view_id].bits)

    def test_second_run_is_identical(self, sphere_scene, sphere_cloud):
        _, rendered = sphere_scene
        seg = OracleSegmenter(rendered)
        args = (sphere_cloud, rendered.views,
                [(rendered.views[0], center_prompt(rendered, 0, 1))], seg)
        r1, r2 = propagate(*args), propagate(*args)
        assert r1.visit_order == r2.visit_order
        for vid in r1.masks[1]:
            np.testing.assert_array_equal(r1.masks[1][vid].bits,
                                          r2.masks[1][vid].bits)

    def test_single_view_scene(self, sphere_scene, sphere_cloud):
        _, rendered = sphere_scene
        seg = OracleSegmenter(rendered)
        cfg = PropagationConfig(min_track_hits=1)
        result = propagate(sphere_cloud, rendered.views[:1],
                           [(rendered.views[0], center_prompt(rendered, 0, 1))],
                           seg, cfg)
        assert list(result.masks[1]) == [rendered.views[0].view_id]

    def test_input_visit_order(self, sphere_scene, sphere_cloud):
        _, rendered = sphere_scene
        seg = OracleSegmenter(rendered)
        cfg = PropagationConfig(visit_order="input")
        result = propagate(sphere_cloud, rendered.views,
                           [(rendered.views[0], center_prompt(rendered, 0, 1))],
                           seg, cfg)
        assert result.visit_order == [v.view_id for v in rendered.views]


class TestExport:
    def test_exported_points_lie_on_sphere(self, sphere_scene, sphere_cloud):
        spec, rendered = sphere_scene
        seg = OracleSegmenter(rendered)
        result = propagate(sphere_cloud, rendered.views,
                           [(rendered.views[0], center_prompt(rendered, 0, 1))],
                           seg)
        sub = export_object_cloud(sphere_cloud, result.point_lists[1])
        sub.validate()
        center = np.asarray(spec.objects[0].center, dtype=float)
        radii = np.linalg.norm(sub.xyz_array() - center, axis=1)
        np.testing.assert_allclose(radii, 0.5, atol=1e-6)

    def test_empty_object_errors(self, sphere_cloud):
        with pytest.raises(EmptyObjectError):
            export_object_cloud(sphere_cloud, ObjectPointList(object_id=1))


class TestMaskIo:
    def test_round_trip(self, sphere_scene, sphere_cloud, tmp_path):
        _, rendered = sphere_scene
        seg = OracleSegmenter(rendered)
        result = propagate(sphere_cloud, rendered.views,
                           [(rendered.views[0], center_prompt(rendered, 0, 1))],
                           seg)
        save_masks(result.masks, tmp_path / "masks")
        loaded = load_masks(tmp_path / "masks")
        assert set(loaded) == set(result.masks)
        for vid, mask in result.masks[1].items():
            np.testing.assert_array_equal(loaded[1][vid].bits, mask.bits)
            assert loaded[1][vid].status == mask.status
