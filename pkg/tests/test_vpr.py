import numpy as np
import numpy.testing as npt
import pytest

from nudgeloc.geometry import Pose, Twist, exp_map, rotation_rpy
from nudgeloc.scene import ArtifactSpec, CameraIntrinsics, SceneModel, render
from nudgeloc.vpr import (
    DESCRIPTOR_DIM,
    AnchorDatabase,
    Descriptor,
    GridSpec,
    anchor_pose,
    build_anchor_db,
    cosine_distance,
    encode,
    retrieve_top_m,
)

FOV = np.deg2rad(100.0)
KM = CameraIntrinsics(80, 64, FOV)


@pytest.fixture(scope="module")
def scene():
    return SceneModel.default(seed=7)


@pytest.fixture(scope="module")
def small_db(scene):
    grid = GridSpec(4, 4, 4, (0.8, 4.2), (0.8, 3.2), 0.9)
    return build_anchor_db(scene, grid, KM, ArtifactSpec())


class TestEncode:
    def test_deterministic(self, scene):
        img = render(scene, Pose(rotation_rpy(0.4), [2.0, 1.5, 0.9]), KM)
        npt.assert_array_equal(encode(img).v, encode(img).v)

    def test_unit_norm_and_dim(self, scene):
        img = render(scene, Pose(rotation_rpy(1.4), [1.0, 2.5, 1.1]), KM)
        d = encode(img)
        assert d.v.shape == (DESCRIPTOR_DIM,)
        assert abs(np.linalg.norm(d.v) - 1.0) < 1e-9

    def test_brightness_offset_invariance(self, scene):
        img = render(scene, Pose(rotation_rpy(0.4), [2.0, 1.5, 0.9]), KM)
        mid = np.clip(img * 0.6 + 0.15, 0, 1)  # keep offset off the clamp rails
        assert cosine_distance(encode(mid), encode(mid + 0.1)) < 1e-6

    def test_contrast_scale_invariance(self, scene):
        img = render(scene, Pose(rotation_rpy(0.4), [2.0, 1.5, 0.9]), KM)
        assert cosine_distance(encode(img), encode(img * 0.5)) < 1e-6

    def test_constant_image_is_null(self):
        d = encode(np.full((64, 80, 3), 0.5, dtype=np.float32))
        assert d.is_null
        npt.assert_array_equal(d.v, np.zeros(DESCRIPTOR_DIM))

    def test_too_small_raises(self):
        with pytest.raises(ValueError):
            encode(np.zeros((8, 8, 3)))

    def test_distance_falloff(self, scene):
        # farther viewpoints are farther in descriptor space
        rng = np.random.default_rng(11)
        ok = tot = 0
        while tot < 100:
            p0 = Pose(
                rotation_rpy(rng.uniform(-np.pi, np.pi)),
                rng.uniform([0.8, 0.8, 0.6], [4.2, 3.2, 1.2]),
            )
            d = rng.normal(size=3)
            d[2] = 0.0
            d /= np.linalg.norm(d)
            far_t = p0.t + 2.0 * d
            if np.any(far_t[:2] < 0.3) or np.any(far_t[:2] > scene.extents[:2] - 0.3):
                continue
            tot += 1
            d0 = encode(render(scene, p0, KM))
            near = cosine_distance(d0, encode(render(scene, Pose(p0.R, p0.t + 0.1 * d), KM)))
            far = cosine_distance(d0, encode(render(scene, Pose(p0.R, far_t), KM)))
            ok += far > near
        assert ok >= 90


class TestCosineDistance:
    def test_range_and_null(self):
        v = np.zeros(DESCRIPTOR_DIM)
        v[0] = 1.0
        a = Descriptor(v)
        assert cosine_distance(a, a) == 0.0
        w = np.zeros(DESCRIPTOR_DIM)
        w[0] = -1.0
        assert abs(cosine_distance(a, Descriptor(w)) - 2.0) < 1e-12
        assert cosine_distance(a, Descriptor(np.zeros(DESCRIPTOR_DIM), is_null=True)) == 2.0


class TestGridSpec:
    def test_counts(self):
        assert GridSpec(12, 14, 3).count == 504
        assert GridSpec(8, 9, 7).count == 504
        g = GridSpec(14, 10, 18, limit=2502)
        assert g.count == 2502
        assert len(g.samples()) == 2502

    def test_single_cell_grid(self):
        g = GridSpec(1, 1, 1, (2.0, 2.0), (1.5, 1.5), 0.9)
        s = g.samples()
        assert s.shape == (1, 3)
        npt.assert_allclose(s[0], [2.0, 1.5, 0.0])

    def test_validation(self):
        with pytest.raises(ValueError):
            GridSpec(0, 4, 4)
        with pytest.raises(ValueError):
            GridSpec(2, 2, 2, limit=9)

    def test_spacing(self):
        g = GridSpec(6, 6, 14, (0.4, 4.6), (0.4, 3.6))
        dx, dy = g.spacing()
        assert abs(dx - 4.2 / 5) < 1e-12
        assert abs(dy - 3.2 / 5) < 1e-12

    def test_dict_roundtrip(self):
        g = GridSpec(6, 6, 14, (0.4, 4.6), (0.4, 3.6), 1.0, limit=400)
        assert GridSpec.from_dict(g.to_dict()) == g


class TestBuildAnchorDb:
    def test_single_anchor_pose(self, scene):
        grid = GridSpec(1, 1, 1, (1.2, 1.2), (2.2, 2.2), 0.9)
        db = build_anchor_db(scene, grid, KM)
        assert len(db) == 1
        # yaw 0 leaves the twist's translation untouched
        npt.assert_allclose(db.poses[0].t, [1.2, 2.2, 0.9], atol=1e-12)
        npt.assert_allclose(db.poses[0].R, np.eye(3), atol=1e-12)

    def test_counts_504_and_2502(self, scene):
        db = build_anchor_db(scene, GridSpec(12, 14, 3, (0.5, 4.5), (0.5, 3.5)), KM)
        assert len(db) == 504
        db2 = build_anchor_db(scene, GridSpec(14, 10, 18, (0.5, 4.5), (0.5, 3.5), limit=2502), KM)
        assert len(db2) == 2502

    def test_anchor_height_coupling(self):
        # the z slot passes through the left Jacobian unchanged for pure yaw
        p = anchor_pose(1.0, 2.0, 0.9, 1.2)
        assert abs(p.t[2] - 0.9) < 1e-12
        q = exp_map(Twist([1.0, 2.0, 0.9], [1.2, 0.0, 0.0]))
        npt.assert_allclose(p.matrix(), q.matrix())

    def test_grid_outside_room_raises(self, scene):
        with pytest.raises(ValueError):
            build_anchor_db(scene, GridSpec(4, 4, 2, (0.5, 5.5), (0.5, 3.5)), KM)


class TestRetrieval:
    def test_self_query_rank_one(self, small_db):
        q = Descriptor(small_db.descriptors[17].copy())
        hits = retrieve_top_m(small_db, q, 3)
        assert hits[0].index == 17
        assert hits[0].distance == 0.0

    def test_full_ranking_is_permutation(self, small_db):
        q = Descriptor(small_db.descriptors[0].copy())
        hits = retrieve_top_m(small_db, q, len(small_db))
        assert sorted(h.index for h in hits) == list(range(len(small_db)))
        d = [h.distance for h in hits]
        assert all(a <= b + 1e-15 for a, b in zip(d, d[1:]))

    def test_matches_brute_force_oracle(self, small_db, scene):
        img = render(scene, Pose(rotation_rpy(0.9), [2.6, 1.9, 0.9]), KM)
        q = encode(img)
        hits = retrieve_top_m(small_db, q, 10)
        dists = [
            (1.0 - float(small_db.descriptors[i] @ q.v), i) for i in range(len(small_db))
        ]
        oracle = sorted(range(len(dists)), key=lambda i: (dists[i][0], i))[:10]
        assert [h.index for h in hits] == oracle

    def test_m_too_large_warns_and_returns_all(self, small_db):
        q = Descriptor(small_db.descriptors[5].copy())
        with pytest.warns(RuntimeWarning):
            hits = retrieve_top_m(small_db, q, len(small_db) + 10)
        assert len(hits) == len(small_db)

    def test_invalid_m(self, small_db):
        with pytest.raises(ValueError):
            retrieve_top_m(small_db, Descriptor(small_db.descriptors[0].copy()), 0)

    def test_null_query_max_distance(self, small_db):
        hits = retrieve_top_m(small_db, Descriptor(np.zeros(DESCRIPTOR_DIM), is_null=True), 2)
        assert all(h.distance == 2.0 for h in hits)
        assert [h.index for h in hits] == [0, 1]  # stable tie-break by index


class TestSerialization:
    def test_build_reproducible_byte_identical(self, scene, tmp_path):
        grid = GridSpec(3, 3, 2, (1.0, 4.0), (1.0, 3.0), 0.9)
        a = build_anchor_db(scene, grid, KM, ArtifactSpec(seed=1))
        b = build_anchor_db(scene, grid, KM, ArtifactSpec(seed=1))
        pa, pb = tmp_path / "a.db", tmp_path / "b.db"
        a.save(pa)
        b.save(pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_save_load_roundtrip(self, small_db, tmp_path):
        path = tmp_path / "db.bin"
        small_db.save(path)
        loaded = AnchorDatabase.load(path)
        assert len(loaded) == len(small_db)
        npt.assert_array_equal(loaded.descriptors, small_db.descriptors)
        assert loaded.grid == small_db.grid
        assert loaded.scene_seed == small_db.scene_seed
        for p, q in zip(loaded.poses, small_db.poses):
            npt.assert_array_equal(p.flat(), q.flat())
