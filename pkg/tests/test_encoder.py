import numpy as np
import pytest

from mixloc import rng
from mixloc.encoder import (
    RAW_FEATURE_COUNT,
    EncoderConfig,
    encode,
    encoder_hash,
    projection_matrix,
    raw_point_features,
)
from mixloc.errors import EmptyScan
from mixloc.geometry import Pose, Quaternion, transform_points
from mixloc.pointcloud import PointCloud, PreprocessCfg


def test_config_rejects_small_d():
    with pytest.raises(ValueError):
        EncoderConfig(d=4)


def test_isolated_point_features():
    pts = np.array([[0.0, 0, 0], [100.0, 100, 100]])
    feats = raw_point_features(PointCloud(pts), np.array([0]), radius=2.0)
    assert np.allclose(feats[0, 0:6], 0.0)  # offset + shape
    assert feats[0, 7] == 0.0  # density
    assert np.all(np.isfinite(feats))


def test_plane_patch_planarity():
    # symmetric grid: both in-plane covariance eigenvalues are equal, so
    # linearity vanishes and planarity is exactly 1
    g = np.linspace(-1, 1, 17)
    xx, yy = np.meshgrid(g, g)
    pts = np.column_stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)])
    center = int(np.argmin(np.abs(pts[:, 0]) + np.abs(pts[:, 1])))
    feats = raw_point_features(PointCloud(pts), np.array([center]), radius=5.0)
    assert feats[0, 4] > 0.999  # planarity
    assert feats[0, 3] < 1e-9  # linearity
    assert feats[0, 5] < 1e-9  # sphericity


def test_line_patch_linearity():
    t = np.linspace(-2, 2, 200)
    pts = np.column_stack([t, np.zeros_like(t), np.zeros_like(t)])
    feats = raw_point_features(PointCloud(pts), np.array([100]), radius=1.0)
    assert feats[0, 3] > 0.95


def test_encode_deterministic():
    stream = rng.Stream(31)
    cloud = PointCloud(stream.uniform(-10, 10, (500, 3)))
    cfg = EncoderConfig(d=16)
    a = encode(cloud, cfg, 64, fps_seed=5)
    b = encode(cloud, cfg, 64, fps_seed=5)
    assert np.array_equal(a.F, b.F)
    assert a.F.shape == (64, 16)


def test_encode_empty_cloud():
    with pytest.raises(EmptyScan):
        encode(PointCloud(np.zeros((0, 3))), EncoderConfig(), 16, 0)


def test_descriptors_in_tanh_range():
    stream = rng.Stream(32)
    cloud = PointCloud(stream.uniform(-20, 20, (800, 3)))
    ds = encode(cloud, EncoderConfig(d=24), 128, fps_seed=1)
    assert np.all(ds.F > -1.0) and np.all(ds.F < 1.0)


def test_rigid_motion_feature_covariance():
    stream = rng.Stream(33)
    pts = stream.uniform(-8, 8, (600, 3))
    cloud = PointCloud(pts)
    idx = np.arange(0, 600, 13)
    feats = raw_point_features(cloud, idx, radius=2.0)

    pose = Pose(np.array([3.0, -1.0, 2.0]), Quaternion.from_yaw(0.8))
    moved = PointCloud(transform_points(pose, pts))
    feats2 = raw_point_features(moved, idx, radius=2.0)

    # shape, height-above-min and density are invariant
    assert np.abs(feats[:, 3:8] - feats2[:, 3:8]).max() < 1e-6
    # centroid offsets and point coordinates rotate with the cloud
    rot = pose.q.rotation_matrix()
    assert np.abs(feats2[:, 0:3] - feats[:, 0:3] @ rot.T).max() < 1e-6


def test_projection_orthonormal_columns():
    q = projection_matrix(EncoderConfig(d=32, projection_seed=9))
    assert q.shape == (32, RAW_FEATURE_COUNT)
    gram = q.T @ q
    assert np.abs(gram - np.eye(RAW_FEATURE_COUNT)).max() < 1e-12


def test_projection_seed_changes_matrix():
    a = projection_matrix(EncoderConfig(projection_seed=1))
    b = projection_matrix(EncoderConfig(projection_seed=2))
    assert not np.allclose(a, b)


def test_encoder_hash_sensitivity():
    pp = PreprocessCfg()
    h0 = encoder_hash(EncoderConfig(), pp, 512)
    assert h0 == encoder_hash(EncoderConfig(), pp, 512)
    assert h0 != encoder_hash(EncoderConfig(d=16), pp, 512)
    assert h0 != encoder_hash(EncoderConfig(neighborhood_radius=1.0), pp, 512)
    assert h0 != encoder_hash(EncoderConfig(projection_seed=1), pp, 512)
    assert h0 != encoder_hash(EncoderConfig(), PreprocessCfg(voxel=0.25), 512)
    assert h0 != encoder_hash(EncoderConfig(), pp, 256)


def test_scene_agnostic_descriptor_means():
    from mixloc.pointcloud import preprocess
    from mixloc.synth import SensorCfg, generate_world, generate_trajectory, simulate_scan

    cfg = EncoderConfig(d=16)
    means = []
    for seed in (101, 202):
        world = generate_world(seed, 30.0, 20)
        pose = generate_trajectory(world, 1, 1.0, seed).poses[0]
        scan = simulate_scan(world, pose, SensorCfg(points=2048), scan_seed=0)
        clean = preprocess(scan)
        ds = encode(clean, cfg, 128, fps_seed=0)
        means.append(ds.F.mean(axis=0))
    assert np.abs(means[0] - means[1]).max() < 0.5
