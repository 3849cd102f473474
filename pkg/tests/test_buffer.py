import logging

import numpy as np
import pytest

from mixloc import rng
from mixloc.buffer import (
    BatchSampler,
    MiningConfig,
    TrainingBuffer,
    buffer_file_size,
    build_buffer,
    load_buffer,
    sample_batch,
    save_buffer,
)
from mixloc.encoder import DescriptorSet, EncoderConfig
from mixloc.errors import EncoderMismatch, NoPositives
from mixloc.geometry import Pose, Quaternion
from mixloc.pointcloud import PreprocessCfg


def make_buffer(positions, m=8, d=16, seed=50):
    stream = rng.Stream(seed)
    entries = []
    for i, pos in enumerate(positions):
        F = stream.uniform(-1, 1, (m, d)).astype(np.float32)
        entries.append(DescriptorSet(F, Pose(np.array([*pos, 0.0])), i))
    return TrainingBuffer(entries, encoder_hash=1234, m=m, d=d)


def line_positions(n, spacing=1.0):
    return [(i * spacing, 0.0) for i in range(n)]


def test_build_buffer_shapes(tiny_dataset):
    enc = EncoderConfig(d=16)
    buf = build_buffer(tiny_dataset, enc, PreprocessCfg(), 32, seed=0)
    assert len(buf) == 40
    for e in buf.entries:
        assert e.F.shape == (32, 16)
    assert [e.scan_id for e in buf.entries] == list(range(40))


def test_build_buffer_deterministic_file(tiny_dataset, tmp_path):
    enc = EncoderConfig(d=16)
    b1 = build_buffer(tiny_dataset, enc, PreprocessCfg(), 32, seed=0)
    b2 = build_buffer(tiny_dataset, enc, PreprocessCfg(), 32, seed=0)
    p1, p2 = tmp_path / "a.fmbf", tmp_path / "b.fmbf"
    save_buffer(p1, b1)
    save_buffer(p2, b2)
    assert p1.read_bytes() == p2.read_bytes()


def test_buffer_round_trip(tmp_path):
    buf = make_buffer(line_positions(10))
    path = tmp_path / "buf.fmbf"
    save_buffer(path, buf)
    loaded = load_buffer(path)
    assert loaded.encoder_hash == buf.encoder_hash
    assert loaded.m == buf.m and loaded.d == buf.d
    for a, b in zip(buf.entries, loaded.entries):
        assert np.array_equal(a.F, b.F)
        assert np.array_equal(a.pose.t, b.pose.t)
        assert a.scan_id == b.scan_id


def test_buffer_file_size_formula(tmp_path):
    buf = make_buffer(line_positions(7), m=8, d=16)
    path = tmp_path / "buf.fmbf"
    save_buffer(path, buf)
    assert path.stat().st_size == buffer_file_size(7, 8, 16)
    assert buffer_file_size(7, 8, 16) == 28 + 7 * (8 * 16 * 4 + 60)


def test_buffer_bad_magic(tmp_path):
    path = tmp_path / "bad.fmbf"
    path.write_bytes(b"NOPE" + b"\0" * 24)
    with pytest.raises(ValueError, match="magic"):
        load_buffer(path)


def test_verify_hash():
    buf = make_buffer(line_positions(4))
    buf.verify_hash(1234)
    with pytest.raises(EncoderMismatch):
        buf.verify_hash(42)


def test_entries_must_be_sorted():
    stream = rng.Stream(51)
    e = [
        DescriptorSet(stream.uniform(-1, 1, (4, 8)).astype(np.float32), Pose(np.zeros(3)), i)
        for i in (2, 1)
    ]
    with pytest.raises(ValueError):
        TrainingBuffer(e, 0, 4, 8)


def test_sample_batch_thresholds():
    buf = make_buffer(line_positions(30, spacing=1.0))
    mining = MiningConfig(d_pos=2.0, d_neg=10.0)
    batch = sample_batch(buf, 16, mining, rng.Stream(1))
    assert batch.query.shape == (16, 8, 16)
    t = buf.translations()
    for b in range(16):
        q = batch.query_ids[b]
        # positives within d_pos and distinct
        p_dist = None
        for e, ds in enumerate(buf.entries):
            if np.array_equal(ds.F, batch.positive[b]):
                assert e != q
                p_dist = np.linalg.norm(t[e] - t[q])
                break
        assert p_dist is not None and p_dist <= 2.0
        if not batch.neg_fallback[b]:
            for e, ds in enumerate(buf.entries):
                if np.array_equal(ds.F, batch.negative[b]):
                    assert np.linalg.norm(t[e] - t[q]) >= 10.0
                    break


def test_sample_batch_reproducible():
    buf = make_buffer(line_positions(20))
    mining = MiningConfig()
    b1 = sample_batch(buf, 8, mining, rng.Stream(7))
    b2 = sample_batch(buf, 8, mining, rng.Stream(7))
    assert np.array_equal(b1.query_ids, b2.query_ids)
    assert np.array_equal(b1.query, b2.query)
    assert np.array_equal(b1.negative, b2.negative)


def test_sample_batch_two_entry_fallback(caplog):
    buf = make_buffer([(0.0, 0.0), (1.0, 0.0)])
    mining = MiningConfig(d_pos=2.0, d_neg=10.0)
    with caplog.at_level(logging.WARNING):
        batch = sample_batch(buf, 2, mining, rng.Stream(3))
    assert batch.neg_fallback.all()
    assert "fell back" in caplog.text


def test_sample_batch_no_positives():
    buf = make_buffer([(0.0, 0.0), (100.0, 0.0)])
    with pytest.raises(NoPositives):
        sample_batch(buf, 2, MiningConfig(d_pos=2.0, d_neg=10.0), rng.Stream(1))


def test_sample_batch_dpos_zero():
    buf = make_buffer(line_positions(5))
    with pytest.raises(NoPositives):
        sample_batch(buf, 2, MiningConfig(d_pos=0.0, d_neg=10.0), rng.Stream(1))


def test_mining_config_validation():
    with pytest.raises(ValueError):
        MiningConfig(d_pos=5.0, d_neg=2.0)


def test_one_meter_spacing_all_have_positives():
    buf = make_buffer(line_positions(50, spacing=1.0))
    sampler = BatchSampler(buf, MiningConfig(d_pos=2.0, d_neg=10.0))
    assert sampler.has_positive.all()
