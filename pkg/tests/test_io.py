"""Serialization contracts: lossless round trips, gap detection, config loading."""

import json
import math

import numpy as np
import pytest

from mono3dt.data import DetectionRecord, OutOfRangeValue, TrackerConfig, TrackRecord, TrackStatus, UnknownKey
from mono3dt.geometry import Box2D, Box3D, CameraPose
from mono3dt.io import (
    DimensionMismatch,
    FrameGapError,
    ParseError,
    UnsupportedFormatVersion,
    load_config,
    load_detections,
    load_poses,
    load_sequence,
    load_tracks,
    write_detections,
    write_poses,
    write_tracks,
)

from conftest import default_intrinsics, random_pose


def make_detection(rng, frame, app_len=16) -> DetectionRecord:
    x0, y0 = rng.uniform(0, 900, 2)
    return DetectionRecord(
        frame_index=frame,
        box2d=Box2D(x0, y0, x0 + rng.uniform(1, 300), y0 + rng.uniform(1, 150)),
        center_proj=rng.uniform(0, 1900, 2),
        depth=rng.uniform(1, 90),
        yaw_local=rng.uniform(0, 2 * math.pi),
        dimensions=rng.uniform(1, 5, 3),
        appearance=rng.normal(size=app_len),
        score=rng.uniform(0.2, 1.0),
    )


class TestDetectionsRoundTrip:
    def test_empty_file_with_valid_poses(self, tmp_path):
        det_path = tmp_path / "detections.jsonl"
        poses_path = tmp_path / "poses.json"
        write_detections([], det_path)
        write_poses(default_intrinsics(), [CameraPose.identity()] * 4, poses_path)
        seq = load_sequence(det_path, poses_path)
        assert seq.n_frames == 4
        assert all(frame == [] for frame in seq.detections)

    def test_round_trip_lossless(self, tmp_path):
        rng = np.random.default_rng(0)
        frames = [[make_detection(rng, f) for _ in range(rng.integers(0, 5))] for f in range(6)]
        path = tmp_path / "detections.jsonl"
        write_detections(frames, path)
        loaded = load_detections(path)
        flat = [d for fr in frames for d in fr]
        assert len(loaded) == len(flat)
        for a, b in zip(flat, loaded):
            assert a.frame_index == b.frame_index
            assert a.box2d.as_tuple() == b.box2d.as_tuple()
            assert np.array_equal(a.center_proj, b.center_proj)
            assert a.depth == b.depth and a.yaw_local == b.yaw_local
            assert np.array_equal(a.dimensions, b.dimensions)
            assert np.array_equal(a.appearance, b.appearance)
            assert a.score == b.score

    def test_counts_conserved(self, tmp_path):
        rng = np.random.default_rng(1)
        frames = [[make_detection(rng, f) for _ in range(3)] for f in range(5)]
        path = tmp_path / "d.jsonl"
        write_detections(frames, path)
        n_lines = len([l for l in path.read_text().splitlines() if l.strip()])
        assert len(load_detections(path)) == n_lines - 1  # minus header

    def test_appearance_length_mismatch(self, tmp_path):
        rng = np.random.default_rng(2)
        frames = [[make_detection(rng, 0, app_len=16)], [make_detection(rng, 1, app_len=8)]]
        path = tmp_path / "d.jsonl"
        write_detections(frames, path)
        with pytest.raises(DimensionMismatch):
            load_detections(path)

    def test_parse_error_reports_line(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"format_version": 1, "kind": "detections"}\n{broken\n')
        with pytest.raises(ParseError) as err:
            load_detections(path)
        assert err.value.line_no == 2

    def test_unknown_format_version(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text('{"format_version": 99, "kind": "detections"}\n')
        with pytest.raises(UnsupportedFormatVersion):
            load_detections(path)


class TestPoses:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        poses = [random_pose(rng) for _ in range(5)]
        intr = default_intrinsics()
        path = tmp_path / "poses.json"
        write_poses(intr, poses, path)
        intr2, poses2 = load_poses(path)
        assert intr2 == intr
        for a, b in zip(poses, poses2):
            assert np.array_equal(a.rotation, b.rotation)
            assert np.array_equal(a.translation, b.translation)

    def test_missing_frame_rejected(self, tmp_path):
        intr = default_intrinsics()
        path = tmp_path / "poses.json"
        write_poses(intr, [CameraPose.identity()] * 6, path)
        doc = json.loads(path.read_text())
        del doc["frames"][3]  # drop frame 3 of 0..5
        path.write_text(json.dumps(doc))
        with pytest.raises(FrameGapError):
            load_poses(path)

    def test_detection_frame_outside_pose_range(self, tmp_path):
        rng = np.random.default_rng(4)
        det_path = tmp_path / "d.jsonl"
        poses_path = tmp_path / "p.json"
        write_detections([[make_detection(rng, 7)]], det_path)
        write_poses(default_intrinsics(), [CameraPose.identity()] * 3, poses_path)
        with pytest.raises(FrameGapError):
            load_sequence(det_path, poses_path)


class TestTracks:
    def test_empty_set_header_only(self, tmp_path):
        path = tmp_path / "tracks.jsonl"
        write_tracks([], path)
        lines = [l for l in path.read_text().splitlines() if l.strip()]
        assert len(lines) == 1
        assert json.loads(lines[0])["format_version"] == 1
        assert load_tracks(path) == []

    def test_single_record_bit_exact(self, tmp_path):
        rec = TrackRecord(
            frame_index=3,
            track_id=7,
            box3d=Box3D([1.25, -2.5, 0.75], [4.2, 1.8, 1.5], 0.7853981633974483),
            velocity=[0.1, -0.2, 0.0],
            box2d_projected=Box2D(10.5, 20.25, 100.125, 200.0),
            status=TrackStatus.TRACKED,
        )
        path = tmp_path / "tracks.jsonl"
        write_tracks([rec], path)
        (loaded,) = load_tracks(path)
        assert loaded.frame_index == rec.frame_index
        assert loaded.track_id == rec.track_id
        assert np.array_equal(loaded.box3d.center, rec.box3d.center)
        assert loaded.box3d.yaw == rec.box3d.yaw
        assert np.array_equal(loaded.velocity, rec.velocity)
        assert loaded.box2d_projected.as_tuple() == rec.box2d_projected.as_tuple()
        assert loaded.status == rec.status

    def test_fuzz_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        statuses = [TrackStatus.TRACKED, TrackStatus.OCCLUDED, TrackStatus.LOST]
        records = []
        for i in range(10_000):
            x0, y0 = rng.uniform(0, 1000, 2)
            records.append(
                TrackRecord(
                    frame_index=int(rng.integers(0, 500)),
                    track_id=int(rng.integers(0, 200)),
                    box3d=Box3D(rng.normal(scale=40, size=3), rng.uniform(0.5, 8, 3), rng.uniform(0, 2 * math.pi)),
                    velocity=rng.normal(scale=1.0, size=3),
                    box2d_projected=Box2D(x0, y0, x0 + rng.uniform(0, 500), y0 + rng.uniform(0, 300)),
                    status=statuses[rng.integers(0, 3)],
                )
            )
        path = tmp_path / "tracks.jsonl"
        write_tracks(records, path)
        loaded = load_tracks(path)
        assert len(loaded) == len(records)
        ordered = sorted(records, key=lambda r: (r.frame_index, r.track_id))
        for a, b in zip(ordered, loaded):
            assert (a.frame_index, a.track_id) == (b.frame_index, b.track_id)
            assert np.array_equal(a.box3d.center, b.box3d.center)
            assert np.array_equal(a.box3d.dimensions, b.box3d.dimensions)
            assert a.box3d.yaw == b.box3d.yaw
            assert np.array_equal(a.velocity, b.velocity)
            assert a.box2d_projected.as_tuple() == b.box2d_projected.as_tuple()
            assert a.status == b.status

    def test_write_then_read_is_sorted(self, tmp_path):
        recs = [
            TrackRecord(5, 1, Box3D([0, 0, 0], [1, 1, 1], 0), [0, 0, 0], Box2D(0, 0, 1, 1), TrackStatus.TRACKED),
            TrackRecord(2, 9, Box3D([0, 0, 0], [1, 1, 1], 0), [0, 0, 0], Box2D(0, 0, 1, 1), TrackStatus.LOST),
            TrackRecord(2, 3, Box3D([0, 0, 0], [1, 1, 1], 0), [0, 0, 0], Box2D(0, 0, 1, 1), TrackStatus.OCCLUDED),
        ]
        path = tmp_path / "t.jsonl"
        write_tracks(recs, path)
        loaded = load_tracks(path)
        assert [(r.frame_index, r.track_id) for r in loaded] == [(2, 3), (2, 9), (5, 1)]


class TestSimulatorSequenceRoundTrip:
    def test_scenario_files_reload_losslessly(self, tmp_path):
        from mono3dt.io import load_sequence
        from mono3dt.simulator import ScenarioConfig, write_scenario

        cfg = ScenarioConfig.make_preset("crossing_occlusion", seed=2, frames=25)
        paths = write_scenario(cfg, tmp_path)
        sequence = load_sequence(paths["detections"], paths["poses"])
        rewritten = tmp_path / "detections2.jsonl"
        write_detections(sequence.detections, rewritten)
        assert rewritten.read_bytes() == paths["detections"].read_bytes()
        poses2 = tmp_path / "poses2.json"
        write_poses(sequence.intrinsics, sequence.poses, poses2)
        assert poses2.read_bytes() == paths["poses"].read_bytes()


class TestConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("")
        cfg = load_config(path)
        assert cfg == TrackerConfig()
        assert cfg.w_deep == 0.3 and cfg.w_3d == 0.7
        assert cfg.max_lost_age == 20
        assert cfg.range_min == 0.15 and cfg.range_max == 100.0

    def test_weight_out_of_range(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"w_3d": 2.0}))
        with pytest.raises(OutOfRangeValue):
            load_config(path)

    def test_override_max_age(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"max_lost_age": 30}))
        assert load_config(path).max_lost_age == 30

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"nonsense": 1}))
        with pytest.raises(UnknownKey):
            load_config(path)

    def test_bad_backend(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"motion_backend": "magic"}))
        with pytest.raises(OutOfRangeValue):
            load_config(path)
