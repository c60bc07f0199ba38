import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tagnav.detections import (
    DEFAULT_MIN_CONFIDENCE,
    Detection,
    NoiseSpec,
    group_by_frame,
    read_detections,
    synthesize_detections,
    threshold,
    winding,
    write_detections,
)
from tagnav.errors import InvalidParameterError, ParseError, SchemaError
from tagnav.geometry import Pose, project
from tagnav.schemas import validate

FACING = Pose(2.03, -3.0, 0.724, math.pi / 2)


def path_of(poses, rate=30.0):
    return [(k / rate, p) for k, p in enumerate(poses)]


def square(u=100.0, v=100.0, s=20.0):
    return [[u, v], [u + s, v], [u + s, v + s], [u, v + s]]


def random_detections(rng, n):
    out = []
    for k in range(n):
        u, v = rng.uniform(0, 800, 2)
        s = rng.uniform(1, 50)
        c = np.array(square(u, v, s)) + rng.normal(scale=0.1, size=(4, 2))
        out.append(Detection(float(rng.uniform(0, 100)), int(k // 3), int(rng.integers(1, 9)), c,
                             float(rng.uniform(0, 1))))
    return out


# -- synthetic detector -------------------------------------------------------

def test_zero_noise_detections_are_exact_projections(wall, intr):
    dets = list(synthesize_detections(wall, intr, path_of([FACING])))
    assert sorted(d.id for d in dets) == wall.ids
    for d in dets:
        exact = np.array([project(intr, FACING, c) for c in wall[d.id].corners])
        np.testing.assert_array_equal(d.corners, exact)
        assert d.confidence == 1.0 and d.frame == 0 and d.t == 0.0


def test_certain_dropout_gives_empty_stream(wall, intr):
    noise = NoiseSpec(pixel_sigma=1.0, dropout_prob=1.0, seed=3)
    assert list(synthesize_detections(wall, intr, path_of([FACING] * 20), noise)) == []


def test_noise_std_matches_sigma(wall, intr):
    poses = [Pose(2.03 + 0.01 * k, -3.0, 0.724, math.pi / 2) for k in range(400)]
    clean = list(synthesize_detections(wall, intr, path_of(poses)))
    noisy = list(synthesize_detections(wall, intr, path_of(poses), NoiseSpec(1.0, seed=7)))
    assert [(d.frame, d.id) for d in clean] == [(d.frame, d.id) for d in noisy]
    dev = np.concatenate([(n.corners - c.corners).ravel() for n, c in zip(noisy, clean)])
    assert dev.size >= 10_000
    assert abs(dev.std() - 1.0) < 0.1
    assert abs(dev.mean()) < 0.05


def test_only_whole_visible_markers(wall, intr):
    # close to the wall and off to the side: some markers are cut by the image border
    poses = [Pose(0.2 + 0.05 * k, -1.0, 0.724, math.pi / 2 + 0.3) for k in range(40)]
    dets = list(synthesize_detections(wall, intr, path_of(poses)))
    assert 0 < len(dets) < 8 * len(poses)
    for d in dets:
        pose = poses[d.frame]
        R, t = pose.world_to_camera()
        cam = wall[d.id].corners @ R.T + t
        assert np.all(cam[:, 2] > 0)
        assert np.all(intr.contains(d.corners))


def test_markers_behind_camera_are_not_detected(wall, intr):
    away = Pose(2.03, -3.0, 0.724, -math.pi / 2)
    assert list(synthesize_detections(wall, intr, path_of([away]))) == []


def test_generator_deterministic(tmp_path, wall, intr):
    poses = [Pose(1.5 + 0.02 * k, -3.0, 1.0, math.pi / 2) for k in range(60)]
    noise = NoiseSpec(2.0, 0.2, seed=11)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_detections(synthesize_detections(wall, intr, path_of(poses), noise), a)
    write_detections(synthesize_detections(wall, intr, path_of(poses), noise), b)
    assert a.read_bytes() == b.read_bytes()
    other = tmp_path / "c.jsonl"
    write_detections(synthesize_detections(wall, intr, path_of(poses), NoiseSpec(2.0, 0.2, seed=12)),
                     other)
    assert other.read_bytes() != a.read_bytes()


def test_noise_on_a_marker_does_not_depend_on_other_markers(wall, intr):
    noise = NoiseSpec(1.0, seed=5)
    full = list(synthesize_detections(wall, intr, path_of([FACING] * 3), noise))
    part = list(synthesize_detections(wall.subset(wall.ids), intr, path_of([FACING] * 3), noise))
    assert full == part


def test_timestamps_must_increase(wall, intr):
    with pytest.raises(InvalidParameterError):
        list(synthesize_detections(wall, intr, [(0.0, FACING), (0.0, FACING)]))


def test_sigma_confidence_model(wall, intr):
    dets = list(synthesize_detections(wall, intr, path_of([FACING]),
                                      NoiseSpec(3.0, confidence="sigma")))
    assert all(d.confidence == pytest.approx(0.25) for d in dets)


@pytest.mark.parametrize("kw", [dict(pixel_sigma=-1), dict(dropout_prob=1.5),
                                dict(confidence=2.0), dict(seed=1.5)])
def test_noise_spec_validation(kw):
    with pytest.raises(InvalidParameterError):
        NoiseSpec(**kw)


# -- thresholding -------------------------------------------------------------

def _with_conf(confs):
    return [Detection(0.0, 0, 1, square(), c) for c in confs]


def test_threshold_boundary_inclusive():
    kept = threshold(_with_conf([0.4, 0.5, 0.9]), 0.5)
    assert [d.confidence for d in kept] == [0.5, 0.9]


def test_threshold_zero_is_identity():
    dets = _with_conf([0.0, 0.3, 1.0])
    assert threshold(dets, 0.0) == dets


def test_default_threshold_is_half():
    assert DEFAULT_MIN_CONFIDENCE == 0.5


@given(st.lists(st.floats(0, 1), max_size=30), st.floats(0, 1), st.floats(0, 1))
def test_threshold_idempotent_and_monotone(confs, a, b):
    dets = _with_conf(confs)
    lo, hi = min(a, b), max(a, b)
    once = threshold(dets, lo)
    assert threshold(once, lo) == once
    assert set(map(id, threshold(dets, hi))) <= set(map(id, once))


# -- JSONL round trip and ingestion errors --------------------------------------

def test_round_trip_is_identity(tmp_path, rng):
    dets = random_detections(rng, 1000)
    path = tmp_path / "d.jsonl"
    write_detections(dets, path)
    assert read_detections(path) == dets
    with open(path) as fh:
        assert read_detections(fh) == dets


@given(st.floats(-1e4, 1e4), st.floats(0.1, 1e3), st.floats(0, 1))
def test_round_trip_bit_exact_floats(u, s, conf):
    d = Detection(u / 7, 3, 2, square(u, u / 3, s), conf)
    buf = io.StringIO(json.dumps(d.to_record()) + "\n")
    (back,) = read_detections(buf)
    assert back == d


def test_written_records_match_schema(tmp_path, rng):
    path = tmp_path / "d.jsonl"
    write_detections(random_detections(rng, 20), path)
    for line in path.read_text().splitlines():
        validate(json.loads(line), "detection")


def _lines(*records):
    return io.StringIO("\n".join(r if isinstance(r, str) else json.dumps(r) for r in records))


GOOD = {"t": 0.0, "frame": 0, "id": 1, "corners": square(), "conf": 0.9}


def test_missing_corners_cites_line():
    bad = {k: v for k, v in GOOD.items() if k != "corners"}
    with pytest.raises(SchemaError, match="line 2.*corners"):
        read_detections(_lines(GOOD, bad))


def test_confidence_out_of_range_rejected():
    with pytest.raises(SchemaError, match="line 1"):
        read_detections(_lines(dict(GOOD, conf=1.5)))


def test_invalid_json_is_parse_error():
    with pytest.raises(ParseError, match="line 3"):
        read_detections(_lines(GOOD, GOOD, "{not json"))


@pytest.mark.parametrize("patch", [
    dict(frame=1.5), dict(id="7"), dict(corners=[[0, 0]] * 3), dict(t="x"),
    dict(corners=square()[::-1]),
])
def test_schema_violations(patch):
    with pytest.raises(SchemaError):
        read_detections(_lines(dict(GOOD, **patch)))


def test_blank_lines_skipped():
    assert len(read_detections(_lines(GOOD, "", GOOD))) == 2


def test_winding_sign():
    assert winding(square()) > 0
    assert winding(square()[::-1]) < 0


def test_group_by_frame_preserves_order():
    dets = [Detection(0.1 * f, f, i, square()) for f, i in [(0, 1), (1, 2), (0, 3)]]
    groups = group_by_frame(dets)
    assert [d.id for d in groups[0]] == [1, 3] and [d.id for d in groups[1]] == [2]
