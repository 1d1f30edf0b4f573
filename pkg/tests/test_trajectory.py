import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from supertraj.errors import ContractError
from supertraj.evaluation import Occluder, SyntheticObject, SyntheticSpec, generate_synthetic
from supertraj.flow import VideoSequence, bilinear
from supertraj.trajectory import (APP_SCALE, TrajPoint, Trajectory, appearance_energy, compute_features,
                                  generate_trajectories, load_trajectories, occlusion_energy, save_trajectories,
                                  step_probability, track_point, trajectory_features)

from helpers import constant_flows, constant_video, flows_from_arrays


def _frames_with(colors_prev, colors_cur):
    a = np.zeros((3, 3, 3))
    b = np.zeros((3, 3, 3))
    a[1, 1] = colors_prev
    b[2, 0] = colors_cur
    return a, b


# ---------------------------------------------------------------------------
# energies


def test_appearance_identical_colors():
    a, b = _frames_with((40, 50, 60), (40, 50, 60))
    assert appearance_energy(a, b, TrajPoint(1, 1, 3), TrajPoint(0, 2, 4)) == 0.0


def test_appearance_pythagorean():
    a, b = _frames_with((10, 20, 30), (13, 24, 30))
    assert appearance_energy(a, b, TrajPoint(1, 1, 1), TrajPoint(0, 2, 2)) == pytest.approx(5.0)


def test_appearance_black_white():
    a, b = _frames_with((0, 0, 0), (255, 255, 255))
    assert appearance_energy(a, b, TrajPoint(1, 1, 1), TrajPoint(0, 2, 2)) == pytest.approx(255 * math.sqrt(3))


def test_appearance_is_bilinear_between_pixels():
    a = np.zeros((1, 2, 3))
    a[0, 1] = (100, 0, 0)
    b = np.zeros((1, 2, 3))
    assert appearance_energy(a, b, TrajPoint(0.25, 0, 1), TrajPoint(0, 0, 2)) == pytest.approx(25.0)


def test_appearance_requires_consecutive_frames():
    a, b = _frames_with((0, 0, 0), (0, 0, 0))
    with pytest.raises(ContractError):
        appearance_energy(a, b, TrajPoint(1, 1, 1), TrajPoint(1, 1, 3))


@pytest.mark.parametrize("fwd,bwd,expected", [
    ((2.0, -1.0), (-2.0, 1.0), 0.0),
    ((1.0, 0.0), (1.0, 0.0), 1.0),
    ((3.0, 0.0), (-1.0, 0.0), 0.5),
    ((0.0, 0.0), (0.0, 0.0), 0.0),
])
def test_occlusion_examples(fwd, bwd, expected):
    assert occlusion_energy(fwd, bwd) == pytest.approx(expected)


vec = st.tuples(st.floats(-50, 50), st.floats(-50, 50))


@given(vec, vec, st.floats(0.01, 100))
def test_occlusion_symmetric_and_scale_invariant(f, b, s):
    e = occlusion_energy(f, b)
    assert e == pytest.approx(occlusion_energy(b, f), abs=1e-12)
    assert occlusion_energy((s * f[0], s * f[1]), (s * b[0], s * b[1])) == pytest.approx(e, abs=1e-9)
    assert 0.0 <= e <= 1.0 + 1e-12


def test_step_probability_examples():
    assert step_probability(0.0, 0.0) == 1.0
    assert step_probability(math.log(2) / 2, math.log(2) / 2) == pytest.approx(0.5)
    assert step_probability(4.0, 6.0) == pytest.approx(math.exp(-10))


# ---------------------------------------------------------------------------
# tracking one point


def test_track_static_point():
    video = constant_video(10, 12, 12)
    tr = track_point(TrajPoint(5, 5, 1), video, constant_flows(10, 12, 12))
    assert len(tr) == 10
    assert np.all(tr.xy == 5.0)


def test_track_straight_line_until_border():
    video = constant_video(15, 20, 6)
    tr = track_point(TrajPoint(1, 2, 1), video, constant_flows(15, 20, 6, fwd=(2.0, 0.0)))
    assert tr.xy[:, 0].tolist() == [1, 3, 5, 7, 9, 11, 13, 15, 17, 19]
    assert np.all(tr.xy[:, 1] == 2)


def test_track_ends_when_object_erased():
    # red square moving 1px/frame over black, removed at frame k
    T, W, H, k = 10, 30, 12, 6
    frames = np.zeros((T, H, W, 3))
    fwd, bwd = [], []
    for t in range(T):
        if t + 1 < k:
            frames[t, 3:9, 3 + t:9 + t] = (255, 0, 0)
    for t in range(T - 1):
        f = np.zeros((H, W, 2), np.float32)
        if t + 1 < k:
            f[3:9, 3 + t:9 + t] = (1, 0)
        fwd.append(f)
        b = np.zeros((H, W, 2), np.float32)
        if t + 2 < k:
            b[3:9, 4 + t:10 + t] = (-1, 0)
        bwd.append(b)
    video = VideoSequence(frames)
    tr = track_point(TrajPoint(5, 5, 1), video, flows_from_arrays(fwd, bwd))
    assert tr.t_end in (k - 1, k)


def test_track_start_out_of_bounds():
    video = constant_video(3, 4, 4)
    with pytest.raises(ContractError):
        track_point(TrajPoint(4.5, 0, 1), video, constant_flows(3, 4, 4))


# ---------------------------------------------------------------------------
# trajectory sets


def test_static_two_frames_yields_nothing():
    assert generate_trajectories(constant_video(2, 6, 6), constant_flows(2, 6, 6), seed_stride=1) == []


def test_static_twenty_frames_stride_one():
    trajs = generate_trajectories(constant_video(20, 10, 10), constant_flows(20, 10, 10), seed_stride=1)
    assert len(trajs) == 100
    assert all(len(tr) == 20 and tr.t0 == 1 for tr in trajs)
    assert [tr.id for tr in trajs] == list(range(100))
    # seed order is (y, x)
    assert trajs[13].xy[0].tolist() == [3.0, 1.0]


def test_empty_video_rejected():
    with pytest.raises(ContractError):
        generate_trajectories(None, [])


def _moving_scene(occluder=False, T=14):
    spec = SyntheticSpec(width=48, height=36, T=T, background_texture=15,
                         objects=(SyntheticObject(start=(6.0, 10.0), velocity=(1.5, 0.5), size=12,
                                                  color=(220, 60, 40), texture=20),),
                         occluder=Occluder(x=24, width=4, first=5, last=8) if occluder else None)
    return generate_synthetic(spec)


@pytest.mark.parametrize("stride", [1, 2, 3])
@pytest.mark.parametrize("occluder", [False, True])
def test_coverage_audit(stride, occluder):
    seq = _moving_scene(occluder)
    video, flows = seq.video, seq.flows
    every = generate_trajectories(video, flows, seed_stride=stride, min_length=1)
    ny, nx = (video.height - 1) // stride + 1, (video.width - 1) // stride + 1
    for t in range(1, video.T + 1):
        covered = np.zeros((ny, nx), bool)
        for tr in every:
            if tr.t0 <= t <= tr.t_end:
                x, y = tr.xy[t - tr.t0]
                cx = min(max(math.floor(x / stride + 0.5), 0), nx - 1)
                cy = min(max(math.floor(y / stride + 0.5), 0), ny - 1)
                covered[cy, cx] = True
        assert covered.all(), f"frame {t} has uncovered grid nodes"
    kept = generate_trajectories(video, flows, seed_stride=stride)
    long_tracks = [tr for tr in every if len(tr) >= 4]
    assert [(tr.t0, tr.xy.tobytes()) for tr in kept] == [(tr.t0, tr.xy.tobytes()) for tr in long_tracks]


@pytest.mark.parametrize("occluder", [False, True])
def test_returned_trajectories_respect_invariants(occluder):
    seq = _moving_scene(occluder)
    video, flows = seq.video, seq.flows
    trajs = generate_trajectories(video, flows, seed_stride=2)
    assert trajs
    for tr in trajs:
        assert len(tr) >= 4
        assert 1 <= tr.t0 and tr.t_end <= video.T
        assert np.all((tr.xy[:, 0] >= 0) & (tr.xy[:, 0] <= video.width - 1))
        assert np.all((tr.xy[:, 1] >= 0) & (tr.xy[:, 1] <= video.height - 1))
        # recompute the survival product directly from the energies
        p = 1.0
        pts = tr.points
        for a, b in zip(pts, pts[1:]):
            e_app = appearance_energy(video.frames[a.t - 1], video.frames[b.t - 1], a, b) * APP_SCALE
            fwd = bilinear(flows[a.t - 1].forward.vectors, np.array(a.x), np.array(a.y))
            bwd = bilinear(flows[b.t - 1].backward.vectors, np.array(b.x), np.array(b.y))
            p *= step_probability(e_app, occlusion_energy(tuple(fwd), tuple(bwd)))
            assert p >= 0.5
            assert b.x == pytest.approx(a.x + float(fwd[0]), abs=1e-12)


def test_exact_flow_constant_appearance_spans_all_frames():
    rng = np.random.default_rng(5)
    frame = rng.integers(0, 256, (12, 16, 3)).astype(np.float64)
    video = VideoSequence(np.repeat(frame[None], 9, axis=0))
    trajs = generate_trajectories(video, constant_flows(9, 16, 12), seed_stride=2)
    first = [tr for tr in trajs if tr.t0 == 1]
    assert len(first) == 8 * 6
    assert all(len(tr) == 9 for tr in first)


def test_trajectories_deterministic():
    seq = _moving_scene(True)
    a = generate_trajectories(seq.video, seq.flows)
    b = generate_trajectories(seq.video, seq.flows)
    assert a == b


def test_tracking_single_point_matches_batch():
    seq = _moving_scene()
    trajs = generate_trajectories(seq.video, seq.flows, seed_stride=3)
    for tr in trajs[::25]:
        x, y = tr.xy[0]
        single = track_point(TrajPoint(x, y, tr.t0), seq.video, seq.flows)
        assert single.t_end >= tr.t_end
        assert np.array_equal(single.xy[:len(tr)], tr.xy)


# ---------------------------------------------------------------------------
# features


def test_static_features():
    video = constant_video(6, 10, 10, (100, 100, 100))
    f = trajectory_features(Trajectory(0, 1, np.full((6, 2), 5.0)), video)
    assert f.location == (5.0, 5.0)
    assert f.color == (100.0, 100.0, 100.0)
    assert f.velocity == (0.0, 0.0)


@pytest.mark.parametrize("dt", [1, 2, 3, 5, 12])
def test_uniform_motion_velocity(dt):
    video = constant_video(12, 40, 10)
    xy = np.stack([1.0 + 2.0 * np.arange(8), np.full(8, 4.0)], axis=1)
    f = trajectory_features(Trajectory(0, 2, xy), video, dt=dt)
    assert f.velocity == pytest.approx((2.0, 0.0))


def test_velocity_direct_summation_l10():
    rng = np.random.default_rng(7)
    xy = rng.uniform(0, 9, (10, 2))
    video = constant_video(10, 10, 10)
    vx = sum((xy[n + 3, 0] - xy[n, 0]) / 3 for n in range(7)) / 7
    vy = sum((xy[n + 3, 1] - xy[n, 1]) / 3 for n in range(7)) / 7
    f = trajectory_features(Trajectory(0, 1, xy), video, dt=3)
    assert f.velocity == pytest.approx((vx, vy), abs=1e-12)


def test_velocity_fallback_when_short():
    video = constant_video(5, 10, 10)
    xy = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 3.0], [6.0, 3.0]])
    f = trajectory_features(Trajectory(0, 1, xy), video, dt=4)
    assert f.velocity == pytest.approx((2.0, 1.0))


def test_batch_features_match_single():
    seq = _moving_scene(True)
    trajs = generate_trajectories(seq.video, seq.flows, seed_stride=3)
    ft = compute_features(trajs, seq.video)
    for i in range(0, len(trajs), 17):
        f = trajectory_features(trajs[i], seq.video)
        assert ft.location[i] == pytest.approx(f.location, abs=1e-9)
        assert ft.color[i] == pytest.approx(f.color, abs=1e-9)
        assert ft.velocity[i] == pytest.approx(f.velocity, abs=1e-12)
        assert (ft.start[i], ft.end[i]) == (trajs[i].t0, trajs[i].t_end)
    assert np.all((ft.color >= 0) & (ft.color <= 255))


# ---------------------------------------------------------------------------
# serialisation


def test_trajectory_file_format(tmp_path):
    trajs = [Trajectory(0, 2, [[1.23456, 2.0], [3.5, 4.0004]]), Trajectory(7, 1, [[0.0, 0.0]])]
    path = tmp_path / "t.txt"
    save_trajectories(path, trajs)
    assert path.read_text() == "0 2 2\n1.235 2.000\n3.500 4.000\n7 1 1\n0.000 0.000\n"
    back = load_trajectories(path)
    assert [t.id for t in back] == [0, 7]
    assert back[0].xy.tolist() == [[1.235, 2.0], [3.5, 4.0]]


def test_trajectory_file_truncated(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("0 3 1\n1.000 1.000\n")
    with pytest.raises(ValueError):
        load_trajectories(path)
