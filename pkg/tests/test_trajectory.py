import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _support import random_stream, rotation_axis
from insideout.geometry import RigidTransform, compose, inverse, transform_distance
from insideout.trajectory import (
    NoiseSpec,
    OrbitSpec,
    PoseSample,
    PoseStream,
    add_out_of_plane_poses,
    default_ground_truth_mount,
    default_world_T_volume,
    generate_orbit,
    relative_pairs,
    simulate_tracker,
)


def assert_ax_xb(pairs, x, rot_tol=1e-10, trans_tol=1e-10):
    for p in pairs:
        d_rot, d_trans = transform_distance(compose(p.a, x), compose(x, p.b))
        assert d_rot < rot_tol and d_trans < trans_tol


# -- orbit --------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(num_poses=1),
        dict(sweep_angle=0.0),
        dict(sweep_angle=361.0),
        dict(source_to_isocenter=0.0),
        dict(orbit_axis=(0.0, 0.0, 0.0)),
    ],
)
def test_invalid_orbit_rejected(kwargs):
    with pytest.raises(ValueError):
        OrbitSpec(**kwargs)


def test_default_orbit_has_98_poses():
    assert len(generate_orbit(OrbitSpec())) == 98


def test_half_circle_sources_are_antipodal():
    a, b = generate_orbit(OrbitSpec(num_poses=2, sweep_angle=180.0, orbit_axis=(0, 0, 1)))
    # Source sits at the C-arm origin, i.e. at the pose translation in the volume frame.
    assert np.allclose(a.t, -b.t, atol=1e-9)
    assert abs(np.linalg.norm(a.t) - 600.0) < 1e-9


def test_principal_ray_passes_isocenter():
    for pose in generate_orbit(OrbitSpec(num_poses=12)):
        ray = pose.rotation.apply((0.0, 0.0, 1.0))
        # Distance from the volume origin to the ray.
        assert np.linalg.norm(np.cross(-pose.t, ray)) < 1e-9
        assert np.dot(-pose.t, ray) > 0


@settings(max_examples=20, deadline=None)
@given(
    st.integers(2, 30),
    st.floats(1.0, 360.0),
    st.tuples(*(st.floats(-1, 1) for _ in range(3))).filter(lambda v: np.linalg.norm(v) > 0.1),
)
def test_relative_rotations_share_orbit_axis(n, sweep, axis):
    spec = OrbitSpec(num_poses=n, sweep_angle=sweep, orbit_axis=axis)
    k = np.asarray(spec.orbit_axis)
    poses = generate_orbit(spec)
    for i in range(n):
        for j in range(i + 1, n):
            rel = compose(poses[j], inverse(poses[i])).rotation  # expressed in the volume frame
            if rel.angle() < 1e-6:
                continue
            assert abs(abs(rotation_axis(rel) @ k) - 1.0) < 1e-9


def test_full_circle_does_not_repeat_first_pose():
    poses = generate_orbit(OrbitSpec(num_poses=4, sweep_angle=360.0))
    assert transform_distance(poses[0], poses[-1])[0] > 1.0


# -- tracker simulation ------------------------------------------------------------------


def test_identity_mount_and_registration():
    orbit = generate_orbit(OrbitSpec(num_poses=5))
    stream = simulate_tracker(orbit, RigidTransform.identity(), RigidTransform.identity())
    for s, vc in zip(stream, orbit):
        assert s.world_T_tracker == vc


def test_zero_noise_satisfies_ax_xb():
    rng = np.random.default_rng(3)
    stream, x, _ = random_stream(rng, n=12)
    assert_ax_xb(relative_pairs(stream), x)
    orbit_stream = simulate_tracker(
        generate_orbit(OrbitSpec()), default_ground_truth_mount(), default_world_T_volume()
    )
    assert_ax_xb(relative_pairs(orbit_stream), default_ground_truth_mount(), trans_tol=1e-9)


def test_fixed_seed_is_bit_identical():
    orbit = generate_orbit(OrbitSpec(num_poses=20))
    noise = NoiseSpec(0.5, 1.0, 0.1, seed=11)
    a = simulate_tracker(orbit, default_ground_truth_mount(), default_world_T_volume(), noise)
    b = simulate_tracker(orbit, default_ground_truth_mount(), default_world_T_volume(), noise)
    assert a == b
    c = simulate_tracker(
        orbit, default_ground_truth_mount(), default_world_T_volume(), NoiseSpec(0.5, 1.0, 0.1, seed=12)
    )
    assert a != c


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        NoiseSpec(rotation_sigma=-1.0)
    with pytest.raises(ValueError):
        NoiseSpec(translation_sigma=-0.1)


def test_translation_noise_scale():
    sigma = 2.0
    n = 12_000
    orbit = [RigidTransform.identity()] * n
    stream = simulate_tracker(orbit, RigidTransform.identity(), RigidTransform.identity(), NoiseSpec(0.0, sigma, 0.0, 5))
    offsets = np.array([s.world_T_tracker.t for s in stream])
    assert all(s.world_T_tracker.rotation.angle() == 0.0 for s in stream)
    assert abs(offsets.std(axis=0).mean() - sigma) / sigma < 0.05


def test_rotation_noise_scale():
    sigma = 0.5
    orbit = [RigidTransform.identity()] * 5000
    stream = simulate_tracker(orbit, RigidTransform.identity(), RigidTransform.identity(), NoiseSpec(sigma, 0.0, 0.0, 6))
    rotvecs = np.degrees([s.world_T_tracker.rotation.as_rotvec() for s in stream])
    assert abs(rotvecs.std(axis=0).mean() - sigma) / sigma < 0.05
    assert np.allclose([s.world_T_tracker.t for s in stream], 0.0)


def test_drift_grows_linearly():
    orbit = [RigidTransform.identity()] * 50
    stream = simulate_tracker(orbit, RigidTransform.identity(), RigidTransform.identity(), NoiseSpec(0.0, 0.0, 0.2, 1))
    norms = [np.linalg.norm(s.world_T_tracker.t) for s in stream]
    assert np.allclose(norms, 0.2 * np.arange(50), atol=1e-12)


# -- streams and pairs -------------------------------------------------------------------


def test_stream_indices_strictly_increasing():
    t = RigidTransform.identity()
    with pytest.raises(ValueError):
        PoseStream((PoseSample(1, t, t), PoseSample(1, t, t)))
    with pytest.raises(ValueError):
        PoseStream((PoseSample(2, t, t), PoseSample(1, t, t)))


@pytest.mark.parametrize("n", [2, 3, 17, 98, 200])
def test_pair_counts(n):
    t = RigidTransform.identity()
    stream = PoseStream(tuple(PoseSample(i, t, t) for i in range(n)))
    assert len(relative_pairs(stream, "all_pairs")) == n * (n - 1) // 2
    assert len(relative_pairs(stream, "consecutive")) == n - 1


def test_pair_count_property_all_n():
    t = RigidTransform.identity()
    for n in range(2, 201):
        stream = PoseStream(tuple(PoseSample(i, t, t) for i in range(n)))
        assert len(relative_pairs(stream)) == n * (n - 1) // 2


def test_98_poses_give_4753_pairs():
    stream = simulate_tracker(generate_orbit(OrbitSpec()), default_ground_truth_mount(), default_world_T_volume())
    assert len(relative_pairs(stream)) == 4753


def test_short_stream_and_bad_mode_rejected():
    t = RigidTransform.identity()
    with pytest.raises(ValueError):
        relative_pairs(PoseStream((PoseSample(0, t, t),)))
    with pytest.raises(ValueError):
        relative_pairs(PoseStream((PoseSample(0, t, t), PoseSample(1, t, t))), "sometimes")


def test_pairs_chain():
    rng = np.random.default_rng(8)
    stream, _, _ = random_stream(rng, n=6)
    pairs = {p.source_indices: p for p in relative_pairs(stream)}
    for i in range(4):
        joined_a = compose(pairs[(i, i + 1)].a, pairs[(i + 1, i + 2)].a)
        joined_b = compose(pairs[(i, i + 1)].b, pairs[(i + 1, i + 2)].b)
        for got, want in ((joined_a, pairs[(i, i + 2)].a), (joined_b, pairs[(i, i + 2)].b)):
            d_rot, d_trans = transform_distance(got, want)
            assert d_rot < 1e-10 and d_trans < 1e-10


def test_pair_definition():
    rng = np.random.default_rng(9)
    stream, _, _ = random_stream(rng, n=3)
    (p,) = [q for q in relative_pairs(stream) if q.source_indices == (0, 2)]
    a = compose(inverse(stream[0].world_T_tracker), stream[2].world_T_tracker)
    b = compose(inverse(stream[0].volume_T_carm), stream[2].volume_T_carm)
    for got, want in ((p.a, a), (p.b, b)):
        d_rot, d_trans = transform_distance(got, want)
        assert d_rot < 1e-14 and d_trans < 1e-12


# -- out-of-plane poses ----------------------------------------------------------------


def _orbit_stream(n=20):
    return simulate_tracker(
        generate_orbit(OrbitSpec(num_poses=n)), default_ground_truth_mount(), default_world_T_volume()
    )


def test_no_tilts_leaves_stream_unchanged():
    stream = _orbit_stream()
    out = add_out_of_plane_poses(stream, [], default_ground_truth_mount(), default_world_T_volume())
    assert out == stream


def test_tilted_pose_adds_independent_axis():
    stream = _orbit_stream()
    out = add_out_of_plane_poses(stream, [90.0], default_ground_truth_mount(), default_world_T_volume())
    assert len(out) == len(stream) + 1
    axes = [rotation_axis(p.b.rotation) for p in relative_pairs(out) if p.b.rotation.angle() > 1e-6]
    assert np.linalg.matrix_rank(np.array(axes), tol=1e-6) >= 2
    assert out[len(out) - 1].index == stream[len(stream) - 1].index + 1


def test_tilted_poses_keep_ax_xb():
    stream = _orbit_stream()
    x = default_ground_truth_mount()
    out = add_out_of_plane_poses(stream, [30.0, 45.0, 60.0], x, default_world_T_volume())
    assert_ax_xb(relative_pairs(out), x, trans_tol=1e-9)


def test_tilt_axis_angle():
    stream = _orbit_stream(4)
    out = add_out_of_plane_poses(stream, [30.0], default_ground_truth_mount(), default_world_T_volume(), rotation_angle=40.0)
    rel = compose(out[4].volume_T_carm, inverse(out[0].volume_T_carm)).rotation
    assert abs(math.degrees(rel.angle()) - 40.0) < 1e-9
    tilt = math.degrees(math.acos(abs(rotation_axis(rel) @ np.array([0.0, 0.0, 1.0]))))
    assert abs(tilt - 30.0) < 1e-9
