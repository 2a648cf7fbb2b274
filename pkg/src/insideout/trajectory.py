"""Synthetic pose streams for a C-arm on a circular source trajectory.

The C-arm frame has its origin at the X-ray source and its +z axis along
the principal ray, which passes through the isocenter (the volume origin).
A tracker rigidly mounted on the gantry is simulated by pushing each C-arm
pose through a ground-truth mount ``tracker_T_carm`` and a fixed room
registration ``world_T_volume``; SLAM-like error is injected as Gaussian
perturbations in the tracker frame plus an optional linear map drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Literal, Sequence

import numpy as np

from .geometry import (
    RigidTransform,
    Rotation,
    compose,
    compose_all,
    inverse,
    orthonormal_complement,
)

PairMode = Literal["all_pairs", "consecutive"]
PAIR_MODES: tuple[str, ...] = ("all_pairs", "consecutive")

# Configuration defaults for a mobile CBCT C-arm. Plausible values for the
# device class, not measured ones.
DEFAULT_NUM_POSES = 98
DEFAULT_SWEEP_DEG = 190.0
DEFAULT_SOURCE_TO_ISOCENTER_MM = 600.0
DEFAULT_SOURCE_TO_DETECTOR_MM = 1000.0


def _unit(v: Sequence[float], name: str) -> tuple[float, float, float]:
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (3,) or not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be a finite 3-vector")
    n = float(np.linalg.norm(a))
    if n < 1e-12:
        raise ValueError(f"{name} must be non-zero")
    a = a / n
    return (float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class OrbitSpec:
    """Circular source trajectory around ``orbit_axis`` through the isocenter.

    ``start_angle`` defaults to ``-sweep_angle / 2`` so the sweep is centered on
    the neutral pose.
    """

    num_poses: int = DEFAULT_NUM_POSES
    sweep_angle: float = DEFAULT_SWEEP_DEG
    source_to_isocenter: float = DEFAULT_SOURCE_TO_ISOCENTER_MM
    orbit_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    start_angle: float | None = None

    def __post_init__(self) -> None:
        if isinstance(self.num_poses, bool) or int(self.num_poses) != self.num_poses:
            raise ValueError("num_poses must be an integer")
        if self.num_poses < 2:
            raise ValueError(f"num_poses must be >= 2, got {self.num_poses}")
        if not (0.0 < self.sweep_angle <= 360.0):
            raise ValueError(f"sweep_angle must be in (0, 360], got {self.sweep_angle}")
        if not (self.source_to_isocenter > 0.0):
            raise ValueError("source_to_isocenter must be > 0")
        object.__setattr__(self, "num_poses", int(self.num_poses))
        object.__setattr__(self, "orbit_axis", _unit(self.orbit_axis, "orbit_axis"))
        if self.start_angle is None:
            object.__setattr__(self, "start_angle", -0.5 * float(self.sweep_angle))

    def angles(self) -> np.ndarray:
        """Gantry angles in degrees, evenly spaced over the sweep."""
        full_circle = self.sweep_angle == 360.0
        return self.start_angle + np.linspace(
            0.0, self.sweep_angle, self.num_poses, endpoint=not full_circle
        )


@dataclass(frozen=True)
class NoiseSpec:
    """Per-pose tracker error.

    rotation_sigma is in degrees (isotropic axis-angle), translation_sigma in
    mm (isotropic), drift_rate in mm per pose index along one random
    world-frame direction drawn from the seed.
    """

    rotation_sigma: float = 0.0
    translation_sigma: float = 0.0
    drift_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rotation_sigma < 0 or self.translation_sigma < 0:
            raise ValueError("noise sigmas must be >= 0")
        if self.drift_rate < 0:
            raise ValueError("drift_rate must be >= 0")
        if isinstance(self.seed, bool) or int(self.seed) != self.seed:
            raise ValueError("seed must be an integer")
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def is_zero(self) -> bool:
        return self.rotation_sigma == 0 and self.translation_sigma == 0 and self.drift_rate == 0


@dataclass(frozen=True)
class PoseSample:
    index: int
    world_T_tracker: RigidTransform
    volume_T_carm: RigidTransform


@dataclass(frozen=True)
class PoseStream:
    """Time-ordered (tracker-in-world, C-arm-in-volume) pose pairs."""

    samples: tuple[PoseSample, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        samples = tuple(self.samples)
        for prev, cur in zip(samples, samples[1:]):
            if cur.index <= prev.index:
                raise ValueError(
                    f"sample indices must be strictly increasing ({prev.index} then {cur.index})"
                )
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[PoseSample]:
        return iter(self.samples)

    def __getitem__(self, i: int) -> PoseSample:
        return self.samples[i]


@dataclass(frozen=True)
class RelativePosePair:
    """Relative tracker motion ``a`` and C-arm motion ``b`` between two samples."""

    a: RigidTransform
    b: RigidTransform
    source_indices: tuple[int, int]


def orbit_reference_frame(orbit_axis: Sequence[float]) -> Rotation:
    """C-arm orientation at gantry angle zero.

    Columns: x = axis cross ray, y = orbit axis, z = neutral principal ray.
    """
    k = np.array(_unit(orbit_axis, "orbit_axis"))
    ray = orthonormal_complement(k)[0]
    return Rotation.from_matrix(np.column_stack([np.cross(k, ray), k, ray]))


def carm_pose(orbit_axis: Sequence[float], angle_deg: float, source_to_isocenter: float) -> RigidTransform:
    """``volume_T_carm`` for the source at ``angle_deg`` on the orbit."""
    rot = Rotation.from_axis_angle(orbit_axis, math.radians(angle_deg)) * orbit_reference_frame(
        orbit_axis
    )
    ray = rot.apply(np.array([0.0, 0.0, 1.0]))
    return RigidTransform(rot, -source_to_isocenter * ray)


def generate_orbit(spec: OrbitSpec) -> list[RigidTransform]:
    """C-arm poses (``volume_T_carm``) along the circular source trajectory."""
    if not isinstance(spec, OrbitSpec):
        raise TypeError("spec must be an OrbitSpec")
    return [carm_pose(spec.orbit_axis, a, spec.source_to_isocenter) for a in spec.angles()]


def default_ground_truth_mount(
    source_to_detector: float = DEFAULT_SOURCE_TO_DETECTOR_MM,
    lateral_offset: float = 80.0,
    axial_offset: float = 150.0,
) -> RigidTransform:
    """Ground-truth ``tracker_T_carm`` for a tracker on the image intensifier.

    The tracker sits near the detector, offset sideways and along the orbit
    axis, with its viewing axis (tracker +z) parallel to the orbit axis
    (C-arm +y). Tracker x is C-arm x, tracker y is C-arm -z.
    """
    carm_R_tracker = np.column_stack([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    carm_T_tracker = RigidTransform(
        Rotation.from_matrix(carm_R_tracker), (lateral_offset, axial_offset, source_to_detector)
    )
    return inverse(carm_T_tracker)


def default_world_T_volume() -> RigidTransform:
    """Room placement of the CBCT volume used by synthetic runs."""
    return RigidTransform(
        Rotation.from_rotvec(np.radians([4.0, -3.0, 30.0])), (1200.0, -400.0, 950.0)
    )


def _drift_direction(seed: int) -> np.ndarray:
    v = np.random.default_rng([seed, 0]).standard_normal(3)
    return v / np.linalg.norm(v)


def _perturb(
    pose: RigidTransform,
    index: int,
    noise: NoiseSpec,
    rng: np.random.Generator,
    drift_dir: np.ndarray,
) -> RigidTransform:
    # Draws are unconditional so streams differing only in sigma share samples.
    rot_draw = rng.standard_normal(3)
    trans_draw = rng.standard_normal(3)
    delta = RigidTransform(
        Rotation.from_rotvec(math.radians(noise.rotation_sigma) * rot_draw),
        noise.translation_sigma * trans_draw,
    )
    out = compose(pose, delta)
    if noise.drift_rate:
        out = compose(RigidTransform.from_translation(noise.drift_rate * index * drift_dir), out)
    return out


def simulate_tracker(
    orbit: Sequence[RigidTransform],
    ground_truth_X: RigidTransform,
    world_T_volume: RigidTransform,
    noise: NoiseSpec | None = None,
) -> PoseStream:
    """Tracker poses seen through the rigid mount, with optional noise.

    ``world_T_tracker = world_T_volume . volume_T_carm . inverse(X)`` where X
    is ``tracker_T_carm``; noise is then applied in the tracker frame.
    """
    noise = noise or NoiseSpec()
    x_inv = inverse(ground_truth_X)
    rng = np.random.default_rng(noise.seed)
    drift_dir = _drift_direction(noise.seed)
    samples = []
    for i, vc in enumerate(orbit):
        wt = compose_all(world_T_volume, vc, x_inv)
        samples.append(PoseSample(i, _perturb(wt, i, noise, rng, drift_dir), vc))
    return PoseStream(tuple(samples))


def relative_pairs(stream: PoseStream, mode: PairMode = "all_pairs") -> list[RelativePosePair]:
    """Relative motions ``A = inv(W_T_T(i)) W_T_T(j)``, ``B = inv(V_T_C(i)) V_T_C(j)``.

    ``all_pairs`` yields every unordered pair i < j, ``consecutive`` only
    neighbours.
    """
    if mode not in PAIR_MODES:
        raise ValueError(f"unknown pair mode {mode!r}; expected one of {PAIR_MODES}")
    samples = stream.samples
    n = len(samples)
    if n < 2:
        raise ValueError(f"need at least 2 samples to form relative poses, got {n}")
    inv_wt = [inverse(s.world_T_tracker) for s in samples]
    inv_vc = [inverse(s.volume_T_carm) for s in samples]
    if mode == "consecutive":
        index_pairs = [(i, i + 1) for i in range(n - 1)]
    else:
        index_pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    return [
        RelativePosePair(
            a=compose(inv_wt[i], samples[j].world_T_tracker),
            b=compose(inv_vc[i], samples[j].volume_T_carm),
            source_indices=(samples[i].index, samples[j].index),
        )
        for i, j in index_pairs
    ]


def add_out_of_plane_poses(
    stream: PoseStream,
    tilt_angles: Sequence[float],
    ground_truth_X: RigidTransform,
    world_T_volume: RigidTransform,
    *,
    orbit_axis: Sequence[float] = (0.0, 0.0, 1.0),
    rotation_angle: float = 30.0,
    base: int = 0,
    noise: NoiseSpec | None = None,
) -> PoseStream:
    """Append poses reached by rotating the gantry about tilted axes.

    Each new C-arm pose is ``stream[base]`` rotated by ``rotation_angle``
    degrees about the isocenter around an axis tilted ``tilt`` degrees away
    from the orbit axis, so its relative motion to the base pose has a
    rotation axis at exactly that tilt. Successive tilts lean toward
    different in-plane directions. Tracker poses follow the same model as
    ``simulate_tracker``; noise uses its own seeded stream.
    """
    tilts = list(tilt_angles)
    if not tilts:
        return stream
    if not stream.samples:
        raise ValueError("cannot extend an empty stream")
    noise = noise or NoiseSpec()
    k = np.array(_unit(orbit_axis, "orbit_axis"))
    u, v = orthonormal_complement(k)
    leans = [u, v, -u, -v]
    base_vc = stream.samples[base].volume_T_carm
    x_inv = inverse(ground_truth_X)
    rng = np.random.default_rng([noise.seed, 1])
    drift_dir = _drift_direction(noise.seed)
    next_index = stream.samples[-1].index + 1
    samples = list(stream.samples)
    for m, tilt in enumerate(tilts):
        tau = math.radians(tilt)
        axis = math.cos(tau) * k + math.sin(tau) * leans[m % 4]
        swing = RigidTransform(Rotation.from_axis_angle(axis, math.radians(rotation_angle)))
        vc = compose(swing, base_vc)
        wt = compose_all(world_T_volume, vc, x_inv)
        idx = next_index + m
        samples.append(PoseSample(idx, _perturb(wt, idx, noise, rng, drift_dir), vc))
    return PoseStream(tuple(samples))
