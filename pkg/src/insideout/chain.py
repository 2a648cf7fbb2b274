"""Frame chain linking surgeon, room, C-arm and image volume.

The volume is registered to the room once, at calibration time t0::

    world_T_volume = world_T_tracker(t0) . tracker_T_carm . inverse(volume_T_carm(t0))

and is then held fixed (static patient). Later surgeon and tracker poses
give the live overlays::

    surgeon_T_volume(t) = inverse(world_T_surgeon(t)) . world_T_volume
    surgeon_T_carm(t)   = inverse(world_T_surgeon(t)) . world_T_tracker(t) . tracker_T_carm
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Line3, RigidTransform, compose, compose_all, inverse, transform_distance

FRAMES = ("world", "volume", "surgeon", "carm")
PRINCIPAL_AXIS = (0.0, 0.0, 1.0)

# Consistency check for a supplied world_T_volume; translation scales with magnitude.
_STATE_ROT_TOL = 1e-12
_STATE_TRANS_RTOL = 1e-12


def _close_loop(
    world_T_tracker_at_t0: RigidTransform,
    tracker_T_carm: RigidTransform,
    volume_T_carm_at_t0: RigidTransform,
) -> RigidTransform:
    return compose_all(world_T_tracker_at_t0, tracker_T_carm, inverse(volume_T_carm_at_t0))


@dataclass(frozen=True)
class CalibrationState:
    """Room registration of the volume, fixed after :func:`calibrate`.

    ``world_T_volume`` may be omitted and is then derived; when supplied it
    must agree with the closed loop.
    """

    tracker_T_carm: RigidTransform
    world_T_tracker_at_t0: RigidTransform
    volume_T_carm_at_t0: RigidTransform
    world_T_volume: RigidTransform | None = None

    def __post_init__(self) -> None:
        derived = _close_loop(
            self.world_T_tracker_at_t0, self.tracker_T_carm, self.volume_T_carm_at_t0
        )
        if self.world_T_volume is None:
            object.__setattr__(self, "world_T_volume", derived)
            return
        d_rot, d_trans = transform_distance(derived, self.world_T_volume)
        scale = max(1.0, float(np.linalg.norm(derived.t)))
        if d_rot > _STATE_ROT_TOL or d_trans > _STATE_TRANS_RTOL * scale:
            raise ValueError(
                "world_T_volume is inconsistent with the calibration chain "
                f"(rotation off by {d_rot:.3g} rad, translation by {d_trans:.3g} mm)"
            )


@dataclass(frozen=True)
class FramePoses:
    """SLAM poses of the surgeon's headset and the C-arm tracker at time t."""

    world_T_surgeon: RigidTransform
    world_T_tracker: RigidTransform


def calibrate(
    world_T_tracker_t0: RigidTransform,
    tracker_T_carm: RigidTransform,
    volume_T_carm_t0: RigidTransform,
) -> CalibrationState:
    return CalibrationState(tracker_T_carm, world_T_tracker_t0, volume_T_carm_t0)


def surgeon_T_volume(state: CalibrationState, poses: FramePoses) -> RigidTransform:
    return compose(inverse(poses.world_T_surgeon), state.world_T_volume)


def surgeon_T_carm(state: CalibrationState, poses: FramePoses) -> RigidTransform:
    return compose_all(inverse(poses.world_T_surgeon), poses.world_T_tracker, state.tracker_T_carm)


def world_T_carm(state: CalibrationState, poses: FramePoses) -> RigidTransform:
    return compose(poses.world_T_tracker, state.tracker_T_carm)


def principal_ray(
    state: CalibrationState,
    poses: FramePoses,
    expressed_in: str = "world",
    axis: tuple[float, float, float] = PRINCIPAL_AXIS,
) -> Line3:
    """C-arm principal ray: origin at the source, along ``axis`` of the C-arm frame.

    ``expressed_in`` is one of ``world``, ``volume``, ``surgeon`` or ``carm``.
    """
    if expressed_in == "carm":
        frame_T_carm = RigidTransform.identity()
    elif expressed_in == "world":
        frame_T_carm = world_T_carm(state, poses)
    elif expressed_in == "volume":
        frame_T_carm = compose(inverse(state.world_T_volume), world_T_carm(state, poses))
    elif expressed_in == "surgeon":
        frame_T_carm = surgeon_T_carm(state, poses)
    else:
        raise ValueError(f"unknown frame {expressed_in!r}; expected one of {FRAMES}")
    return Line3((0.0, 0.0, 0.0), axis).transformed(frame_T_carm)
