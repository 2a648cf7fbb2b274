"""In-silico versions of the two end-to-end checks.

* Point-to-line target registration error: each user aims a gaze line at
  each phantom sphere; TRE is the mean sphere-to-line distance over the full
  users x targets grid, with spheres mapped to the room through the
  calibration under test.
* Bull's-eye view: the C-arm principal ray has to run down a thin tube
  embedded in the phantom. A scripted gantry policy replaces the human.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .chain import CalibrationState, FramePoses, principal_ray
from .geometry import (
    Line3,
    RigidTransform,
    Rotation,
    compose,
    compose_all,
    inverse,
    orthonormal_complement,
    point_to_line_distance,
)
from .trajectory import DEFAULT_SOURCE_TO_ISOCENTER_MM, orbit_reference_frame

DEFAULT_TUBE_RADIUS_MM = 5.0
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class ObservationGridError(ValueError):
    """Gaze observations do not form a complete users x targets grid."""


class BullseyeUnreachableError(Exception):
    """No gantry setting within range puts the principal ray down the tube."""

    def __init__(self, message: str, best: "BullseyeSolution | None" = None):
        super().__init__(message)
        self.best = best


# -- data types ----------------------------------------------------------------


@dataclass(frozen=True)
class Tube:
    axis_start: tuple[float, float, float]
    axis_end: tuple[float, float, float]
    radius: float = DEFAULT_TUBE_RADIUS_MM

    def __post_init__(self) -> None:
        start = tuple(float(c) for c in np.asarray(self.axis_start, dtype=float).reshape(3))
        end = tuple(float(c) for c in np.asarray(self.axis_end, dtype=float).reshape(3))
        if not (self.radius > 0):
            raise ValueError(f"tube radius must be > 0, got {self.radius}")
        if start == end:
            raise ValueError("tube axis_start and axis_end must differ")
        object.__setattr__(self, "axis_start", start)
        object.__setattr__(self, "axis_end", end)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.subtract(self.axis_end, self.axis_start)))

    @property
    def direction(self) -> np.ndarray:
        v = np.subtract(self.axis_end, self.axis_start)
        return v / np.linalg.norm(v)

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.array(self.axis_start) + np.array(self.axis_end))


@dataclass(frozen=True)
class Phantom:
    """Target spheres and an embedded tube, all in volume coordinates (mm)."""

    spheres: tuple[tuple[float, float, float], ...]
    tube: Tube

    def __post_init__(self) -> None:
        pts = np.asarray(self.spheres, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3 or not np.all(np.isfinite(pts)):
            raise ValueError("spheres must be an (N, 3) array of finite points")
        object.__setattr__(self, "spheres", tuple(tuple(float(c) for c in p) for p in pts))

    @property
    def sphere_array(self) -> np.ndarray:
        return np.array(self.spheres, dtype=float).reshape(-1, 3)


@dataclass(frozen=True)
class GazeObservation:
    user_id: int
    target_index: int
    line: Line3  # world frame


@dataclass(frozen=True)
class TREResult:
    overall: float
    per_target: tuple[float, ...]
    per_user: tuple[float, ...]
    M: int
    N: int
    distances: np.ndarray  # (M, N), rows follow user_ids
    user_ids: tuple[int, ...]


@dataclass(frozen=True)
class BullseyeCheck:
    hit: bool
    min_clearance: float  # mm, negative when the ray leaves the tube
    angular_misalignment: float  # degrees
    in_front_of_source: bool


@dataclass(frozen=True)
class GantryParameterization:
    """Mobile C-arm with orbital and angular rotation plus a lateral shift.

    ``pose(orbital, angulation, shift)`` rotates the neutral C-arm by
    ``orbital`` degrees about the orbit axis, then tilts the whole C by
    ``angulation`` degrees about the horizontal axis (orbit axis x neutral
    ray), both through the isocenter, and finally translates by ``shift``.
    """

    orbit_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    source_to_isocenter: float = DEFAULT_SOURCE_TO_ISOCENTER_MM
    orbital_range: tuple[float, float] = (-95.0, 95.0)
    angulation_range: tuple[float, float] = (-30.0, 30.0)
    max_shift: float = 150.0
    grid_step: float = 5.0

    def __post_init__(self) -> None:
        for name in ("orbital_range", "angulation_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} must be (low, high) with low <= high")
        if self.max_shift < 0 or self.grid_step <= 0:
            raise ValueError("max_shift must be >= 0 and grid_step > 0")

    @property
    def neutral(self) -> Rotation:
        return orbit_reference_frame(self.orbit_axis)

    @property
    def angulation_axis(self) -> np.ndarray:
        return self.neutral.apply(np.array([1.0, 0.0, 0.0]))

    def rotation(self, orbital: float, angulation: float) -> Rotation:
        return (
            Rotation.from_axis_angle(self.angulation_axis, math.radians(angulation))
            * Rotation.from_axis_angle(self.orbit_axis, math.radians(orbital))
            * self.neutral
        )

    def ray_direction(self, orbital: float, angulation: float) -> np.ndarray:
        return self.rotation(orbital, angulation).apply(np.array([0.0, 0.0, 1.0]))

    def pose(
        self, orbital: float, angulation: float, shift: Sequence[float] = (0.0, 0.0, 0.0)
    ) -> RigidTransform:
        """``volume_T_carm`` for the given gantry setting."""
        rot = self.rotation(orbital, angulation)
        ray = rot.apply(np.array([0.0, 0.0, 1.0]))
        return RigidTransform(rot, -self.source_to_isocenter * ray + np.asarray(shift, dtype=float))


@dataclass(frozen=True)
class BullseyeSolution:
    orbital: float
    angulation: float
    shift: tuple[float, float, float]
    ray: Line3  # volume frame
    check: BullseyeCheck


# -- target registration error -------------------------------------------------


def compute_tre(
    phantom: Phantom,
    state: CalibrationState,
    observations: Sequence[GazeObservation],
    expected_grid: tuple[int, int] | None = None,
) -> TREResult:
    """Mean point-to-line distance over the complete users x targets grid.

    Spheres are mapped to the room with ``state.world_T_volume``. Every user
    must aim at every sphere exactly once; ``expected_grid=(M, N)``
    additionally pins the grid size.
    """
    spheres = phantom.sphere_array
    n_targets = len(spheres)
    if n_targets == 0:
        raise ValueError("phantom has no spheres")
    cells: dict[tuple[int, int], Line3] = {}
    for obs in observations:
        if not (0 <= obs.target_index < n_targets):
            raise ObservationGridError(
                f"target index {obs.target_index} out of range for {n_targets} spheres"
            )
        key = (int(obs.user_id), int(obs.target_index))
        if key in cells:
            raise ObservationGridError(f"duplicate observation for user {key[0]}, target {key[1]}")
        cells[key] = obs.line
    user_ids = tuple(sorted({u for u, _ in cells}))
    if not user_ids:
        raise ObservationGridError("no observations")
    missing = [(u, i) for u in user_ids for i in range(n_targets) if (u, i) not in cells]
    if missing:
        raise ObservationGridError(
            f"incomplete observation grid: {len(missing)} missing cells, first {missing[0]}"
        )
    m = len(user_ids)
    if expected_grid is not None and (m, n_targets) != tuple(expected_grid):
        raise ObservationGridError(
            f"observation grid is {m}x{n_targets}, expected {expected_grid[0]}x{expected_grid[1]}"
        )

    world_pts = state.world_T_volume.apply(spheres)
    dist = np.empty((m, n_targets))
    for j, u in enumerate(user_ids):
        for i in range(n_targets):
            dist[j, i] = point_to_line_distance(world_pts[i], cells[(u, i)])
    return TREResult(
        overall=float(np.mean(dist)),
        per_target=tuple(float(v) for v in dist.mean(axis=0)),
        per_user=tuple(float(v) for v in dist.mean(axis=1)),
        M=m,
        N=n_targets,
        distances=dist,
        user_ids=user_ids,
    )


def simulate_gaze(
    phantom: Phantom,
    state: CalibrationState,
    user_positions: Sequence[Sequence[float]],
    aim_error_sigma: float = 0.0,
    seed: int = 0,
) -> list[GazeObservation]:
    """Gaze lines from each user toward each true sphere position.

    ``state`` is the ground-truth registration (where the spheres really are
    in the room). Aiming error shifts each line sideways by a 2-D Gaussian of
    standard deviation ``aim_error_sigma`` perpendicular to the gaze; the
    along-gaze component is not observable and is not simulated.
    """
    if aim_error_sigma < 0:
        raise ValueError("aim_error_sigma must be >= 0")
    users = np.asarray(user_positions, dtype=float).reshape(-1, 3)
    world_pts = state.world_T_volume.apply(phantom.sphere_array)
    rng = np.random.default_rng(seed)
    out = []
    for j, eye in enumerate(users):
        for i, target in enumerate(world_pts):
            gaze = target - eye
            norm = np.linalg.norm(gaze)
            if norm == 0:
                raise ValueError(f"user {j} stands on target {i}")
            gaze = gaze / norm
            e1, e2 = orthonormal_complement(gaze)
            draw = rng.standard_normal(2)
            offset = aim_error_sigma * (draw[0] * e1 + draw[1] * e2)
            out.append(GazeObservation(j, i, Line3(eye + offset, gaze)))
    return out


# -- bull's-eye ----------------------------------------------------------------


def check_bullseye(phantom: Phantom, ray: Line3) -> BullseyeCheck:
    """Whether ``ray`` (volume frame) stays inside the tube over its full length.

    The distance from the ray to the tube axis, measured in planes normal to
    the axis, is a convex function of axial position, so its maximum over the
    tube is attained at one of the two end discs. The ray counts as a hit
    when both disc crossings lie in front of the source and inside the
    radius; either traversal direction is accepted.
    """
    tube = phantom.tube
    a = np.array(tube.axis_start)
    u = tube.direction
    length = tube.length
    o, d = ray.o, ray.d
    cos_t = float(d @ u)
    misalignment = math.degrees(math.atan2(np.linalg.norm(np.cross(d, u)), abs(cos_t)))
    if abs(cos_t) < 1e-12:
        return BullseyeCheck(False, -math.inf, misalignment, False)

    s0 = float((o - a) @ u)

    def crossing(s: float) -> tuple[float, float]:
        lam = (s - s0) / cos_t
        x = o + lam * d - a
        return lam, float(np.linalg.norm(x - s * u))

    lam_start, r_start = crossing(0.0)
    lam_end, r_end = crossing(length)
    clearance = tube.radius - max(r_start, r_end)
    in_front = lam_start >= 0.0 and lam_end >= 0.0
    return BullseyeCheck(bool(in_front and clearance > 0.0), clearance, misalignment, in_front)


def _golden_min(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-9) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    # Keep an endpoint or the start if it is at least as good.
    return min((lo, hi, x), key=lambda v: (f(v), abs(v - x)))


def _misalignment_deg(direction: np.ndarray, axis: np.ndarray) -> np.ndarray:
    cross = np.linalg.norm(np.cross(direction, axis), axis=-1)
    return np.degrees(np.arctan2(cross, np.abs(direction @ axis)))


def gantry_ray(
    state: CalibrationState,
    gantry: GantryParameterization,
    orbital: float,
    angulation: float,
    shift: Sequence[float] = (0.0, 0.0, 0.0),
) -> Line3:
    """Principal ray (volume frame) for a gantry setting, read through the chain."""
    vc = gantry.pose(orbital, angulation, shift)
    # Tracker pose implied by this C-arm pose, then back to the volume as the display would.
    world_T_tracker = compose_all(state.world_T_volume, vc, inverse(state.tracker_T_carm))
    return principal_ray(
        state, FramePoses(RigidTransform.identity(), world_T_tracker), expressed_in="volume"
    )


def align_to_bullseye(
    phantom: Phantom,
    state: CalibrationState,
    gantry: GantryParameterization | None = None,
    max_cycles: int = 40,
) -> BullseyeSolution:
    """Scripted gantry policy that lines the principal ray up with the tube.

    Orbital and angular settings minimizing the ray/tube angle are found by a
    grid search at ``gantry.grid_step`` followed by alternating golden-section
    refinement; the lateral shift then puts the ray through the tube midpoint.
    The ray is read back through the calibration chain, as the AR display
    would show it.
    """
    gantry = gantry or GantryParameterization()
    axis = phantom.tube.direction
    (a_lo, a_hi), (b_lo, b_hi) = gantry.orbital_range, gantry.angulation_range

    def cost(alpha: float, beta: float) -> float:
        return float(_misalignment_deg(gantry.ray_direction(alpha, beta), axis))

    alphas = np.unique(np.append(np.arange(a_lo, a_hi, gantry.grid_step), [a_hi, 0.0]))
    betas = np.unique(np.append(np.arange(b_lo, b_hi, gantry.grid_step), [b_hi, 0.0]))
    alphas = alphas[(alphas >= a_lo) & (alphas <= a_hi)]
    betas = betas[(betas >= b_lo) & (betas <= b_hi)]
    ga, gb = np.meshgrid(alphas, betas, indexing="ij")
    dirs = np.array([gantry.ray_direction(x, y) for x, y in zip(ga.ravel(), gb.ravel())])
    grid_cost = _misalignment_deg(dirs, axis)
    best = int(np.argmin(grid_cost))
    alpha, beta = float(ga.ravel()[best]), float(gb.ravel()[best])

    step = gantry.grid_step
    current = cost(alpha, beta)
    for _ in range(max_cycles):
        alpha = _golden_min(
            lambda x: cost(x, beta), max(a_lo, alpha - step), min(a_hi, alpha + step)
        )
        beta = _golden_min(
            lambda y: cost(alpha, y), max(b_lo, beta - step), min(b_hi, beta + step)
        )
        new = cost(alpha, beta)
        if current - new < 1e-12:
            current = new
            break
        current = new

    direction = gantry.ray_direction(alpha, beta)
    mid = phantom.tube.midpoint
    shift = mid - (mid @ direction) * direction
    ray = gantry_ray(state, gantry, alpha, beta, shift)
    solution = BullseyeSolution(
        alpha, beta, tuple(float(c) for c in shift), ray, check_bullseye(phantom, ray)
    )
    if np.linalg.norm(shift) > gantry.max_shift:
        raise BullseyeUnreachableError(
            f"tube needs a {np.linalg.norm(shift):.1f} mm shift, gantry allows {gantry.max_shift}",
            solution,
        )
    if not solution.check.hit:
        raise BullseyeUnreachableError(
            "no gantry setting in range reaches a bull's-eye view "
            f"(best misalignment {solution.check.angular_misalignment:.2f} deg, "
            f"clearance {solution.check.min_clearance:.2f} mm)",
            solution,
        )
    return solution


# -- defaults -------------------------------------------------------------------


def default_phantom() -> Phantom:
    """Seven surface spheres on a ~160 mm phantom and a 50 mm tube through its core."""
    spheres = (
        (60.0, 40.0, 75.0),
        (-55.0, 45.0, 70.0),
        (70.0, -50.0, 30.0),
        (-65.0, -40.0, 40.0),
        (0.0, 75.0, -20.0),
        (20.0, -70.0, -50.0),
        (-30.0, 10.0, 80.0),
    )
    # Along the neutral principal ray, through the isocenter.
    tube = Tube((0.0, -25.0, 0.0), (0.0, 25.0, 0.0), DEFAULT_TUBE_RADIUS_MM)
    return Phantom(spheres, tube)


def default_user_positions(world_T_volume: RigidTransform) -> np.ndarray:
    """Four standing eye positions around the table, in world coordinates."""
    volume_eyes = np.array(
        [
            [700.0, 300.0, 450.0],
            [-650.0, 350.0, 500.0],
            [600.0, -450.0, 550.0],
            [-700.0, -300.0, 480.0],
        ]
    )
    return world_T_volume.apply(volume_eyes)


def shifted_state(state: CalibrationState, offset: Sequence[float]) -> CalibrationState:
    """Same calibration with a pure translation error added to ``tracker_T_carm``."""
    bad_x = compose(RigidTransform.from_translation(offset), state.tracker_T_carm)
    return CalibrationState(bad_x, state.world_T_tracker_at_t0, state.volume_T_carm_at_t0)
