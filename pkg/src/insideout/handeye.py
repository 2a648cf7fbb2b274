"""Hand-eye calibration ``A X = X B`` for a tracker rigidly mounted on a C-arm.

``A`` is the relative tracker motion, ``B`` the relative C-arm motion and
``X = tracker_T_carm``. Rotation and translation are solved separately with
the linear Tsai-Lenz scheme:

1. For each pair, with ``P = 2 sin(theta/2) * axis``::

       skew(P_A + P_B) @ g = P_B - P_A

   is stacked and solved for the Gibbs vector ``g = tan(theta_X/2) * axis_X``.
2. ``(R_A - I) @ t_X = R_X @ t_B - t_A`` is stacked and solved for ``t_X``.

A circular C-arm sweep only produces rotations about one axis. Then the
rotation of X about that axis and the translation of X along it are not
observable; :func:`diagnose_degeneracy` detects the situation and the solvers
return minimum-norm solutions instead of noise-driven ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import (
    RigidTransform,
    Rotation,
    quats_multiply,
    quats_to_matrices,
    quats_to_rotvecs,
)
from .trajectory import RelativePosePair

DEFAULT_AXIS_TOLERANCE_DEG = 12.0
# Axes of rotations smaller than this are dominated by tracker noise.
DEFAULT_MIN_PAIR_ANGLE_DEG = 20.0
# Relative singular-value cutoff for numerical rank of the stacked systems.
RANK_RTOL = 1e-9
_IDENTITY_ANGLE = 1e-9


class HandEyeError(Exception):
    """The pose pairs do not determine a calibration."""


class InsufficientDataError(HandEyeError):
    pass


class DegenerateMotionError(HandEyeError):
    """All relative rotations share one axis; X is only partly observable."""

    def __init__(self, message: str, report: "DegeneracyReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class DegeneracyReport:
    axis_spread: float  # degrees
    observable_rank: int
    unobservable_direction: tuple[float, float, float] | None
    dominant_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    axes_used: int = 0

    def __post_init__(self) -> None:
        if self.axis_spread < 0:
            raise ValueError("axis_spread must be >= 0")
        if self.observable_rank not in (2, 3):
            raise ValueError("observable_rank must be 2 or 3")
        if (self.unobservable_direction is None) != (self.observable_rank == 3):
            raise ValueError("unobservable_direction must be present iff rank is 2")

    @property
    def is_degenerate(self) -> bool:
        return self.observable_rank == 2


@dataclass(frozen=True)
class HandEyeSolution:
    X: RigidTransform
    rot_residual_per_axis: np.ndarray
    trans_residual_rms: float
    trans_residual_median_per_axis: np.ndarray
    degeneracy: DegeneracyReport
    rotation_identifiable: bool
    num_pairs: int
    translation_residuals: np.ndarray = field(repr=False)


def _quats(rotations: Sequence[Rotation]) -> np.ndarray:
    q = np.array([r.quat for r in rotations], dtype=float).reshape(-1, 4)
    # w >= 0, so the vector part is sin(theta/2) * axis with theta in [0, pi]
    return np.where(q[:, :1] < 0, -q, q)


def _angles(q: np.ndarray) -> np.ndarray:
    return 2.0 * np.arctan2(np.linalg.norm(q[:, 1:], axis=1), q[:, 0])


def _usable(pairs: Sequence[RelativePosePair]) -> list[RelativePosePair]:
    if not pairs:
        return []
    qa = _quats([p.a.rotation for p in pairs])
    qb = _quats([p.b.rotation for p in pairs])
    ok = (_angles(qa) > _IDENTITY_ANGLE) & (_angles(qb) > _IDENTITY_ANGLE)
    return [p for p, keep in zip(pairs, ok) if keep]


def _batch_skew(v: np.ndarray) -> np.ndarray:
    out = np.zeros((len(v), 3, 3))
    out[:, 0, 1], out[:, 0, 2] = -v[:, 2], v[:, 1]
    out[:, 1, 0], out[:, 1, 2] = v[:, 2], -v[:, 0]
    out[:, 2, 0], out[:, 2, 1] = -v[:, 1], v[:, 0]
    return out


def diagnose_degeneracy(
    pairs: Sequence[RelativePosePair],
    axis_tolerance: float = DEFAULT_AXIS_TOLERANCE_DEG,
    min_angle: float = DEFAULT_MIN_PAIR_ANGLE_DEG,
) -> DegeneracyReport:
    """Check whether the relative tracker rotations all share one axis.

    Axes are taken from the tracker motions ``A`` (the frame in which t_X is
    solved). Pairs rotating less than ``min_angle`` degrees are ignored for the
    spread because their axes are mostly noise; if no pair is that large, all
    non-identity pairs are used. The dominant axis is the principal
    eigenvector of the summed axis outer products, signed to agree with the
    majority of rotation vectors. Rank 2 is reported when the largest angle
    between any axis line and the dominant axis is below ``axis_tolerance``.
    """
    rotvecs = quats_to_rotvecs(_quats([p.a.rotation for p in pairs]))
    angles = np.linalg.norm(rotvecs, axis=1)
    moving = angles > _IDENTITY_ANGLE
    if not moving.any():
        raise HandEyeError("all relative rotations are identity; no rotation axis to analyse")
    axes_arr = rotvecs[moving] / angles[moving, None]
    large = np.degrees(angles[moving]) >= min_angle
    if large.any():
        axes_arr = axes_arr[large]

    scatter = axes_arr.T @ axes_arr
    _, vecs = np.linalg.eigh(scatter)
    dominant = vecs[:, -1]
    if np.sum(axes_arr @ dominant) < 0:
        dominant = -dominant
    cosines = np.clip(np.abs(axes_arr @ dominant), 0.0, 1.0)
    spread = float(np.degrees(np.max(np.arccos(cosines))))
    dom = tuple(float(c) for c in dominant)
    if spread < axis_tolerance:
        return DegeneracyReport(spread, 2, dom, dom, len(axes_arr))
    return DegeneracyReport(spread, 3, None, dom, len(axes_arr))


def _truncated_lstsq(m: np.ndarray, rhs: np.ndarray, keep: int | None = None) -> tuple[np.ndarray, int]:
    """Minimum-norm least squares; returns (solution, numerical rank).

    ``keep`` caps the number of singular directions retained.
    """
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(m.shape[1]), 0
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    if keep is not None:
        rank = min(rank, keep)
    coeffs = (u[:, :rank].T @ rhs) / s[:rank]
    return vt[:rank].T @ coeffs, rank


def solve_rotation(
    pairs: Sequence[RelativePosePair],
    *,
    allow_degenerate: bool = False,
    degeneracy: DegeneracyReport | None = None,
    axis_tolerance: float = DEFAULT_AXIS_TOLERANCE_DEG,
) -> Rotation:
    """Least-squares ``R_X`` from the stacked Tsai-Lenz rotation system.

    Single-axis motion raises :class:`DegenerateMotionError` unless
    ``allow_degenerate``; in that case the weak direction of the system is
    dropped and the minimum-norm Gibbs vector is used, which still maps the
    B rotation axis onto the A rotation axis.
    """
    usable = _usable(pairs)
    if len(usable) < 2:
        raise InsufficientDataError(
            f"need at least 2 pairs with non-identity rotation, got {len(usable)}"
        )
    if degeneracy is None:
        degeneracy = diagnose_degeneracy(usable, axis_tolerance=axis_tolerance)
    if degeneracy.is_degenerate and not allow_degenerate:
        raise DegenerateMotionError(
            "all relative rotations share one axis (spread "
            f"{degeneracy.axis_spread:.3g} deg); rotation about it is not identifiable",
            degeneracy,
        )
    # 2 sin(theta/2) * axis is twice the vector part of the w >= 0 quaternion
    pa = 2.0 * _quats([p.a.rotation for p in usable])[:, 1:]
    pb = 2.0 * _quats([p.b.rotation for p in usable])[:, 1:]
    m = _batch_skew(pa + pb).reshape(-1, 3)
    rhs = (pb - pa).reshape(-1)
    gibbs, rank = _truncated_lstsq(m, rhs, keep=2 if degeneracy.is_degenerate else None)
    if rank < 2:
        raise InsufficientDataError("rotation system has rank < 2")
    return Rotation((1.0, gibbs[0], gibbs[1], gibbs[2]))


def _translation_system(
    pairs: Sequence[RelativePosePair], r_x: Rotation
) -> tuple[np.ndarray, np.ndarray]:
    ra = quats_to_matrices(np.array([p.a.rotation.quat for p in pairs]).reshape(-1, 4))
    ta = np.array([p.a.translation for p in pairs]).reshape(-1, 3)
    tb = np.array([p.b.translation for p in pairs]).reshape(-1, 3)
    c = (ra - np.eye(3)).reshape(-1, 3)
    d = (tb @ r_x.as_matrix().T - ta).reshape(-1)
    return c, d


def translation_residuals(
    pairs: Sequence[RelativePosePair], r_x: Rotation, t_x: Sequence[float]
) -> np.ndarray:
    """Per-pair ``(R_A - I) t_X - (R_X t_B - t_A)``, shape ``(n, 3)``, mm."""
    c, d = _translation_system(pairs, r_x)
    return (c @ np.asarray(t_x, dtype=float) - d).reshape(-1, 3)


def solve_translation(
    pairs: Sequence[RelativePosePair],
    r_x: Rotation,
    *,
    unobservable: Sequence[float] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares ``t_X`` and the per-pair residual vectors.

    With ``unobservable`` given, ``t_X`` is restricted to the plane orthogonal
    to it (the minimum-norm choice along a direction the data cannot fix).
    Otherwise a numerically rank-2 system gets the pseudo-inverse solution.
    """
    if len(pairs) == 0:
        raise InsufficientDataError("no pose pairs")
    c, d = _translation_system(pairs, r_x)
    s = np.linalg.svd(c, compute_uv=False)
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s[0] > 0 else 0
    if rank < 2:
        raise InsufficientDataError(
            f"translation system has rank {rank} < 2; t_X is under-determined"
        )
    if unobservable is not None:
        k = np.asarray(unobservable, dtype=float)
        k = k / np.linalg.norm(k)
        # Orthonormal basis of the plane normal to k.
        basis = np.linalg.svd(np.eye(3) - np.outer(k, k))[0][:, :2]
        y, _ = _truncated_lstsq(c @ basis, d)
        t_x = basis @ y
    else:
        t_x, _ = _truncated_lstsq(c, d)
    return t_x, (c @ t_x - d).reshape(-1, 3)


def rotation_residuals(pairs: Sequence[RelativePosePair], r_x: Rotation) -> np.ndarray:
    """Axis-angle components (degrees) of ``R_A R_X (R_X R_B)^-1`` per pair."""
    qa = np.array([p.a.rotation.quat for p in pairs]).reshape(-1, 4)
    qb = np.array([p.b.rotation.quat for p in pairs]).reshape(-1, 4)
    qx = np.broadcast_to(np.array(r_x.quat), qa.shape)
    xb = quats_multiply(qx, qb)
    xb_inv = xb * np.array([1.0, -1.0, -1.0, -1.0])
    mismatch = quats_multiply(quats_multiply(qa, qx), xb_inv)
    return np.degrees(quats_to_rotvecs(mismatch))


def solve(
    pairs: Sequence[RelativePosePair],
    *,
    axis_tolerance: float = DEFAULT_AXIS_TOLERANCE_DEG,
    min_angle: float = DEFAULT_MIN_PAIR_ANGLE_DEG,
) -> HandEyeSolution:
    """Full calibration with residual statistics and a degeneracy report.

    Rotation residuals are the mean absolute axis-angle components of the
    pairwise mismatch; the translation RMS is over per-pair residual norms;
    per-axis translation medians are medians of absolute components.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise InsufficientDataError(f"need at least 2 relative pose pairs, got {len(pairs)}")
    usable = _usable(pairs)
    if len(usable) < 2:
        raise InsufficientDataError(
            f"need at least 2 pairs with non-identity rotation, got {len(usable)}"
        )
    report = diagnose_degeneracy(usable, axis_tolerance=axis_tolerance, min_angle=min_angle)
    r_x = solve_rotation(usable, allow_degenerate=True, degeneracy=report)
    t_x, residuals = solve_translation(pairs, r_x, unobservable=report.unobservable_direction)

    rot_res = rotation_residuals(pairs, r_x)
    norms_sq = np.sum(residuals**2, axis=1)
    return HandEyeSolution(
        X=RigidTransform(r_x, t_x),
        rot_residual_per_axis=np.mean(np.abs(rot_res), axis=0),
        trans_residual_rms=float(math.sqrt(np.mean(norms_sq))),
        trans_residual_median_per_axis=np.median(np.abs(residuals), axis=0),
        degeneracy=report,
        rotation_identifiable=not report.is_degenerate,
        num_pairs=len(pairs),
        translation_residuals=residuals,
    )
