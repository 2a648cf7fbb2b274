"""JSON file formats and run configuration.

Every document carries ``schema_version`` and ``kind`` and is validated
against the schema shipped in ``insideout/schemas`` on load. Quaternions are
written ``(w, x, y, z)`` with ``w >= 0``; lengths are mm and reported angles
degrees. Floats are written with ``repr`` precision, so load/save cycles are
exact.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np

from .chain import CalibrationState, calibrate
from .evaluation import (
    BullseyeCheck,
    BullseyeSolution,
    GantryParameterization,
    GazeObservation,
    Phantom,
    TREResult,
    Tube,
    default_phantom,
    default_user_positions,
)
from .geometry import Line3, RigidTransform, Rotation, compose_all, inverse
from .handeye import DegeneracyReport, HandEyeSolution
from .trajectory import (
    PAIR_MODES,
    NoiseSpec,
    OrbitSpec,
    PoseSample,
    PoseStream,
    default_ground_truth_mount,
    default_world_T_volume,
    generate_orbit,
)

SCHEMA_VERSION = 1
FRAME_CONVENTION = "A_T_B maps B to A"
QUATERNION_NORM_TOL = 1e-9


class SchemaError(ValueError):
    """A document is malformed, of the wrong kind, or violates its schema."""


# -- low level ---------------------------------------------------------------------


@lru_cache(maxsize=None)
def schema(kind: str) -> dict:
    ref = resources.files("insideout") / "schemas" / f"{kind}.schema.json"
    try:
        return json.loads(ref.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SchemaError(f"unknown document kind {kind!r}") from None


def validate(doc: Any, kind: str) -> dict:
    if not isinstance(doc, dict):
        raise SchemaError(f"{kind}: expected a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"{kind}: unsupported schema_version {version!r}")
    if doc.get("kind") != kind:
        raise SchemaError(f"expected a {kind!r} document, got kind {doc.get('kind')!r}")
    try:
        jsonschema.validate(doc, schema(kind))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{kind}: {where}: {exc.message}") from None
    return doc


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def write_json(doc: dict, path: str | Path) -> None:
    Path(path).write_text(dumps(doc), encoding="utf-8")


def read_json(path: str | Path, kind: str) -> dict:
    """Read and validate; OSError propagates, bad content raises SchemaError."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    return validate(doc, kind)


def _header(kind: str) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": kind}


def _floats(v: Sequence[float]) -> list[float]:
    return [float(c) for c in v]


# -- transforms ----------------------------------------------------------------------


def transform_to_dict(t: RigidTransform) -> dict:
    return {"quaternion_wxyz": list(t.rotation.canonical()), "translation_mm": _floats(t.translation)}


def transform_from_dict(d: dict) -> RigidTransform:
    q = d["quaternion_wxyz"]
    norm = math.sqrt(sum(float(c) ** 2 for c in q))
    if abs(norm - 1.0) > QUATERNION_NORM_TOL:
        raise SchemaError(f"quaternion {q} is not unit norm (|q| = {norm:.12g})")
    return RigidTransform(Rotation(tuple(q)), d["translation_mm"])


# -- pose streams ---------------------------------------------------------------------


def stream_to_dict(stream: PoseStream) -> dict:
    doc = _header("pose_stream")
    doc["frame_convention"] = FRAME_CONVENTION
    doc["units"] = {"length": "mm", "angle": "deg"}
    doc["samples"] = [
        {
            "index": s.index,
            "world_T_tracker": transform_to_dict(s.world_T_tracker),
            "volume_T_carm": transform_to_dict(s.volume_T_carm),
        }
        for s in stream
    ]
    return doc


def stream_from_dict(doc: dict) -> PoseStream:
    validate(doc, "pose_stream")
    samples = [
        PoseSample(
            int(s["index"]),
            transform_from_dict(s["world_T_tracker"]),
            transform_from_dict(s["volume_T_carm"]),
        )
        for s in doc["samples"]
    ]
    try:
        return PoseStream(tuple(samples))
    except ValueError as exc:
        raise SchemaError(f"pose_stream: {exc}") from None


def save_stream(stream: PoseStream, path: str | Path) -> None:
    write_json(stream_to_dict(stream), path)


def load_stream(path: str | Path) -> PoseStream:
    return stream_from_dict(read_json(path, "pose_stream"))


def stream_to_csv(stream: PoseStream) -> str:
    """Flat CSV export (one row per sample); JSON stays the canonical format."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ["qw", "qx", "qy", "qz", "tx_mm", "ty_mm", "tz_mm"]
    writer.writerow(["index"] + [f"wt_{c}" for c in cols] + [f"vc_{c}" for c in cols])
    for s in stream:
        row: list[Any] = [s.index]
        for t in (s.world_T_tracker, s.volume_T_carm):
            row += [repr(c) for c in t.rotation.canonical()] + [repr(c) for c in t.translation]
        writer.writerow(row)
    return buf.getvalue()


# -- calibration ----------------------------------------------------------------------


def state_to_dict(state: CalibrationState) -> dict:
    return {
        "tracker_T_carm": transform_to_dict(state.tracker_T_carm),
        "world_T_tracker_at_t0": transform_to_dict(state.world_T_tracker_at_t0),
        "volume_T_carm_at_t0": transform_to_dict(state.volume_T_carm_at_t0),
        "world_T_volume": transform_to_dict(state.world_T_volume),
    }


def state_from_dict(d: dict) -> CalibrationState:
    try:
        return CalibrationState(
            transform_from_dict(d["tracker_T_carm"]),
            transform_from_dict(d["world_T_tracker_at_t0"]),
            transform_from_dict(d["volume_T_carm_at_t0"]),
            transform_from_dict(d["world_T_volume"]),
        )
    except ValueError as exc:
        raise SchemaError(f"calibration_state: {exc}") from None


def state_document(state: CalibrationState) -> dict:
    doc = _header("calibration_state")
    doc.update(state_to_dict(state))
    return doc


def load_state(path: str | Path) -> CalibrationState:
    return state_from_dict(read_json(path, "calibration_state"))


def _optional_vec(v: Sequence[float] | None) -> list[float] | None:
    return None if v is None else _floats(v)


def degeneracy_to_dict(r: DegeneracyReport) -> dict:
    return {
        "axis_spread_deg": float(r.axis_spread),
        "observable_rank": int(r.observable_rank),
        "unobservable_direction": _optional_vec(r.unobservable_direction),
        "dominant_axis": _floats(r.dominant_axis),
        "axes_used": int(r.axes_used),
    }


def degeneracy_from_dict(d: dict) -> DegeneracyReport:
    direction = d["unobservable_direction"]
    return DegeneracyReport(
        d["axis_spread_deg"],
        d["observable_rank"],
        None if direction is None else tuple(direction),
        tuple(d["dominant_axis"]),
        d.get("axes_used", 0),
    )


def report_to_dict(solution: HandEyeSolution, state: CalibrationState, pair_mode: str) -> dict:
    doc = _header("handeye_report")
    doc.update(
        {
            "pair_mode": pair_mode,
            "num_pairs": int(solution.num_pairs),
            "tracker_T_carm": transform_to_dict(solution.X),
            "rot_residual_per_axis_deg": _floats(solution.rot_residual_per_axis),
            "trans_residual_rms_mm": float(solution.trans_residual_rms),
            "trans_residual_median_per_axis_mm": _floats(solution.trans_residual_median_per_axis),
            "rotation_identifiable": bool(solution.rotation_identifiable),
            "degeneracy": degeneracy_to_dict(solution.degeneracy),
            "calibration_state": state_to_dict(state),
        }
    )
    return doc


@dataclass(frozen=True)
class CalibrationReport:
    """A loaded hand-eye report (residual arrays are not stored on disk)."""

    pair_mode: str
    num_pairs: int
    X: RigidTransform
    rot_residual_per_axis: np.ndarray
    trans_residual_rms: float
    trans_residual_median_per_axis: np.ndarray
    rotation_identifiable: bool
    degeneracy: DegeneracyReport
    state: CalibrationState


def report_from_dict(doc: dict) -> CalibrationReport:
    validate(doc, "handeye_report")
    try:
        return CalibrationReport(
            doc["pair_mode"],
            doc["num_pairs"],
            transform_from_dict(doc["tracker_T_carm"]),
            np.array(doc["rot_residual_per_axis_deg"]),
            doc["trans_residual_rms_mm"],
            np.array(doc["trans_residual_median_per_axis_mm"]),
            doc["rotation_identifiable"],
            degeneracy_from_dict(doc["degeneracy"]),
            state_from_dict(doc["calibration_state"]),
        )
    except ValueError as exc:
        raise SchemaError(f"handeye_report: {exc}") from None


def load_report(path: str | Path) -> CalibrationReport:
    return report_from_dict(read_json(path, "handeye_report"))


# -- evaluation -----------------------------------------------------------------------


def _phantom_body(p: Phantom) -> dict:
    return {
        "spheres_mm": [_floats(s) for s in p.spheres],
        "tube": {
            "axis_start_mm": _floats(p.tube.axis_start),
            "axis_end_mm": _floats(p.tube.axis_end),
            "radius_mm": float(p.tube.radius),
        },
    }


def _phantom_from_body(d: dict) -> Phantom:
    t = d["tube"]
    try:
        return Phantom(
            tuple(tuple(s) for s in d["spheres_mm"]),
            Tube(tuple(t["axis_start_mm"]), tuple(t["axis_end_mm"]), t["radius_mm"]),
        )
    except ValueError as exc:
        raise SchemaError(f"phantom: {exc}") from None


def phantom_to_dict(p: Phantom) -> dict:
    doc = _header("phantom")
    doc.update(_phantom_body(p))
    return doc


def phantom_from_dict(doc: dict) -> Phantom:
    return _phantom_from_body(validate(doc, "phantom"))


def load_phantom(path: str | Path) -> Phantom:
    return phantom_from_dict(read_json(path, "phantom"))


def gaze_to_dict(observations: Sequence[GazeObservation]) -> dict:
    doc = _header("gaze_observations")
    doc["observations"] = [
        {
            "user_id": int(o.user_id),
            "target_index": int(o.target_index),
            "origin_mm": _floats(o.line.origin),
            "direction": _floats(o.line.direction),
        }
        for o in observations
    ]
    return doc


def gaze_from_dict(doc: dict) -> list[GazeObservation]:
    validate(doc, "gaze_observations")
    try:
        return [
            GazeObservation(o["user_id"], o["target_index"], Line3(o["origin_mm"], o["direction"]))
            for o in doc["observations"]
        ]
    except ValueError as exc:
        raise SchemaError(f"gaze_observations: {exc}") from None


def load_gaze(path: str | Path) -> list[GazeObservation]:
    return gaze_from_dict(read_json(path, "gaze_observations"))


def tre_to_dict(r: TREResult) -> dict:
    doc = _header("tre_result")
    doc.update(
        {
            "overall_mm": float(r.overall),
            "per_target_mm": _floats(r.per_target),
            "per_user_mm": _floats(r.per_user),
            "M": int(r.M),
            "N": int(r.N),
            "user_ids": [int(u) for u in r.user_ids],
            "distances_mm": [_floats(row) for row in r.distances],
        }
    )
    return doc


def tre_from_dict(doc: dict) -> TREResult:
    validate(doc, "tre_result")
    return TREResult(
        doc["overall_mm"],
        tuple(doc["per_target_mm"]),
        tuple(doc["per_user_mm"]),
        doc["M"],
        doc["N"],
        np.array(doc["distances_mm"], dtype=float).reshape(doc["M"], doc["N"]),
        tuple(doc["user_ids"]),
    )


def bullseye_to_dict(
    mode: str,
    orbital: float,
    angulation: float,
    shift: Sequence[float],
    ray: Line3 | None,
    check: BullseyeCheck,
    status: str | None = None,
    message: str | None = None,
) -> dict:
    doc = _header("bullseye_report")
    doc.update(
        {
            "mode": mode,
            "status": status or ("hit" if check.hit else "miss"),
            "orbital_deg": float(orbital),
            "angulation_deg": float(angulation),
            "shift_mm": _floats(shift),
        }
    )
    if ray is not None:
        doc["ray_origin_mm"] = _floats(ray.origin)
        doc["ray_direction"] = _floats(ray.direction)
    doc["hit"] = bool(check.hit)
    doc["min_clearance_mm"] = float(check.min_clearance) if math.isfinite(check.min_clearance) else None
    doc["angular_misalignment_deg"] = float(check.angular_misalignment)
    if message:
        doc["message"] = message
    return doc


def bullseye_solution_to_dict(sol: BullseyeSolution, status: str | None = None, message: str | None = None) -> dict:
    return bullseye_to_dict(
        "solve", sol.orbital, sol.angulation, sol.shift, sol.ray, sol.check, status, message
    )


# -- run configuration ----------------------------------------------------------------


@dataclass(frozen=True)
class GazeSettings:
    user_positions: np.ndarray | None = None  # world frame; None -> defaults
    aim_error_sigma: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    """Everything a synthetic run needs; each sub-spec validates itself."""

    orbit: OrbitSpec = field(default_factory=OrbitSpec)
    noise: NoiseSpec = field(default_factory=lambda: NoiseSpec(0.5, 1.0, 0.0, 0))
    pair_mode: str = "all_pairs"
    ground_truth_X: RigidTransform = field(default_factory=default_ground_truth_mount)
    world_T_volume: RigidTransform = field(default_factory=default_world_T_volume)
    out_of_plane_tilts: tuple[float, ...] = ()
    out_of_plane_rotation: float = 30.0
    phantom: Phantom = field(default_factory=default_phantom)
    gaze: GazeSettings = field(default_factory=GazeSettings)
    gantry: GantryParameterization = field(default_factory=GantryParameterization)

    def __post_init__(self) -> None:
        if self.pair_mode not in PAIR_MODES:
            raise ValueError(f"pair_mode must be one of {PAIR_MODES}, got {self.pair_mode!r}")

    def user_positions(self) -> np.ndarray:
        if self.gaze.user_positions is not None:
            return np.asarray(self.gaze.user_positions, dtype=float).reshape(-1, 3)
        return default_user_positions(self.world_T_volume)

    def true_state(self) -> CalibrationState:
        """Ground-truth calibration, with t0 at the first orbit pose."""
        vc0 = generate_orbit(self.orbit)[0]
        wt0 = compose_all(self.world_T_volume, vc0, inverse(self.ground_truth_X))
        return calibrate(wt0, self.ground_truth_X, vc0)


def config_to_dict(cfg: RunConfig) -> dict:
    doc = _header("run_config")
    o, n, g = cfg.orbit, cfg.noise, cfg.gantry
    doc["orbit"] = {
        "num_poses": o.num_poses,
        "sweep_angle_deg": float(o.sweep_angle),
        "source_to_isocenter_mm": float(o.source_to_isocenter),
        "orbit_axis": _floats(o.orbit_axis),
        "start_angle_deg": float(o.start_angle),
    }
    doc["noise"] = {
        "rotation_sigma_deg": float(n.rotation_sigma),
        "translation_sigma_mm": float(n.translation_sigma),
        "drift_rate_mm": float(n.drift_rate),
        "seed": n.seed,
    }
    doc["pair_mode"] = cfg.pair_mode
    doc["ground_truth_tracker_T_carm"] = transform_to_dict(cfg.ground_truth_X)
    doc["world_T_volume"] = transform_to_dict(cfg.world_T_volume)
    doc["out_of_plane"] = {
        "tilt_angles_deg": _floats(cfg.out_of_plane_tilts),
        "rotation_angle_deg": float(cfg.out_of_plane_rotation),
    }
    doc["phantom"] = _phantom_body(cfg.phantom)
    doc["gaze"] = {
        "user_positions_mm": [_floats(p) for p in cfg.user_positions()],
        "aim_error_sigma_mm": float(cfg.gaze.aim_error_sigma),
        "seed": cfg.gaze.seed,
    }
    doc["gantry"] = {
        "orbit_axis": _floats(g.orbit_axis),
        "source_to_isocenter_mm": float(g.source_to_isocenter),
        "orbital_range_deg": _floats(g.orbital_range),
        "angulation_range_deg": _floats(g.angulation_range),
        "max_shift_mm": float(g.max_shift),
        "grid_step_deg": float(g.grid_step),
    }
    return doc


def config_from_dict(doc: dict) -> RunConfig:
    """Build a RunConfig; absent sections fall back to defaults."""
    validate(doc, "run_config")
    kw: dict[str, Any] = {}
    try:
        if "orbit" in doc:
            o = doc["orbit"]
            kw["orbit"] = OrbitSpec(
                num_poses=o.get("num_poses", OrbitSpec.num_poses),
                sweep_angle=o.get("sweep_angle_deg", OrbitSpec.sweep_angle),
                source_to_isocenter=o.get("source_to_isocenter_mm", OrbitSpec.source_to_isocenter),
                orbit_axis=tuple(o.get("orbit_axis", OrbitSpec.orbit_axis)),
                start_angle=o.get("start_angle_deg"),
            )
        if "noise" in doc:
            n = doc["noise"]
            kw["noise"] = NoiseSpec(
                n.get("rotation_sigma_deg", 0.0),
                n.get("translation_sigma_mm", 0.0),
                n.get("drift_rate_mm", 0.0),
                n.get("seed", 0),
            )
        if "pair_mode" in doc:
            kw["pair_mode"] = doc["pair_mode"]
        if "ground_truth_tracker_T_carm" in doc:
            kw["ground_truth_X"] = transform_from_dict(doc["ground_truth_tracker_T_carm"])
        if "world_T_volume" in doc:
            kw["world_T_volume"] = transform_from_dict(doc["world_T_volume"])
        if "out_of_plane" in doc:
            oop = doc["out_of_plane"]
            kw["out_of_plane_tilts"] = tuple(oop.get("tilt_angles_deg", ()))
            kw["out_of_plane_rotation"] = oop.get("rotation_angle_deg", 30.0)
        if "phantom" in doc:
            kw["phantom"] = _phantom_from_body(doc["phantom"])
        if "gaze" in doc:
            g = doc["gaze"]
            users = g.get("user_positions_mm")
            kw["gaze"] = GazeSettings(
                None if users is None else np.array(users, dtype=float).reshape(-1, 3),
                g.get("aim_error_sigma_mm", 0.0),
                g.get("seed", 0),
            )
        if "gantry" in doc:
            g = doc["gantry"]
            base = GantryParameterization()
            kw["gantry"] = GantryParameterization(
                orbit_axis=tuple(g.get("orbit_axis", base.orbit_axis)),
                source_to_isocenter=g.get("source_to_isocenter_mm", base.source_to_isocenter),
                orbital_range=tuple(g.get("orbital_range_deg", base.orbital_range)),
                angulation_range=tuple(g.get("angulation_range_deg", base.angulation_range)),
                max_shift=g.get("max_shift_mm", base.max_shift),
                grid_step=g.get("grid_step_deg", base.grid_step),
            )
        return RunConfig(**kw)
    except ValueError as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"run_config: {exc}") from None


def load_config(path: str | Path) -> RunConfig:
    return config_from_dict(read_json(path, "run_config"))
