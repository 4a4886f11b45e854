"""Run configuration: one YAML file overlaid on embedded defaults."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .field import BoundarySpec
from .geometry import TWO_PI
from .impedance import DEFAULT_LAMBDA
from .phantom import Bump, PhantomSpec, TrajectoryParams
from .render import ProbeSpec

DEFAULTS: dict = {
    "seed": 0,
    "paths": {},
    "resolution": {"dr": 0.005, "num_theta": 90, "dz": 0.005},
    "boundary": {"inner": 1.0, "outer": -1.0},
    "lambda": DEFAULT_LAMBDA,
    "use_torque": True,
    "probe": {"shape": "rounded_box", "half_extents": [0.03, 0.01, 0.04], "rounding": 0.006, "num_points": 2000},
    "extraction": {
        "num_angles": 180,
        "slice_pitch": 0.005,
        "candidate_threshold": None,
        "process_noise": 1.0e-6,
        "initial_variance": 1.0e-4,
    },
    "phantom": {
        "semi_axes": [0.15, 0.11],
        "length": 0.25,
        "boundary": [4.0, -1.0],
        "bump": {"center": [0.135, 0.0, 0.14], "width": 0.025, "amplitude": 0.8},
    },
    "trajectory": {
        "kind": "press",
        "theta": 0.0,
        "z": 0.14,
        "depth": 0.015,
        "clearance": 0.005,
        "length": 0.1,
        "duration": 4.0,
        "rate": 20.0,
        "jitter_translation": 0.0005,
        "jitter_rotation": 0.005,
    },
    "noise": {"force": 0.1, "torque": 0.005},
}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigurationError(f"unknown config key {where}{key}")
        if isinstance(base[key], dict) and key not in ("paths",) and base[key] and value is not None:
            if not isinstance(value, dict):
                raise ConfigurationError(f"config key {where}{key} must be a mapping")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class RunConfig:
    """Validated configuration; ``data`` keeps the merged mapping."""

    data: dict

    def __post_init__(self):
        d = self.data
        if not d["lambda"] >= 0:
            raise ConfigurationError("lambda must be non-negative")
        res = d["resolution"]
        if not (res["dr"] > 0 and res["dz"] > 0 and int(res["num_theta"]) >= 3):
            raise ConfigurationError("resolution needs dr, dz > 0 and num_theta >= 3")
        for name, p in d["paths"].items():
            if not Path(p).exists():
                raise ConfigurationError(f"configured path {name}={p} does not exist")
        # build once so invalid values fail at load time
        self.boundary()
        self.probe()
        self.phantom()
        self.trajectory()

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        data = copy.deepcopy(DEFAULTS)
        if path is not None:
            try:
                doc = yaml.safe_load(Path(path).read_text()) or {}
            except (OSError, yaml.YAMLError) as exc:
                raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(doc, dict):
                raise ConfigurationError(f"config {path} must be a mapping")
            base = Path(path).parent
            if isinstance(doc.get("paths"), dict):
                doc["paths"] = {k: str((base / v)) for k, v in doc["paths"].items()}
            data = _merge(data, doc)
        if overrides:
            data = _merge(data, overrides)
        return cls(data)

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=False)

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def lam(self) -> float:
        return float(self.data["lambda"])

    @property
    def use_torque(self) -> bool:
        return bool(self.data["use_torque"])

    def resolution(self) -> tuple[float, float, float]:
        r = self.data["resolution"]
        return float(r["dr"]), TWO_PI / int(r["num_theta"]), float(r["dz"])

    def boundary(self) -> BoundarySpec:
        b = self.data["boundary"]
        return BoundarySpec(float(b["inner"]), float(b["outer"]))

    def probe(self) -> ProbeSpec:
        p = self.data["probe"]
        return ProbeSpec(p["shape"], tuple(float(v) for v in p["half_extents"]), float(p["rounding"]),
                         int(p["num_points"]))

    def phantom(self) -> PhantomSpec:
        p = self.data["phantom"]
        bump = p.get("bump")
        if bump is not None:
            bump = Bump(tuple(float(v) for v in bump["center"]), float(bump["width"]), float(bump["amplitude"]))
        return PhantomSpec(tuple(float(v) for v in p["semi_axes"]), float(p["length"]),
                           tuple(float(v) for v in p["boundary"]), bump,
                           int(self.data["extraction"]["num_angles"]), float(self.data["extraction"]["slice_pitch"]))

    def trajectory(self) -> tuple[str, TrajectoryParams]:
        t = dict(self.data["trajectory"])
        kind = t.pop("kind")
        if kind not in ("press", "sweep"):
            raise ConfigurationError(f"trajectory kind must be press or sweep, got {kind!r}")
        t["probe_half_height"] = float(self.data["probe"]["half_extents"][2])
        return kind, TrajectoryParams(**{k: float(v) for k, v in t.items()})

    def noise(self) -> tuple[float, float]:
        n = self.data["noise"]
        if n["force"] < 0 or n["torque"] < 0:
            raise ConfigurationError("noise levels must be non-negative")
        return float(n["force"]), float(n["torque"])

    def extraction_kwargs(self) -> dict:
        e = self.data["extraction"]
        return {
            "num_angles": int(e["num_angles"]),
            "candidate_threshold": None if e["candidate_threshold"] is None else float(e["candidate_threshold"]),
            "process_noise": float(e["process_noise"]),
            "initial_variance": float(e["initial_variance"]),
        }
