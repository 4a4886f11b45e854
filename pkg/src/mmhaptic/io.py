"""File formats: point clouds, scan manifests, surfaces and field archives.

Field archive layout (all integers little-endian)::

    bytes 0-7    magic b"MMHFIELD"
    bytes 8-11   uint32 format version (currently 1)
    bytes 12-19  uint64 length H of the JSON header
    H bytes      UTF-8 JSON header
    8*V bytes    p as little-endian float64, flat voxel order

The header holds ``grid`` (CylindricalGrid fields), ``boundary`` (inner and
outer values), ``surface`` (the inline surface document or null), ``count``
(V) and ``metadata``. A fitted model's metadata carries ``lambda``, ``T``
and ``training_log_sha256``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigurationError, EmptyInputError, InputError
from .field import BoundarySpec, CylindricalGrid, PotentialField
from .geometry import BodyAxis, Pose
from .surface import SurfaceModel

ARCHIVE_MAGIC = b"MMHFIELD"
ARCHIVE_VERSION = 1
SURFACE_FORMAT = "mmhaptic-surface"
SURFACE_VERSION = 1


def read_point_cloud(path) -> np.ndarray:
    """(n, 3) points from an ``x y z`` text file or a PLY file's vertices."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path} does not exist")
    if path.suffix.lower() == ".ply":
        from plyfile import PlyData

        try:
            vertex = PlyData.read(str(path))["vertex"]
        except (KeyError, ValueError) as exc:
            raise InputError(f"{path}: no readable vertex element ({exc})") from exc
        pts = np.column_stack([np.asarray(vertex[c], dtype=float) for c in ("x", "y", "z")])
    else:
        rows = []
        for lineno, raw in enumerate(path.read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].split()
            if not line:
                continue
            if len(line) != 3:
                raise InputError(f"{path}:{lineno}: expected 3 coordinates, got {len(line)}")
            try:
                rows.append([float(v) for v in line])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
        pts = np.array(rows, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise EmptyInputError(f"{path} contains no points")
    if not np.all(np.isfinite(pts)):
        raise InputError(f"{path} contains non-finite coordinates")
    return pts


def write_point_cloud(path, points, header: str | None = None) -> None:
    lines = [f"# {h}" for h in header.splitlines()] if header else []
    lines.extend(" ".join(f"{v:.17g}" for v in p) for p in np.asarray(points, dtype=float).reshape(-1, 3))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class ScanManifest:
    """Cloud files with their capture poses, plus how to place the body axis.

    YAML layout::

        scans:
          - cloud: front.xyz          # relative to the manifest
            pose: [12 numbers]        # row-major R|t
        axis:                         # either an explicit axis ...
          origin: [x, y, z]
          z_direction: [x, y, z]
          x_direction: [x, y, z]      # optional, sets theta = 0
        probe_pose: [12 numbers]      # ... or a probe resting on the sternum
        depth_offset: 0.1
        extraction: {z_min: 0.0, z_max: 0.3, num_angles: 180}
    """

    clouds: list[Path]
    poses: list[Pose]
    axis: BodyAxis | None = None
    probe_pose: Pose | None = None
    depth_offset: float = 0.0
    extraction: dict = field(default_factory=dict)


def _pose(values, where: str) -> Pose:
    values = np.asarray(values, dtype=float).reshape(-1)
    if len(values) != 12:
        raise InputError(f"{where}: a pose needs 12 numbers, got {len(values)}")
    return Pose.from_row12(values)


def read_manifest(path) -> ScanManifest:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(doc, dict) or not doc.get("scans"):
        raise EmptyInputError(f"{path} lists no scans")
    clouds, poses = [], []
    for i, entry in enumerate(doc["scans"]):
        if not isinstance(entry, dict) or "cloud" not in entry:
            raise InputError(f"{path}: scan {i} needs a 'cloud' entry")
        cloud = (path.parent / entry["cloud"]).resolve()
        if not cloud.exists():
            raise ConfigurationError(f"{path}: cloud file {cloud} does not exist")
        clouds.append(cloud)
        poses.append(_pose(entry.get("pose", Pose.identity().to_row12()), f"{path}: scan {i}"))
    axis = None
    if "axis" in doc:
        a = doc["axis"]
        axis = BodyAxis(np.asarray(a["origin"], float), np.asarray(a["z_direction"], float),
                        None if a.get("x_direction") is None else np.asarray(a["x_direction"], float))
    probe = _pose(doc["probe_pose"], f"{path}: probe_pose") if "probe_pose" in doc else None
    if axis is None and probe is None:
        raise ConfigurationError(f"{path}: give either 'axis' or 'probe_pose'")
    return ScanManifest(clouds, poses, axis, probe, float(doc.get("depth_offset", 0.0)),
                        dict(doc.get("extraction") or {}))


def surface_to_dict(surface: SurfaceModel) -> dict:
    ax = surface.axis
    return {
        "format": SURFACE_FORMAT,
        "version": SURFACE_VERSION,
        "axis": {
            "origin": ax.origin.tolist(),
            "z_direction": ax.z_direction.tolist(),
            "x_direction": ax.x_direction.tolist(),
        },
        "slice_z": surface.slice_z.tolist(),
        "num_angles": surface.num_angles,
        "radii": surface.radii.tolist(),
    }


def surface_from_dict(doc: dict) -> SurfaceModel:
    if doc.get("format") != SURFACE_FORMAT:
        raise InputError("not a surface document")
    if doc.get("version") != SURFACE_VERSION:
        raise InputError(f"unsupported surface version {doc.get('version')}")
    a = doc["axis"]
    axis = BodyAxis(np.asarray(a["origin"], float), np.asarray(a["z_direction"], float),
                    np.asarray(a["x_direction"], float))
    radii = np.asarray(doc["radii"], dtype=float)
    if radii.ndim != 2 or radii.shape != (len(doc["slice_z"]), int(doc["num_angles"])):
        raise InputError(f"radii shape {radii.shape} does not match slice_z and num_angles")
    return SurfaceModel(axis, np.asarray(doc["slice_z"], dtype=float), radii)


def write_surface(path, surface: SurfaceModel) -> None:
    Path(path).write_text(json.dumps(surface_to_dict(surface), indent=1) + "\n")


def read_surface(path) -> SurfaceModel:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read surface {path}: {exc}") from exc
    return surface_from_dict(doc)


@dataclass
class FieldArchive:
    field: PotentialField
    boundary: BoundarySpec
    surface: SurfaceModel | None
    metadata: dict

    @property
    def grid(self) -> CylindricalGrid:
        return self.field.grid


def write_archive(path, archive: FieldArchive) -> None:
    header = {
        "grid": archive.grid.to_dict(),
        "boundary": {"inner_value": archive.boundary.inner_value, "outer_value": archive.boundary.outer_value},
        "surface": surface_to_dict(archive.surface) if archive.surface is not None else None,
        "count": archive.grid.size,
        "metadata": archive.metadata,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<IQ", ARCHIVE_VERSION, len(blob)))
        fh.write(blob)
        fh.write(archive.field.values.astype("<f8").tobytes())


def read_archive(path) -> FieldArchive:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read archive {path}: {exc}") from exc
    if data[:8] != ARCHIVE_MAGIC:
        raise InputError(f"{path} is not a field archive")
    if len(data) < 20:
        raise InputError(f"{path} is truncated")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != ARCHIVE_VERSION:
        raise InputError(f"{path}: unsupported archive version {version}")
    header = json.loads(data[20:20 + hlen].decode("utf-8"))
    grid = CylindricalGrid.from_dict(header["grid"])
    payload = data[20 + hlen:]
    if len(payload) != 8 * header["count"] or header["count"] != grid.size:
        raise InputError(f"{path}: payload holds {len(payload) // 8} values, header says {header['count']}")
    values = np.frombuffer(payload, dtype="<f8").astype(float)
    b = header["boundary"]
    boundary = BoundarySpec(b["inner_value"], b["outer_value"], check=False)
    surface = surface_from_dict(header["surface"]) if header.get("surface") else None
    return FieldArchive(PotentialField(grid, values), boundary, surface, header.get("metadata") or {})


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
