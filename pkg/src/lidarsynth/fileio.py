"""File formats: PLY clouds/meshes, sequence manifests, trajectories, datasets.

PLY profile: element `vertex` with properties x, y, z (double on write; float
or double accepted on read) and an optional `face` element with
`property list uchar int vertex_indices`. Anything else is rejected. All
coordinates are in the left-handed vehicle convention (x forward, y right,
z up); files carry a comment line saying so but no conversion ever happens.

The dataset index is line-oriented UTF-8, one record per sample:
    sample_id x1 y1 x2 y2 x3 y3 x4 y4 sequence_id timestep offset
with floats at a fixed 6 decimal places. The column order is a compatibility
contract for downstream training code.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, PlyParseError
from .geometry import FRAME_SENSOR, PointCloud, PoseSE3, TriangleMesh

_COORD_COMMENT = "comment left-handed frame: x forward, y right, z up, meters"
_FLOAT_TYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8"}


@dataclass(frozen=True)
class ScanSequence:
    """Ordered scans (timestep = list position) captured at a constant frequency."""

    scans: tuple
    frequency_hz: float

    def __post_init__(self):
        if self.frequency_hz <= 0:
            raise InvalidInputError("capture frequency must be positive")
        object.__setattr__(self, "scans", tuple(self.scans))

    def __len__(self):
        return len(self.scans)


@dataclass(frozen=True)
class SequenceManifest:
    paths: tuple
    frequency_hz: float
    preset: str = "default-64"


@dataclass(frozen=True)
class DatasetSample:
    """One exported training sample: frontal crop of a scan plus its label."""

    cloud: PointCloud
    waypoints: np.ndarray  # (4, 2) meters, vehicle frame
    sequence_id: int
    timestep: int
    offset: float

    def __post_init__(self):
        w = np.asarray(self.waypoints, dtype=np.float64)
        if w.shape != (4, 2):
            raise InvalidInputError(f"label must hold exactly 4 waypoints, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidInputError("label contains non-finite waypoints")
        if len(self.cloud) and self.cloud.points[:, 0].min() < 0:
            raise InvalidInputError("sample cloud must be a frontal crop (x >= 0)")
        object.__setattr__(self, "waypoints", w)

    @property
    def sample_id(self) -> str:
        return f"seq{self.sequence_id}_t{self.timestep}_off{self.offset:+.1f}"


# ----------------------------------------------------------------- PLY parsing


class _PlyHeader:
    def __init__(self):
        self.format = None
        self.elements = []  # (name, count, [(proptype, name) or ("list", ...)])
        self.body_offset = 0
        self.header_lines = 0


def _parse_header(raw: bytes, path) -> _PlyHeader:
    header = _PlyHeader()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") and not raw.startswith(b"ply\r\n"):
        raise PlyParseError(f"{path}: missing 'ply' magic", line=1)
    if end < 0:
        raise PlyParseError(f"{path}: missing 'end_header'")
    header.body_offset = end + len(b"end_header\n")
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    props = None
    for lineno, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens or tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1] not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"{path}: unsupported format {tokens[1]!r}", line=lineno)
            header.format = tokens[1]
        elif tokens[0] == "element":
            props = []
            header.elements.append((tokens[1], int(tokens[2]), props))
        elif tokens[0] == "property":
            if props is None:
                raise PlyParseError(f"{path}: property before element", line=lineno)
            if tokens[1] == "list":
                props.append(("list", tokens[2], tokens[3], tokens[4]))
            else:
                props.append((tokens[1], tokens[2]))
        else:
            raise PlyParseError(f"{path}: unexpected header token {tokens[0]!r}", line=lineno)
    if header.format is None:
        raise PlyParseError(f"{path}: header has no format line")
    header.header_lines = len(lines) + 1
    return header


def _vertex_dtype(props, path):
    names = [p[1] for p in props if p[0] != "list"]
    if names != ["x", "y", "z"] or any(p[0] == "list" for p in props):
        raise PlyParseError(f"{path}: vertex element must have exactly properties x, y, z")
    types = {p[0] for p in props}
    if len(types) != 1 or next(iter(types)) not in _FLOAT_TYPES:
        raise PlyParseError(f"{path}: vertex properties must be a uniform float or double")
    return np.dtype(_FLOAT_TYPES[next(iter(types))])


def _read_ascii_floats(text_lines, count, width, what, path, first_line):
    tokens = " ".join(text_lines).split()
    expected = count * width
    if len(tokens) < expected:
        raise PlyParseError(
            f"{path}: {what} element declares {count} rows but data holds "
            f"{len(tokens) // width}", line=first_line)
    try:
        values = np.array(tokens[:expected], dtype=np.float64)
    except ValueError as exc:
        raise PlyParseError(f"{path}: bad {what} value: {exc}", line=first_line) from None
    return values.reshape(count, width), tokens[expected:]


def read_cloud(path, frame: str = FRAME_SENSOR) -> PointCloud:
    """Read a vertex-only PLY. The frame tag is caller-declared (files carry none)."""
    raw = Path(path).read_bytes()
    header = _parse_header(raw, path)
    vertex = [e for e in header.elements if e[0] == "vertex"]
    if len(vertex) != 1 or len(header.elements) != 1:
        raise PlyParseError(f"{path}: expected exactly one 'vertex' element")
    _, count, props = vertex[0]
    dtype = _vertex_dtype(props, path)
    if header.format == "ascii":
        body = raw[header.body_offset:].decode("ascii", errors="replace").splitlines()
        pts, _ = _read_ascii_floats(body, count, 3, "vertex", path, header.header_lines)
    else:
        body = raw[header.body_offset:]
        need = count * 3 * dtype.itemsize
        if len(body) < need:
            have = len(body) // (3 * dtype.itemsize)
            raise PlyParseError(
                f"{path}: vertex element declares {count} rows but data holds {have}")
        pts = np.frombuffer(body[:need], dtype=dtype).reshape(count, 3).astype(np.float64)
    return PointCloud(pts, frame)


def write_cloud(cloud: PointCloud, path, format: str = "binary") -> None:
    """Write a cloud as PLY; re-readable to an identical cloud."""
    _write_ply(path, cloud.points, None, format)


def read_mesh(path) -> TriangleMesh:
    raw = Path(path).read_bytes()
    header = _parse_header(raw, path)
    names = [e[0] for e in header.elements]
    if names != ["vertex", "face"]:
        raise PlyParseError(f"{path}: mesh must declare vertex then face elements")
    _, vcount, vprops = header.elements[0]
    _, fcount, fprops = header.elements[1]
    dtype = _vertex_dtype(vprops, path)
    if fprops != [("list", "uchar", "int", "vertex_indices")]:
        raise PlyParseError(f"{path}: face element must be 'property list uchar int vertex_indices'")

    if header.format == "ascii":
        body = raw[header.body_offset:].decode("ascii", errors="replace").splitlines()
        verts, rest = _read_ascii_floats(body, vcount, 3, "vertex", path, header.header_lines)
        if len(rest) < fcount * 4:
            raise PlyParseError(
                f"{path}: face element declares {fcount} rows but data holds {len(rest) // 4}")
        rows = np.array(rest[: fcount * 4], dtype=np.int64).reshape(fcount, 4)
        if fcount and not np.all(rows[:, 0] == 3):
            raise PlyParseError(f"{path}: only triangle faces are supported")
        faces = rows[:, 1:]
    else:
        body = raw[header.body_offset:]
        vbytes = vcount * 3 * dtype.itemsize
        if len(body) < vbytes:
            raise PlyParseError(f"{path}: vertex data truncated")
        verts = np.frombuffer(body[:vbytes], dtype=dtype).reshape(vcount, 3).astype(np.float64)
        face_dtype = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
        fbytes = fcount * face_dtype.itemsize
        if len(body) < vbytes + fbytes:
            have = (len(body) - vbytes) // face_dtype.itemsize
            raise PlyParseError(
                f"{path}: face element declares {fcount} rows but data holds {have}")
        rows = np.frombuffer(body[vbytes: vbytes + fbytes], dtype=face_dtype)
        if fcount and not np.all(rows["n"] == 3):
            raise PlyParseError(f"{path}: only triangle faces are supported")
        faces = rows["idx"].astype(np.int64)

    if fcount and faces.size and (faces.min() < 0 or faces.max() >= vcount):
        bad = int(faces.max())
        raise PlyParseError(f"{path}: face references vertex {bad} of {vcount}")
    return TriangleMesh(verts, faces)


def write_mesh(mesh: TriangleMesh, path, format: str = "binary") -> None:
    _write_ply(path, mesh.vertices, mesh.triangles, format)


def _write_ply(path, points, faces, format):
    if format not in ("ascii", "binary"):
        raise InvalidInputError(f"format must be 'ascii' or 'binary', got {format!r}")
    fmt_line = "ascii 1.0" if format == "ascii" else "binary_little_endian 1.0"
    lines = [
        "ply",
        f"format {fmt_line}",
        _COORD_COMMENT,
        f"element vertex {len(points)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if faces is not None:
        lines += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    header = "\n".join(lines) + "\nend_header\n"

    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if format == "ascii":
            for p in points:
                fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n".encode("ascii"))
            if faces is not None:
                for f in faces:
                    fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))
        else:
            fh.write(np.ascontiguousarray(points, dtype="<f8").tobytes())
            if faces is not None:
                rows = np.empty(len(faces), dtype=np.dtype([("n", "u1"), ("idx", "<i4", (3,))]))
                rows["n"] = 3
                rows["idx"] = faces
                fh.write(rows.tobytes())


# ------------------------------------------------------------------- manifests


def write_manifest(manifest: SequenceManifest, path) -> None:
    lines = [f"frequency_hz={manifest.frequency_hz:.17g}", f"preset={manifest.preset}"]
    lines += [str(p) for p in manifest.paths]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> SequenceManifest:
    """Parse a manifest; every referenced scan file must exist."""
    base = Path(path).parent
    lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or not lines[0].startswith("frequency_hz="):
        raise InvalidInputError(f"{path}: manifest must start with a frequency_hz= line")
    frequency = float(lines[0].split("=", 1)[1])
    preset = "default-64"
    rest = lines[1:]
    if rest and rest[0].startswith("preset="):
        preset = rest[0].split("=", 1)[1]
        rest = rest[1:]
    paths = []
    for entry in rest:
        p = Path(entry)
        if not p.is_absolute():
            p = base / p
        if not p.exists():
            raise FileNotFoundError(f"{path}: manifest references missing file {p}")
        paths.append(p)
    return SequenceManifest(tuple(paths), frequency, preset)


def load_sequence(manifest: SequenceManifest) -> ScanSequence:
    scans = [read_cloud(p, FRAME_SENSOR) for p in manifest.paths]
    return ScanSequence(tuple(scans), manifest.frequency_hz)


# ----------------------------------------------------------------- trajectories


def write_trajectory(poses, path) -> None:
    """One pose per line: 12 floats, row-major 3x4 [R | t], world-to-sensor."""
    with open(path, "w", encoding="utf-8") as fh:
        for pose in poses:
            m = np.hstack([pose.rotation, pose.translation[:, None]])
            fh.write(" ".join(f"{v:.17g}" for v in m.ravel()) + "\n")


def read_trajectory(path) -> list:
    poses = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        vals = np.array(line.split(), dtype=np.float64)
        if vals.size != 12:
            raise InvalidInputError(f"{path}:{lineno}: expected 12 floats, got {vals.size}")
        m = vals.reshape(3, 4)
        poses.append(PoseSE3(m[:, :3], m[:, 3]))
    return poses


# --------------------------------------------------------------------- dataset


def export_dataset(samples, directory) -> Path:
    """Write one cloud file per sample plus the label index; returns the index path.

    Deterministic: samples are ordered by (sequence, timestep, offset), file
    names follow `seq{S}_t{T}_off{O:+.1f}.ply`, floats use 6 decimal places.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ordered = sorted(samples, key=lambda s: (s.sequence_id, s.timestep, s.offset))
    seen = set()
    for s in ordered:
        if s.sample_id in seen:
            raise InvalidInputError(f"duplicate sample key {s.sample_id}")
        seen.add(s.sample_id)

    lines = []
    for s in ordered:
        write_cloud(s.cloud, directory / f"{s.sample_id}.ply", format="binary")
        flat = " ".join(f"{v:.6f}" for v in s.waypoints.ravel())
        lines.append(f"{s.sample_id} {flat} {s.sequence_id} {s.timestep} {s.offset:.6f}")
    index_path = directory / "index.txt"
    index_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return index_path


def read_dataset_index(path):
    """Parse an index file into (sample_id, waypoints (4,2), seq, timestep, offset) rows."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 12:
            raise InvalidInputError(f"{path}:{lineno}: expected 12 columns, got {len(parts)}")
        wp = np.array(parts[1:9], dtype=np.float64).reshape(4, 2)
        rows.append((parts[0], wp, int(parts[9]), int(parts[10]), float(parts[11])))
    return rows
