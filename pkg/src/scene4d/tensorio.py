"""Bit-exact file formats and the dataset directory layout.

Tensor container (.ct4): magic "C4RT", version u8 (=1), dtype u8
(0 = f32, 1 = f64, 2 = u8), ndim u32, dims as ndim u64, then the
little-endian row-major payload. Round-trips are bitwise.

Dataset directory layout (one sequence):

    depth_%04d.ct4        (H, W) f64, invalid pixels encoded as depth 0
    pointmap_%04d.ct4     (H, W, 3) f64, world points (0 where invalid)
    dynamic_mask_%04d.ct4 (H, W) u8
    attachments_%04d.ct4  (H, W, 5) f64 [object_id, face_id, b0, b1, b2];
                          object_id -1 = background, -2 = uncovered pixel
    cameras.json          [{"q": [w,x,y,z], "t": [x,y,z], "fov": [v,h]}, ...]
    trajectories.csv      track_id,frame,x,y,z,visible,dynamic (full grid)
    scene.json            normalized SceneSpec (motion ground truth)

Validity is carried by the depth files: a pixel is valid iff its stored
depth is > 0 (the renderer never emits a zero depth for a hit).
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import (BadMagic, InputError, MalformedHeader, TruncatedPayload,
                     UnsupportedVersion)
from .geometry import CameraParams, DepthMap, PointMap
from .synth import (FrameAttachments, SceneSpec, SequenceDataset,
                    TrajectorySet, _camera_from_dict, _camera_to_dict)

MAGIC = b"C4RT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}


# ---------------------------------------------------------------------------
# tensor container

def write_tensor(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype not in _CODES:
        raise ValueError(f"unsupported tensor dtype {arr.dtype} (use f32, f64 or u8)")
    if arr.size == 0:
        raise ValueError("refusing to write a tensor with a zero dimension")
    code = _CODES[arr.dtype]
    payload = np.ascontiguousarray(arr).astype(_DTYPES[code], copy=False).tobytes()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BB", VERSION, code))
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        f.write(payload)


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}")
    if len(data) < 10:
        raise TruncatedPayload(f"{path}: header truncated")
    version, code = struct.unpack_from("<BB", data, 4)
    if version != VERSION:
        raise UnsupportedVersion(f"{path}: version {version}")
    if code not in _DTYPES:
        raise UnsupportedVersion(f"{path}: unknown dtype code {code}")
    (ndim,) = struct.unpack_from("<I", data, 6)
    header_end = 10 + 8 * ndim
    if len(data) < header_end:
        raise TruncatedPayload(f"{path}: dims truncated")
    dims = struct.unpack_from(f"<{ndim}Q", data, 10)
    dtype = _DTYPES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = data[header_end:]
    if len(payload) != expected:
        raise TruncatedPayload(f"{path}: payload {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


# ---------------------------------------------------------------------------
# PLY point clouds (ASCII, float32)

def write_ply(path, cloud: np.ndarray, normals: np.ndarray | None = None) -> None:
    cloud = np.asarray(cloud, dtype=np.float32).reshape(-1, 3)
    if not np.all(np.isfinite(cloud)):
        raise ValueError("cloud coordinates must be finite")
    cols = [cloud]
    props = ["x", "y", "z"]
    if normals is not None:
        normals = np.asarray(normals, dtype=np.float32).reshape(-1, 3)
        if len(normals) != len(cloud):
            raise ValueError("normals must match the cloud length")
        cols.append(normals)
        props += ["nx", "ny", "nz"]
    rows = np.concatenate(cols, axis=1)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(cloud)}\n")
        for p in props:
            f.write(f"property float {p}\n")
        f.write("end_header\n")
        for row in rows:
            f.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_ply(path):
    """Returns (points (n,3), normals (n,3) or None)."""
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0].strip() != "ply":
        raise MalformedHeader(f"{path}: not a PLY file")
    n_vertex = None
    props = []
    body_at = None
    for i, ln in enumerate(lines[1:], start=1):
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1:] != ["ascii", "1.0"]:
                raise MalformedHeader(f"{path}: only ascii 1.0 is supported")
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise MalformedHeader(f"{path}: unexpected element {parts[1]!r}")
            n_vertex = int(parts[2])
        elif parts[0] == "property":
            props.append(parts[2])
        elif parts[0] == "end_header":
            body_at = i + 1
            break
        elif parts[0] == "comment":
            continue
        else:
            raise MalformedHeader(f"{path}: unexpected header line {ln!r}")
    if n_vertex is None or body_at is None:
        raise MalformedHeader(f"{path}: incomplete header")
    if props[:3] != ["x", "y", "z"]:
        raise MalformedHeader(f"{path}: first properties must be x y z")
    has_normals = props[3:6] == ["nx", "ny", "nz"]
    body = lines[body_at:body_at + n_vertex]
    if len(body) < n_vertex:
        raise MalformedHeader(f"{path}: {len(body)} rows, header promised {n_vertex}")
    vals = np.array([[float(v) for v in ln.split()] for ln in body], dtype=np.float64)
    if n_vertex == 0:
        vals = vals.reshape(0, len(props))
    pts = vals[:, :3]
    normals = vals[:, 3:6] if has_normals else None
    return pts, normals


# ---------------------------------------------------------------------------
# trajectories CSV

def write_trajectories(path, traj: TrajectorySet) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["track_id", "frame", "x", "y", "z", "visible", "dynamic"])
        for m in range(traj.n_tracks):
            dyn = int(traj.dynamic[m])
            for t in range(traj.n_frames):
                p = traj.positions[m, t]
                wr.writerow([m, t, repr(float(p[0])), repr(float(p[1])),
                             repr(float(p[2])), int(traj.visible[m, t]), dyn])


def read_trajectories(path) -> TrajectorySet:
    with open(path, newline="") as f:
        rd = csv.reader(f)
        header = next(rd)
        if header != ["track_id", "frame", "x", "y", "z", "visible", "dynamic"]:
            raise InputError(f"{path}: unexpected trajectory CSV header")
        rows = [(int(r[0]), int(r[1]), float(r[2]), float(r[3]), float(r[4]),
                 int(r[5]), int(r[6])) for r in rd]
    if not rows:
        return TrajectorySet(positions=np.zeros((0, 0, 3)),
                             visible=np.zeros((0, 0), bool), dynamic=np.zeros(0, bool))
    m = max(r[0] for r in rows) + 1
    n = max(r[1] for r in rows) + 1
    if len(rows) != m * n:
        raise InputError(f"{path}: incomplete (track, frame) grid")
    pos = np.zeros((m, n, 3))
    vis = np.zeros((m, n), dtype=bool)
    dyn = np.zeros(m, dtype=bool)
    for tid, fr, x, y, z, v, d in rows:
        pos[tid, fr] = (x, y, z)
        vis[tid, fr] = bool(v)
        dyn[tid] = bool(d)
    return TrajectorySet(positions=pos, visible=vis, dynamic=dyn)


# ---------------------------------------------------------------------------
# cameras JSON

def write_cameras(path, cameras: list[CameraParams]) -> None:
    with open(path, "w") as f:
        json.dump([_camera_to_dict(c) for c in cameras], f, sort_keys=True)
        f.write("\n")


def read_cameras(path) -> list[CameraParams]:
    with open(path) as f:
        data = json.load(f)
    return [_camera_from_dict(c) for c in data]


# ---------------------------------------------------------------------------
# dataset directories

def _pack_attachments(att: FrameAttachments) -> np.ndarray:
    h, w = att.object_id.shape
    out = np.zeros((h, w, 5))
    out[..., 0] = att.object_id
    out[..., 1] = att.face_id
    out[..., 2:] = att.bary
    return out


def _unpack_attachments(arr: np.ndarray) -> FrameAttachments:
    return FrameAttachments(object_id=arr[..., 0].astype(np.int64),
                            face_id=arr[..., 1].astype(np.int64),
                            bary=arr[..., 2:].copy())


def save_dataset(dataset: SequenceDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for t in range(dataset.n_frames):
        d = dataset.depths[t]
        write_tensor(out / f"depth_{t:04d}.ct4", np.where(d.valid, d.values, 0.0))
        write_tensor(out / f"pointmap_{t:04d}.ct4", dataset.pointmaps[t].points)
        write_tensor(out / f"dynamic_mask_{t:04d}.ct4",
                     dataset.dynamic_mask[t].astype(np.uint8))
        write_tensor(out / f"attachments_{t:04d}.ct4",
                     _pack_attachments(dataset.attachments[t]))
    write_cameras(out / "cameras.json", dataset.cameras)
    write_trajectories(out / "trajectories.csv", dataset.trajectories)
    if dataset.spec is not None:
        with open(out / "scene.json", "w") as f:
            json.dump(dataset.spec.to_dict(), f, sort_keys=True)
            f.write("\n")


def load_depth_dir(dirpath) -> list[DepthMap]:
    """All depth_%04d.ct4 files of a directory, in index order."""
    paths = sorted(Path(dirpath).glob("depth_*.ct4"))
    if not paths:
        raise InputError(f"{dirpath}: no depth_*.ct4 files")
    out = []
    for p in paths:
        vals = read_tensor(p)
        out.append(DepthMap(values=vals, valid=vals > 0))
    return out


def load_dataset(dirpath) -> SequenceDataset:
    root = Path(dirpath)
    depths = load_depth_dir(root)
    n = len(depths)
    pointmaps = []
    attachments = []
    dmask = []
    for t in range(n):
        pts = read_tensor(root / f"pointmap_{t:04d}.ct4")
        pointmaps.append(PointMap(points=pts, valid=depths[t].valid.copy()))
        attachments.append(_unpack_attachments(read_tensor(root / f"attachments_{t:04d}.ct4")))
        dmask.append(read_tensor(root / f"dynamic_mask_{t:04d}.ct4").astype(bool))
    cameras = read_cameras(root / "cameras.json")
    traj = read_trajectories(root / "trajectories.csv")
    spec = None
    scene_path = root / "scene.json"
    if scene_path.exists():
        with open(scene_path) as f:
            spec = SceneSpec.from_dict(json.load(f))
    return SequenceDataset(depths=depths, cameras=cameras, pointmaps=pointmaps,
                           attachments=attachments, trajectories=traj,
                           dynamic_mask=np.stack(dmask), spec=spec)
