"""Reading and writing gaussian PLY files, camera files, PFM depth maps and PNG images."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from splatprune.scene import Camera, Scene

REQUIRED_PROPERTIES = (
    ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)
FLOAT_TYPES = ("float", "float32")
ORTHO_TOLERANCE = 1e-3
SCALE_CONVENTIONS = ("monocular-relative", "scene-anchored")


class PlyError(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.offset = offset


# ---------------------------------------------------------------------------
# PLY


def _parse_ply_header(data: bytes, path):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyError(path, 0, "not a PLY file (missing 'ply' magic or 'end_header')")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise PlyError(path, end, "unterminated end_header line")
    header_end = nl + 1
    lines = data[:header_end].decode("ascii", errors="replace").split("\n")[:-1]
    count = None
    props: list[str] = []
    offset = 0
    seen_format = False
    for line in lines:
        tokens = line.split()
        where = offset
        offset += len(line) + 1
        if not tokens or tokens[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        if tokens[0] == "format":
            if tokens[1:] != ["binary_little_endian", "1.0"]:
                raise PlyError(path, where, f"unsupported format {' '.join(tokens[1:])!r}; need binary_little_endian 1.0")
            seen_format = True
        elif tokens[0] == "element":
            if count is not None or len(tokens) != 3 or tokens[1] != "vertex":
                raise PlyError(path, where, f"unsupported element line {line.strip()!r}; only one 'vertex' element")
            try:
                count = int(tokens[2])
            except ValueError:
                raise PlyError(path, where, f"bad vertex count {tokens[2]!r}") from None
            if count < 0:
                raise PlyError(path, where, "negative vertex count")
        elif tokens[0] == "property":
            if count is None:
                raise PlyError(path, where, "property declared before the vertex element")
            if len(tokens) != 3 or tokens[1] not in FLOAT_TYPES:
                raise PlyError(path, where, f"unsupported property line {line.strip()!r}; all properties must be float32")
            if tokens[2] in props:
                raise PlyError(path, where, f"duplicate property {tokens[2]!r}")
            props.append(tokens[2])
        else:
            raise PlyError(path, where, f"unexpected header line {line.strip()!r}")
    if not seen_format:
        raise PlyError(path, 0, "missing format line")
    if count is None:
        raise PlyError(path, 0, "missing 'element vertex' line")
    end_at = end
    for name in REQUIRED_PROPERTIES:
        if name not in props:
            raise PlyError(path, end_at, f"missing required property {name!r}")
    rest = [p for p in props if p.startswith("f_rest_")]
    if rest != [f"f_rest_{i}" for i in range(len(rest))] or len(rest) % 3 or len(rest) > 45:
        raise PlyError(path, end_at, f"f_rest properties must be f_rest_0..f_rest_(3k-1) with k <= 15, got {len(rest)}")
    unknown = set(props) - set(REQUIRED_PROPERTIES) - set(rest)
    if unknown:
        raise PlyError(path, end_at, f"unknown properties {sorted(unknown)}")
    return lines, count, props, header_end


def read_ply(path) -> Scene:
    """Load a 3DGS binary little-endian PLY. Raw values are kept exactly as stored."""
    path = Path(path)
    data = path.read_bytes()
    lines, count, props, header_end = _parse_ply_header(data, path)
    dtype = np.dtype([(name, "<f4") for name in props])
    need = count * dtype.itemsize
    have = len(data) - header_end
    if have < need:
        raise PlyError(path, len(data), f"truncated payload: expected {need} bytes for {count} vertices, found {have}")
    if have > need:
        raise PlyError(path, header_end + need, f"{have - need} unexpected trailing bytes after vertex data")
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=header_end).copy()
    try:
        return Scene(raw, source_path=str(path), ply_header=lines)
    except ValueError as err:
        raise PlyError(path, header_end, str(err)) from None


def _canonical_header(scene: Scene) -> list[str]:
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {len(scene)}"]
    lines += [f"property float {name}" for name in scene.raw.dtype.names]
    lines.append("end_header")
    return lines


def _header_matches(lines: Sequence[str], names: Sequence[str]) -> bool:
    props = [ln.split()[2] for ln in lines if ln.split()[:1] == ["property"]]
    return props == list(names)


_VERTEX_LINE = re.compile(r"^(\s*element\s+vertex\s+)(\d+)(.*)$", re.S)


def write_ply(scene: Scene, path) -> None:
    """Write ``scene.raw`` as binary little-endian PLY.

    If the scene came from a PLY file its header lines are reused with the
    vertex count updated, so an unmodified scene is rewritten byte for byte.
    """
    names = scene.raw.dtype.names
    if scene.ply_header is not None and _header_matches(scene.ply_header, names):
        lines = [_VERTEX_LINE.sub(lambda m: f"{m.group(1)}{len(scene)}{m.group(3)}", ln) for ln in scene.ply_header]
    else:
        lines = _canonical_header(scene)
    header = ("\n".join(lines) + "\n").encode("ascii")
    payload = np.ascontiguousarray(scene.raw.astype(np.dtype([(n, "<f4") for n in names]))).tobytes()
    Path(path).write_bytes(header + payload)


# ---------------------------------------------------------------------------
# cameras

CAMERA_FIELDS = ("id", "img_name", "width", "height", "position", "rotation", "fx", "fy")


def _orthonormalize(rot: np.ndarray, where: str) -> np.ndarray:
    drift = np.abs(rot.T @ rot - np.eye(3)).max()
    if drift > ORTHO_TOLERANCE:
        raise ValueError(f"{where}: rotation is not orthonormal (drift {drift:.3g} > {ORTHO_TOLERANCE})")
    if drift <= 1e-12 and np.linalg.det(rot) > 0:
        return rot
    u, _, vt = np.linalg.svd(rot)
    fixed = u @ vt
    if np.linalg.det(fixed) < 0:
        raise ValueError(f"{where}: rotation is a reflection (determinant < 0)")
    return fixed


def camera_from_record(rec: dict, where: str = "camera") -> Camera:
    missing = [f for f in CAMERA_FIELDS if f not in rec]
    if missing:
        raise ValueError(f"{where}: missing fields {missing}")
    rot = np.asarray(rec["rotation"], dtype=np.float64)
    if rot.shape != (3, 3):
        raise ValueError(f"{where}: rotation must be 3x3 row-major, got shape {rot.shape}")
    return Camera(
        id=int(rec["id"]),
        image_name=str(rec["img_name"]),
        width=int(rec["width"]),
        height=int(rec["height"]),
        fx=float(rec["fx"]),
        fy=float(rec["fy"]),
        rotation=_orthonormalize(rot, where),
        position=np.asarray(rec["position"], dtype=np.float64),
        cx=float(rec["cx"]) if "cx" in rec else None,
        cy=float(rec["cy"]) if "cy" in rec else None,
    )


def camera_to_record(cam: Camera) -> dict:
    rec = {
        "id": cam.id,
        "img_name": cam.image_name,
        "width": cam.width,
        "height": cam.height,
        "position": cam.position.tolist(),
        "rotation": cam.rotation.tolist(),
        "fx": cam.fx,
        "fy": cam.fy,
    }
    if cam.cx != cam.width / 2.0 or cam.cy != cam.height / 2.0:
        rec["cx"], rec["cy"] = cam.cx, cam.cy
    return rec


def read_cameras(path) -> list[Camera]:
    """Read a JSON array of camera records (``id, img_name, width, height, position, rotation, fx, fy``)."""
    path = Path(path)
    try:
        records = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ValueError(f"{path}: invalid JSON: {err}") from None
    if not isinstance(records, list):
        raise ValueError(f"{path}: expected a JSON array of camera records")
    cams = []
    seen = set()
    for i, rec in enumerate(records):
        cam = camera_from_record(rec, f"{path}: record {i}")
        if cam.id in seen:
            raise ValueError(f"{path}: duplicate camera id {cam.id}")
        seen.add(cam.id)
        cams.append(cam)
    return cams


def write_cameras(cameras: Sequence[Camera], path) -> None:
    """Write cameras one record per line inside a JSON array."""
    body = ",\n".join(json.dumps(camera_to_record(c)) for c in cameras)
    Path(path).write_text(f"[\n{body}\n]\n" if cameras else "[]\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# PFM depth maps


@dataclass
class DepthMapFile:
    width: int
    height: int
    values: np.ndarray  # (height, width) float64, top row first
    scale_convention: str = "monocular-relative"

    def __post_init__(self):
        if self.scale_convention not in SCALE_CONVENTIONS:
            raise ValueError(f"scale_convention must be one of {SCALE_CONVENTIONS}")
        if self.values.shape != (self.height, self.width):
            raise ValueError("values shape does not match width/height")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("depth map contains non-finite values")
        if self.scale_convention == "scene-anchored" and np.any(self.values < 0):
            raise ValueError("scene-anchored depth map contains negative values")


def _read_token(data: bytes, pos: int) -> tuple[str, int]:
    while pos < len(data) and data[pos : pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(data) and not data[pos : pos + 1].isspace():
        pos += 1
    return data[start:pos].decode("ascii", errors="replace"), pos


def read_pfm(path) -> np.ndarray:
    """Grayscale PFM as a (H, W) float64 array, top row first. Endianness follows the scale sign."""
    path = Path(path)
    data = path.read_bytes()
    magic, pos = _read_token(data, 0)
    if magic != "Pf":
        raise ValueError(f"{path}: expected grayscale PFM magic 'Pf', got {magic!r}")
    w_tok, pos = _read_token(data, pos)
    h_tok, pos = _read_token(data, pos)
    s_tok, pos = _read_token(data, pos)
    try:
        width, height, scale = int(w_tok), int(h_tok), float(s_tok)
    except ValueError:
        raise ValueError(f"{path}: malformed PFM header") from None
    if width <= 0 or height <= 0 or scale == 0.0:
        raise ValueError(f"{path}: invalid PFM dimensions or scale")
    pos += 1  # single whitespace byte before the raster
    dtype = "<f4" if scale < 0 else ">f4"
    need = width * height * 4
    if len(data) - pos < need:
        raise ValueError(f"{path}: truncated PFM raster")
    values = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos).reshape(height, width)
    if np.isnan(values).any():
        raise ValueError(f"{path}: PFM contains NaN values")
    return np.flipud(values).astype(np.float64)


def read_depth_pfm(path, scale_convention: str = "monocular-relative") -> DepthMapFile:
    values = read_pfm(path)
    return DepthMapFile(values.shape[1], values.shape[0], values, scale_convention)


def write_pfm(path, values, little_endian: bool = True) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("write_pfm expects a 2D array")
    h, w = values.shape
    dtype = "<f4" if little_endian else ">f4"
    header = f"Pf\n{w} {h}\n{-1.0 if little_endian else 1.0}\n".encode("ascii")
    Path(path).write_bytes(header + np.flipud(values).astype(dtype).tobytes())


def resample_depth(values: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resampling on pixel centres; identity when the size already matches."""
    values = np.asarray(values, dtype=np.float64)
    h, w = values.shape
    if (h, w) == (height, width):
        return values.copy()
    ys = np.clip((np.arange(height) + 0.5) * h / height - 0.5, 0, h - 1)
    xs = np.clip((np.arange(width) + 0.5) * w / width - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = values[y0][:, x0] * (1 - fx) + values[y0][:, x1] * fx
    bottom = values[y1][:, x0] * (1 - fx) + values[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


# ---------------------------------------------------------------------------
# PNG


def write_png(path, image) -> None:
    """Write an image in [0, 1] (H, W) or (H, W, 3) as 8-bit PNG."""
    from PIL import Image

    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """8-bit image as float64 in [0, 1]; alpha channels are dropped."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im, dtype=np.float64)
    return arr / 255.0
