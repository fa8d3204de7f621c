"""File formats: scene and point-cloud PLY, PPM/TGSF images, cameras, flat configs, scene bundles."""
from __future__ import annotations

import ast
import json
import struct
import warnings
from dataclasses import fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from plyfile import PlyData, PlyElement

from .core import Camera, GaussianScene, bounding_radius

SH_C0 = 0.28209479177387814
SCENE_FIELDS = (
    ["x", "y", "z"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
    + ["opacity"]
    + [f"f_dc_{i}" for i in range(3)]
)
SH1_FIELDS = [f"f_rest_{i}" for i in range(9)]


class FormatError(ValueError):
    """Malformed input file; the message names the file and the offending field."""

    def __init__(self, path, field: str, detail: str):
        super().__init__(f"{path}: field '{field}': {detail}")
        self.path = str(path)
        self.field = field


# ---------------------------------------------------------------- scene PLY


def write_scene_ply(path, scene: GaussianScene, binary: bool = True) -> None:
    names = SCENE_FIELDS + (SH1_FIELDS if scene.sh1 is not None else [])
    cols = [scene.means, scene.log_scales, scene.rotations, scene.opacity_logits[:, None], scene.colors]
    if scene.sh1 is not None:
        cols.append(scene.sh1.reshape(len(scene), 9))  # f_rest_{3c + k} = sh1[c, k]
    data = np.concatenate(cols, axis=1).astype("<f4")
    rec = np.empty(len(scene), dtype=[(n, "<f4") for n in names])
    for j, n in enumerate(names):
        rec[n] = data[:, j]
    el = PlyElement.describe(rec, "vertex")
    PlyData([el], text=not binary, byte_order="<").write(str(path))


def _vertex(path) -> np.ndarray:
    try:
        ply = PlyData.read(str(path))
    except FileNotFoundError:
        raise
    except Exception as exc:  # plyfile raises assorted parse errors
        raise FormatError(path, "header", f"not a readable PLY ({exc})") from exc
    if "vertex" not in ply:
        raise FormatError(path, "vertex", "no vertex element")
    return ply["vertex"].data


def read_scene_ply(path, scene_extent: Optional[float] = None, dc_is_sh: bool = False) -> GaussianScene:
    """Load a scene file. ``dc_is_sh`` converts SH-DC checkpoints to base colour."""
    v = _vertex(path)
    names = v.dtype.names
    for n in SCENE_FIELDS:
        if n not in names:
            raise FormatError(path, n, "missing property")
    col = lambda n: np.asarray(v[n], dtype=np.float64)  # noqa: E731
    for n in SCENE_FIELDS:
        if not np.all(np.isfinite(col(n))):
            raise FormatError(path, n, "non-finite value")
    rot = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)
    if len(rot) and np.linalg.norm(rot, axis=1).min() <= 1e-6:
        raise FormatError(path, "rot_0", "quaternion norm <= 1e-6 cannot be renormalized")
    rest = sorted((n for n in names if n.startswith("f_rest_")), key=lambda n: int(n[7:]))
    sh1 = None
    if rest:
        per_ch = len(rest) // 3
        if per_ch < 3 or len(rest) % 3:
            raise FormatError(path, rest[0], f"{len(rest)} f_rest properties; expected 9 or a 3-channel multiple")
        if per_ch > 3:
            warnings.warn(f"{path}: SH coefficients above degree 1 ignored", RuntimeWarning)
        sh1 = np.stack([np.stack([col(f"f_rest_{c * per_ch + k}") for k in range(3)], axis=1) for c in range(3)],
                       axis=1)
    colors = np.stack([col(f"f_dc_{i}") for i in range(3)], axis=1)
    if dc_is_sh:
        colors = 0.5 + SH_C0 * colors
    means = np.stack([col("x"), col("y"), col("z")], axis=1)
    if len(means) == 0:
        raise FormatError(path, "vertex", "empty scene")
    return GaussianScene(
        means=means,
        log_scales=np.stack([col(f"scale_{i}") for i in range(3)], axis=1),
        rotations=rot,
        opacity_logits=col("opacity"),
        colors=colors,
        sh1=sh1,
        scene_extent=bounding_radius(means) if scene_extent is None else scene_extent,
    )


# ---------------------------------------------------------------- point clouds


def write_points_ply(path, points: np.ndarray) -> None:
    p = np.asarray(points, dtype="<f4").reshape(-1, 3)
    rec = np.empty(len(p), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4")])
    rec["x"], rec["y"], rec["z"] = p[:, 0], p[:, 1], p[:, 2]
    PlyData([PlyElement.describe(rec, "vertex")], text=True).write(str(path))


def read_points_ply(path) -> np.ndarray:
    v = _vertex(path)
    for n in "xyz":
        if n not in v.dtype.names:
            raise FormatError(path, n, "missing property")
    return np.stack([np.asarray(v[n], dtype=np.float64) for n in "xyz"], axis=1)


# ---------------------------------------------------------------- images


def write_ppm(path, image: np.ndarray) -> None:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM needs an (H, W, 3) image")
    data = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(path, "header", "truncated PPM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P6":
        raise FormatError(path, "magic", f"expected P6, got {tokens[0]!r}")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(path, "maxval", "only 8-bit PPM is supported")
    body = raw[pos + 1 : pos + 1 + w * h * 3]
    if len(body) != w * h * 3:
        raise FormatError(path, "data", "truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


TGSF_MAGIC = b"TGSF"


def write_tgsf(path, data: np.ndarray) -> None:
    """Little-endian float32 map with a 16-byte header: magic, width, height, channels."""
    a = np.asarray(data)
    if a.ndim == 2:
        a = a[..., None]
    h, w, c = a.shape
    with open(path, "wb") as fh:
        fh.write(TGSF_MAGIC + struct.pack("<III", w, h, c))
        fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_tgsf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != TGSF_MAGIC:
        raise FormatError(path, "magic", "not a TGSF file")
    w, h, c = struct.unpack("<III", raw[4:16])
    body = raw[16:]
    if len(body) != 4 * w * h * c:
        raise FormatError(path, "data", f"expected {w}x{h}x{c} float32 values")
    out = np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(np.float64)
    return out[..., 0] if c == 1 else out


# ---------------------------------------------------------------- cameras


def cameras_to_list(cameras: Sequence[Camera]) -> List[dict]:
    return [
        {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy, "width": c.width, "height": c.height,
         "world_to_camera": np.asarray(c.world_to_camera).tolist()}
        for c in cameras
    ]


def write_cameras(path, cameras: Sequence[Camera]) -> None:
    Path(path).write_text(json.dumps(cameras_to_list(cameras), indent=1) + "\n")


def read_cameras(path) -> List[Camera]:
    try:
        items = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(path, "json", str(exc)) from exc
    if not isinstance(items, list) or not items:
        raise FormatError(path, "cameras", "expected a non-empty list")
    cams = []
    for k, it in enumerate(items):
        for key in ("fx", "fy", "cx", "cy", "width", "height", "world_to_camera"):
            if key not in it:
                raise FormatError(path, f"[{k}].{key}", "missing")
        try:
            cams.append(Camera(float(it["fx"]), float(it["fy"]), float(it["cx"]), float(it["cy"]),
                               np.array(it["world_to_camera"], dtype=np.float64),
                               int(it["width"]), int(it["height"])))
        except (ValueError, TypeError) as exc:
            raise FormatError(path, f"[{k}]", str(exc)) from exc
    return cams


# ---------------------------------------------------------------- flat configs


def _parse_value(text: str):
    t = text.strip()
    if t.lower() in ("none", "null", ""):
        return None
    if t.lower() in ("true", "false"):
        return t.lower() == "true"
    try:
        return ast.literal_eval(t)
    except (ValueError, SyntaxError):
        return t


def parse_config(text: str, source: str = "<config>") -> Dict[str, object]:
    """``section.key = value`` lines; ``#`` starts a comment."""
    out: Dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(source, f"line {lineno}", "expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(source, f"line {lineno}", "empty key")
        out[key] = _parse_value(value)
    return out


def read_config(path) -> Dict[str, object]:
    return parse_config(Path(path).read_text(), str(path))


def build_configs(values: Dict[str, object], source: str = "<config>"):
    """Split ``section.key`` entries into the dataclass configs of each stage."""
    from .densify import DensifyConfig
    from .georeg import NormalConfig, TrainConfig
    from .trim import TrimConfig

    sections = {"train": TrainConfig, "normal": NormalConfig, "densify": DensifyConfig, "trim": TrimConfig}
    kwargs: Dict[str, dict] = {s: {} for s in sections}
    for key, val in values.items():
        sec, _, name = key.partition(".")
        if sec not in sections:
            raise FormatError(source, key, f"unknown section; expected one of {sorted(sections)}")
        allowed = {f.name for f in fields(sections[sec])}
        if name not in allowed:
            raise FormatError(source, key, "unknown key")
        kwargs[sec][name] = val
    out = {}
    for sec, cls in sections.items():
        try:
            out[sec] = cls(**kwargs[sec])
        except (TypeError, ValueError) as exc:
            raise FormatError(source, sec, str(exc)) from exc
    return out


# ---------------------------------------------------------------- scene bundles


def write_bundle(directory, syn, init: GaussianScene, seed: int = 0) -> None:
    d = Path(directory)
    (d / "targets").mkdir(parents=True, exist_ok=True)
    write_cameras(d / "cameras.json", syn.cameras)
    for k, t in enumerate(syn.targets):
        write_ppm(d / "targets" / f"view_{k:03d}.ppm", t)
        write_tgsf(d / "targets" / f"view_{k:03d}.tgsf", t)
    write_points_ply(d / "gt_points.ply", syn.gt_points)
    write_scene_ply(d / "init.ply", init)
    write_scene_ply(d / "gt_scene.ply", syn.gt_scene)
    meta = {"kind": syn.kind, "seed": seed, "scene_extent": init.scene_extent,
            "surface_sigma": syn.surface_sigma, "floater_ids": [int(i) for i in syn.floater_ids],
            "params": {f.name: getattr(syn.params, f.name) for f in fields(syn.params)}}
    (d / "meta.json").write_text(json.dumps(meta, indent=1) + "\n")


def read_bundle(directory):
    """Returns ``(initial scene, cameras, targets, meta)``; float targets win over PPM."""
    d = Path(directory)
    if not d.is_dir():
        raise FormatError(d, "bundle", "not a directory")
    meta_path = d / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    cams = read_cameras(d / "cameras.json")
    targets = []
    for k in range(len(cams)):
        tg = d / "targets" / f"view_{k:03d}.tgsf"
        pp = d / "targets" / f"view_{k:03d}.ppm"
        if tg.exists():
            targets.append(read_tgsf(tg))
        elif pp.exists():
            targets.append(read_ppm(pp))
        else:
            raise FormatError(d / "targets", f"view_{k:03d}", "missing target image")
        if targets[-1].shape != (cams[k].height, cams[k].width, 3):
            raise FormatError(d / "targets", f"view_{k:03d}", "image size differs from its camera")
    scene = read_scene_ply(d / "init.ply", scene_extent=meta.get("scene_extent"))
    return scene, cams, targets, meta
