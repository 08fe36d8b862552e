"""File formats: depth maps, sparse samples, images, scene manifests and
deterministic named-array containers. See docs/formats.md."""

from __future__ import annotations

import io
import json
import re
import zipfile
from pathlib import Path

import numpy as np
from PIL import Image

from mvprior.camera import Intrinsics, Pose, Scene, View, orthonormalize
from mvprior.depth_align import DepthMap, SparseDepthSamples
from mvprior.errors import SceneLoadError, ValidationError

# fixed zip timestamp so identical arrays give identical bytes
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


# --- depth maps -----------------------------------------------------------


def write_pfm(path, array):
    """Single-channel little-endian PFM, rows stored bottom to top."""
    array = np.asarray(array, dtype="<f4")
    if array.ndim != 2:
        raise ValidationError("PFM writer handles single-channel maps only")
    h, w = array.shape
    with open(path, "wb") as f:
        f.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(array[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ValidationError(f"{path}: not a PFM file")
        dims = f.readline()
        m = re.match(rb"^\s*(\d+)\s+(\d+)\s*$", dims)
        if not m:
            raise ValidationError(f"{path}: malformed PFM dimensions")
        w, h = int(m.group(1)), int(m.group(2))
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype)
    shape = (h, w) if channels == 1 else (h, w, 3)
    if data.size != np.prod(shape):
        raise ValidationError(f"{path}: PFM payload has {data.size} values, expected {np.prod(shape)}")
    return data.reshape(shape)[::-1].astype(np.float64)


def read_depth(path) -> DepthMap:
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        return DepthMap(read_pfm(path))
    if path.suffix.lower() == ".npy":
        return DepthMap(np.load(path, allow_pickle=False))
    raise ValidationError(f"{path}: unsupported depth format (use .pfm or .npy)")


def write_depth(path, depth: DepthMap):
    path = Path(path)
    values = np.where(depth.mask, depth.values, 0.0)
    if path.suffix.lower() == ".npy":
        np.save(path, values.astype(np.float32), allow_pickle=False)
    else:
        write_pfm(path, values)


# --- sparse samples -------------------------------------------------------


def read_samples(path) -> SparseDepthSamples:
    """CSV with header ``row,col,depth``."""
    with open(path) as f:
        header = f.readline().strip().replace(" ", "")
        if header != "row,col,depth":
            raise ValidationError(f"{path}: expected header 'row,col,depth', got {header!r}")
        data = np.loadtxt(f, delimiter=",", ndmin=2)
    if data.size == 0:
        return SparseDepthSamples([], [], [])
    if data.shape[1] != 3:
        raise ValidationError(f"{path}: expected 3 columns")
    return SparseDepthSamples(data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2])


def write_samples(path, samples: SparseDepthSamples):
    with open(path, "w") as f:
        f.write("row,col,depth\n")
        for r, c, d in zip(samples.rows, samples.cols, samples.depths):
            f.write(f"{int(r)},{int(c)},{float(d)!r}\n")


# --- images ---------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """8-bit image to (H, W, 3) float in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def to_uint8(image) -> np.ndarray:
    return np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, image):
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


# --- named array containers ---------------------------------------------


def write_arrays(path, arrays: dict):
    """Uncompressed ``.npz`` with fixed member timestamps, byte-stable for
    identical inputs. Readable with ``numpy.load``."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in arrays:
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def read_arrays(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        return {k: data[k] for k in data.files}


def write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")


def save_warp(path, result, preview=True):
    """Store a WarpResult as named channels plus an optional PNG preview."""
    path = Path(path)
    write_arrays(
        path,
        {
            "rgb": result.rgb.astype(np.float32),
            "ccm": result.ccm.astype(np.float32),
            "zbuffer": result.zbuffer.astype(np.float32),
            "mask": result.mask,
            "srcidx": result.srcidx.astype(np.int32),
        },
    )
    if preview:
        write_image(path.with_suffix(".png"), result.rgb)


def load_warp(path):
    from mvprior.warp import WarpResult

    a = read_arrays(path)
    return WarpResult(
        a["rgb"].astype(np.float64),
        a["ccm"].astype(np.float64),
        a["zbuffer"].astype(np.float64),
        a["mask"].astype(bool),
        a["srcidx"].astype(np.int64),
    )


# --- scene manifests ------------------------------------------------------

VIEW_FIELDS = ("fx", "fy", "cx", "cy", "width", "height", "rotation", "translation")


def _view_from_record(rec, base: Path, index: int, max_drift: float) -> View:
    missing = [k for k in VIEW_FIELDS if k not in rec]
    if missing:
        raise SceneLoadError(f"missing fields {missing}", index)
    try:
        K = Intrinsics(rec["fx"], rec["fy"], rec["cx"], rec["cy"], rec["width"], rec["height"])
        rot = np.asarray(rec["rotation"], dtype=np.float64)
        if rot.size != 9:
            raise ValidationError("rotation needs 9 values (row-major)")
        pose = Pose(orthonormalize(rot.reshape(3, 3), max_drift), rec["translation"])
    except (ValidationError, TypeError, ValueError) as exc:
        raise SceneLoadError(str(exc), index) from exc

    def resolve(key):
        name = rec.get(key)
        if name is None:
            return None
        p = base / name
        if not p.is_file():
            raise SceneLoadError(f"{key} file not found: {p}", index)
        return p

    try:
        image = depth = mono = samples = None
        if (p := resolve("image")) is not None:
            image = read_image(p)
            if image.shape[:2] != K.shape:
                raise ValidationError(f"image is {image.shape[1]}x{image.shape[0]}, camera says {K.width}x{K.height}")
        if (p := resolve("depth")) is not None:
            d = read_depth(p)
            if d.shape != K.shape:
                raise ValidationError("depth map size does not match the camera")
            kind = rec.get("depth_kind", "metric")
            if kind == "metric":
                depth = d
            elif kind == "mono":
                mono = d
            else:
                raise ValidationError(f"depth_kind must be 'metric' or 'mono', got {kind!r}")
        if (p := resolve("samples")) is not None:
            samples = read_samples(p)
            samples.check_bounds(K.shape)
    except (ValidationError, OSError) as exc:
        raise SceneLoadError(str(exc), index) from exc
    return View(K, pose, image=image, depth=depth, mono_depth=mono, samples=samples, name=rec.get("name", str(index)))


def load_manifest(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise SceneLoadError(f"manifest not found: {path}")
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise SceneLoadError(f"malformed manifest JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("views"), list):
        raise SceneLoadError("manifest must be an object with a 'views' list")
    return doc


def load_scene(path, max_drift: float = 1e-4) -> Scene:
    """Load and validate a scene manifest; file paths are relative to it."""
    path = Path(path)
    doc = load_manifest(path)
    views = [_view_from_record(rec, path.parent, i, max_drift) for i, rec in enumerate(doc["views"])]
    try:
        return Scene(views, doc.get("reference", []), doc.get("target", []))
    except ValidationError as exc:
        raise SceneLoadError(str(exc)) from exc


def view_record(view: View, **paths) -> dict:
    K, pose = view.intrinsics, view.pose
    rec = {
        "name": view.name,
        "fx": K.fx,
        "fy": K.fy,
        "cx": K.cx,
        "cy": K.cy,
        "width": K.width,
        "height": K.height,
        "rotation": [float(x) for x in pose.rotation.ravel()],
        "translation": [float(x) for x in pose.translation],
    }
    rec.update({k: v for k, v in paths.items() if v is not None})
    return rec


def save_scene(directory, scene: Scene, scene_id="scene", config=None) -> Path:
    """Write every attachment plus ``manifest.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for i, v in enumerate(scene.views):
        paths = {}
        if v.image is not None:
            paths["image"] = f"view{i:03d}.png"
            write_image(directory / paths["image"], v.image)
        if v.depth is not None:
            paths["depth"] = f"view{i:03d}_depth.pfm"
            paths["depth_kind"] = "metric"
            write_depth(directory / paths["depth"], v.depth)
        elif v.mono_depth is not None:
            paths["depth"] = f"view{i:03d}_mono.pfm"
            paths["depth_kind"] = "mono"
            write_depth(directory / paths["depth"], v.mono_depth)
        if v.samples is not None:
            paths["samples"] = f"view{i:03d}_samples.csv"
            write_samples(directory / paths["samples"], v.samples)
        records.append(view_record(v, **paths))
    doc = {
        "scene_id": scene_id,
        "views": records,
        "reference": list(scene.reference_indices),
        "target": list(scene.target_indices),
    }
    if config:
        doc["config"] = config
    write_json(directory / "manifest.json", doc)
    return directory / "manifest.json"
