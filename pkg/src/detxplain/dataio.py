"""File formats: SAL1 saliency files, dataset directories, key-value configs.

SAL1 layout: magic ``SAL1``, then height and width as 32-bit unsigned
little-endian integers, then height*width IEEE-754 float32 little-endian
values in row-major order. Values may be signed (relevance maps).
"""

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import DataError
from .imaging import BBox, Image

SAL1_MAGIC = b"SAL1"


def write_sal(path, values: np.ndarray) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("SAL1 payload must be 2-D")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(SAL1_MAGIC)
        fh.write(struct.pack("<II", h, w))
        fh.write(values.astype("<f4").tobytes(order="C"))


def read_sal(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != SAL1_MAGIC:
        raise DataError(f"{path}: not a SAL1 file")
    h, w = struct.unpack("<II", raw[4:12])
    expected = 12 + 4 * h * w
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw[12:], dtype="<f4").reshape(h, w)
    return values.astype(np.float64)


def write_image_png(path, data: np.ndarray) -> None:
    """Store an intensity array in [0, 1] as 8-bit grayscale PNG."""
    q = np.clip(np.rint(np.asarray(data) * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(q, mode="L").save(path, format="PNG")


def read_image_png(path) -> np.ndarray:
    try:
        with PILImage.open(path) as img:
            arr = np.asarray(img.convert("L"), dtype=np.float64)
    except OSError as exc:
        raise DataError(f"{path}: cannot read image ({exc})") from exc
    return arr / 255.0


def write_dataset(out_dir, scenes) -> None:
    """Write scenes as ``images/{id}.png`` plus one ``annotations.json``."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for scene_id, scene in scenes:
        file_name = f"images/{scene_id}.png"
        write_image_png(out_dir / file_name, scene.image.data)
        entries.append({
            "id": scene_id,
            "file": file_name,
            "width": scene.image.width,
            "height": scene.image.height,
            "boxes": [list(b.as_tuple) for b in scene.ground_truth],
        })
    payload = {"images": entries}
    with open(out_dir / "annotations.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(dataset_dir) -> list[Image]:
    """Load every annotated image of a dataset directory, in manifest order."""
    dataset_dir = Path(dataset_dir)
    manifest = dataset_dir / "annotations.json"
    if not manifest.is_file():
        raise DataError(f"{manifest}: annotations file not found")
    try:
        payload = json.loads(manifest.read_text())
        records = payload["images"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"{manifest}: malformed annotations ({exc})") from exc

    images = []
    for rec in records:
        try:
            data = read_image_png(dataset_dir / rec["file"])
            boxes = [BBox(*map(int, b)) for b in rec["boxes"]]
            img = Image(data=data, boxes=boxes, image_id=str(rec["id"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{manifest}: bad record {rec.get('id', '?')} ({exc})") from exc
        if (img.height, img.width) != (rec["height"], rec["width"]):
            raise DataError(f"{rec['file']}: size mismatch vs annotations")
        images.append(img)
    return images


def jsonable(obj):
    """Recursively coerce numpy scalars/arrays and tuples to JSON types."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def parse_kv_file(path) -> dict[str, str]:
    """Parse a ``key = value`` text file; '#' starts a comment."""
    result: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"{path}: cannot read config ({exc})") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise DataError(f"{path}:{lineno}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        result[key.strip()] = value.strip()
    return result
