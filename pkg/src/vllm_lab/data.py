"""Deterministic captioned shape images plus controlled corruption.

Every image is a 32x32 RGB rasterization of a :class:`SceneSpec` on a black
background, with no anti-aliasing: a pixel is either fully lit with the
scene color or zero. Rendering and captioning are pure functions of the
spec, so a dataset is reproducible bit-for-bit from its seed.

Geometry (pixel units, positions are (row, col) centers):
  positions   top-left (8,8), top-right (8,24), bottom-left (24,8),
              bottom-right (24,24), center (16,16)
  circle      radius 5 (small) / 10 (large), lit where dr^2+dc^2 <= r^2
  square      half-extent 3 / 6, lit where c-h <= x < c+h per axis
              (exactly 6x6 or 12x12 pixels)
  triangle    half-height 5 / 9, apex up; row dy below the apex spans
              half-width floor(dy/2)
  cross       bar half-length 5 / 10 with half-thickness 1 / 2
Shapes are clipped at the image border.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor
from .rng import Prng

SHAPES = ("circle", "square", "triangle", "cross")
COLORS = ("red", "green", "blue", "white")
SIZES = ("small", "large")
POSITIONS = ("top-left", "top-right", "bottom-left", "bottom-right", "center")

_COLOR_RGB = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "white": (1.0, 1.0, 1.0),
}
_POSITION_CENTER = {
    "top-left": (8, 8),
    "top-right": (8, 24),
    "bottom-left": (24, 8),
    "bottom-right": (24, 24),
    "center": (16, 16),
}
IMAGE_SHAPE = (3, 32, 32)

_ROWS, _COLS = np.mgrid[0:32, 0:32]


@dataclass(frozen=True)
class SceneSpec:
    shape_kind: str
    color: str
    size: str
    position: str

    def __post_init__(self):
        if self.shape_kind not in SHAPES:
            raise ValueError(f"unknown shape {self.shape_kind!r}")
        if self.color not in COLORS:
            raise ValueError(f"unknown color {self.color!r}")
        if self.size not in SIZES:
            raise ValueError(f"unknown size {self.size!r}")
        if self.position not in POSITIONS:
            raise ValueError(f"unknown position {self.position!r}")


@dataclass
class DatasetRecord:
    spec: SceneSpec
    image: Tensor
    caption: str
    corrupted: bool
    record_id: int


@dataclass
class DatasetManifest:
    seed: int
    count: int
    corruption_rate: float
    noise_level: float
    records: list


def all_specs():
    """All 160 scene specs in canonical (shape, color, size, position) order."""
    return [SceneSpec(s, c, z, p)
            for s in SHAPES for c in COLORS for z in SIZES for p in POSITIONS]


def _shape_mask(spec: SceneSpec) -> np.ndarray:
    cr, cc = _POSITION_CENTER[spec.position]
    dr, dc = _ROWS - cr, _COLS - cc
    big = spec.size == "large"
    if spec.shape_kind == "circle":
        r = 10 if big else 5
        return dr * dr + dc * dc <= r * r
    if spec.shape_kind == "square":
        h = 6 if big else 3
        return (-h <= dr) & (dr < h) & (-h <= dc) & (dc < h)
    if spec.shape_kind == "triangle":
        h = 9 if big else 5
        dy = dr + h  # rows below the apex
        half = dy // 2
        return (0 <= dy) & (dy <= 2 * h) & (np.abs(dc) <= half)
    # cross
    length, thick = (10, 2) if big else (5, 1)
    horiz = (np.abs(dr) <= thick) & (np.abs(dc) <= length)
    vert = (np.abs(dc) <= thick) & (np.abs(dr) <= length)
    return horiz | vert


def render(spec: SceneSpec) -> Tensor:
    mask = _shape_mask(spec)
    img = np.zeros(IMAGE_SHAPE, dtype=np.float64)
    for ch, value in enumerate(_COLOR_RGB[spec.color]):
        if value:
            img[ch][mask] = value
    return Tensor(img)


def caption_of(spec: SceneSpec) -> str:
    return f"a {spec.size} {spec.color} {spec.shape_kind} at the {spec.position}"


def parse_caption(caption: str) -> SceneSpec:
    words = caption.split()
    if (len(words) != 7 or words[0] != "a" or words[4] != "at"
            or words[5] != "the"):
        raise ValueError(f"caption does not follow the grammar: {caption!r}")
    return SceneSpec(shape_kind=words[3], color=words[2],
                     size=words[1], position=words[6])


# ----------------------------------------------------------------- corruption

def apply_image_noise(image: Tensor, noise_level: float, rng: Prng) -> Tensor:
    noisy = image.view() + noise_level * rng.normals(image.size).reshape(image.shape)
    return Tensor(np.clip(noisy, 0.0, 1.0))


def swap_caption(spec: SceneSpec, caption: str, rng: Prng) -> str:
    while True:
        other = SceneSpec(rng.choice(SHAPES), rng.choice(COLORS),
                          rng.choice(SIZES), rng.choice(POSITIONS))
        swapped = caption_of(other)
        if swapped != caption:
            return swapped


def corrupt_record(record: DatasetRecord, noise_level: float, rng: Prng,
                   mode: str | None = None) -> DatasetRecord:
    """Corrupt one record: image noise, caption swap, or both (default: an
    equal-probability draw from the rng)."""
    if noise_level < 0:
        raise ValueError("noise_level must be >= 0")
    if mode is None:
        mode = ("noise", "caption", "both")[rng.randrange(3)]
    image, caption = record.image, record.caption
    if mode in ("noise", "both"):
        image = apply_image_noise(image, noise_level, rng)
    if mode in ("caption", "both"):
        caption = swap_caption(record.spec, record.caption, rng)
    return replace(record, image=image, caption=caption, corrupted=True)


def generate_dataset(seed: int, count: int, corruption_rate: float = 0.0,
                     noise_level: float = 0.0) -> DatasetManifest:
    """Draw ``count`` records from a seeded stream. The draw order per record
    is fixed (shape, color, size, position, corruption coin, corruption
    payload) so identical seeds give bit-identical manifests."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = Prng(seed)
    records = []
    for i in range(count):
        spec = SceneSpec(rng.choice(SHAPES), rng.choice(COLORS),
                         rng.choice(SIZES), rng.choice(POSITIONS))
        record = DatasetRecord(spec=spec, image=render(spec),
                               caption=caption_of(spec), corrupted=False,
                               record_id=i)
        if corruption_rate > 0 and rng.bernoulli(corruption_rate):
            record = corrupt_record(record, noise_level, rng)
        records.append(record)
    return DatasetManifest(seed=seed, count=count,
                           corruption_rate=corruption_rate,
                           noise_level=noise_level, records=records)


# ------------------------------------------------------------------- PPM I/O

def write_ppm(path: str, image: Tensor) -> None:
    """Binary P6, maxval 255, RGB interleaved row-major."""
    if image.shape != IMAGE_SHAPE:
        raise ValueError(f"expected image shape {IMAGE_SHAPE}, got {image.shape}")
    img = image.view()
    quantized = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    interleaved = np.transpose(quantized, (1, 2, 0))  # HWC
    with open(path, "wb") as fh:
        fh.write(b"P6\n32 32\n255\n")
        fh.write(interleaved.tobytes())


def read_ppm(path: str) -> Tensor:
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    magic, width, height, maxval = fields
    if magic != b"P6":
        raise ValueError(f"not a P6 file: {path}")
    w, h, mv = int(width), int(height), int(maxval)
    if (w, h, mv) != (32, 32, 255):
        raise ValueError(f"unsupported PPM geometry {w}x{h} maxval {mv}")
    raw = np.frombuffer(blob[pos:pos + w * h * 3], dtype=np.uint8)
    if raw.size != w * h * 3:
        raise ValueError(f"truncated PPM payload in {path}")
    img = raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0
    return Tensor(img)


# ------------------------------------------------------------- dataset export

_MANIFEST_COLUMNS = ("record_id", "caption", "corrupted",
                     "shape_kind", "color", "size", "position")


def export_dataset(manifest: DatasetManifest, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = ["# seed=%d count=%d corruption_rate=%r noise_level=%r"
             % (manifest.seed, manifest.count, manifest.corruption_rate,
                manifest.noise_level),
             "\t".join(_MANIFEST_COLUMNS)]
    for rec in manifest.records:
        lines.append("\t".join([
            str(rec.record_id), rec.caption, str(int(rec.corrupted)),
            rec.spec.shape_kind, rec.spec.color, rec.spec.size,
            rec.spec.position]))
        write_ppm(os.path.join(out_dir, f"img_{rec.record_id}.ppm"), rec.image)
    with open(os.path.join(out_dir, "manifest.tsv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def import_dataset(in_dir: str) -> DatasetManifest:
    with open(os.path.join(in_dir, "manifest.tsv")) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    meta = dict(kv.split("=", 1) for kv in lines[0].lstrip("# ").split())
    header = tuple(lines[1].split("\t"))
    if header != _MANIFEST_COLUMNS:
        raise ValueError(f"unexpected manifest columns: {header}")
    records = []
    for ln in lines[2:]:
        rid, caption, corrupted, shape, color, size, position = ln.split("\t")
        spec = SceneSpec(shape, color, size, position)
        image = read_ppm(os.path.join(in_dir, f"img_{rid}.ppm"))
        records.append(DatasetRecord(spec=spec, image=image, caption=caption,
                                     corrupted=bool(int(corrupted)),
                                     record_id=int(rid)))
    return DatasetManifest(seed=int(meta["seed"]), count=int(meta["count"]),
                           corruption_rate=float(meta["corruption_rate"]),
                           noise_level=float(meta["noise_level"]),
                           records=records)
