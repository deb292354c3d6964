"""Images, class taxonomies and label maps.

A label map is a ``(height, width)`` grid of integer class ids.  Everything
downstream (features, tracking, complexity) consumes label maps; this module
owns their construction, validation, gray-scale encoding and file I/O.

Label maps are stored on disk as binary PGM (``P5``, maxval 255) with the raw
class id in every byte, so a saved map is bit-exact.  8-bit grayscale PNG is
accepted on load.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

DROP = "drop"

# refuse headers that would allocate absurd buffers
MAX_PIXELS = 1 << 28

# channel weights
_GAMMA = 2.2
_G_WEIGHT = 1.5
_B_WEIGHT = 0.6
_GRAY_DENOM = 1.0 + _G_WEIGHT**_GAMMA + _B_WEIGHT**_GAMMA


class FormatError(ValueError):
    """Malformed or out-of-contract image / label-map file."""


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True, eq=False)
class RgbImage:
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"RGB pixels must have shape (h, w, 3), got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("RGB image must be at least 1x1")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("RGB channel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, RgbImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class GrayImage:
    pixels: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"gray pixels must have shape (h, w), got {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("gray values must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class TaxonomyEntry:
    id: int
    name: str
    gray: int
    critical: bool = False


@dataclass(frozen=True)
class ClassTaxonomy:
    entries: tuple[TaxonomyEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise ValueError("taxonomy must have at least one class")
        for i, e in enumerate(entries):
            if e.id != i:
                raise ValueError(f"class ids must be contiguous from 0; position {i} holds id {e.id}")
            if not 0 <= e.gray <= 255:
                raise ValueError(f"gray value {e.gray} of class {e.name!r} outside [0, 255]")
            if i and e.gray <= entries[i - 1].gray:
                raise ValueError("gray values must strictly increase with class id")
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def grays(self) -> np.ndarray:
        return np.array([e.gray for e in self.entries], dtype=np.int64)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def id_of(self, name: str) -> int:
        for e in self.entries:
            if e.name == name:
                return e.id
        raise KeyError(f"no class named {name!r} in taxonomy")

    def name_of(self, class_id: int) -> str:
        return self.entries[class_id].name

    @classmethod
    def from_names(cls, names: Sequence[str], critical: Iterable[str] = ()) -> "ClassTaxonomy":
        """Taxonomy with evenly spaced gray values ``floor(255 * id / (k - 1))``."""
        crit = set(critical)
        k = len(names)
        span = max(k - 1, 1)
        return cls(tuple(
            TaxonomyEntry(i, n, (255 * i) // span, n in crit) for i, n in enumerate(names)
        ))

    def to_json(self) -> list[dict]:
        return [{"id": e.id, "name": e.name, "gray": e.gray, "critical": e.critical}
                for e in self.entries]

    @classmethod
    def from_json(cls, data: list[dict]) -> "ClassTaxonomy":
        if not isinstance(data, list):
            raise ValueError("taxonomy JSON must be an array")
        try:
            entries = sorted(
                (TaxonomyEntry(int(d["id"]), str(d["name"]), int(d["gray"]), bool(d.get("critical", False)))
                 for d in data),
                key=lambda e: e.id,
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed taxonomy entry: {exc}") from exc
        return cls(tuple(entries))


# Ids named in the dataset's class table are fixed; the rest fill the gaps.
DEFAULT_CLASSES = (
    ("Background", False),
    ("Barrier", True),
    ("Guardrail", False),
    ("Building", False),
    ("Pedestrian", True),
    ("Sign", True),
    ("Signboard", False),
    ("Car", True),
    ("nmt", True),
    ("Zebra line", True),
    ("infra", False),
    ("Sidewalk", False),
    ("Road line", True),
    ("Tunnel", False),
    ("Bridge", False),
    ("Tree", False),
    ("Median", False),
    ("Terrain", False),
    ("road", False),
    ("Ramp", False),
    ("Wall", False),
    ("Traffic cone", True),
    ("pole", False),
)

# Cityscapes train classes with 0 reserved for void
CITYSCAPES_CLASSES = (
    "void", "road", "sidewalk", "building", "wall", "fence", "pole",
    "traffic light", "traffic sign", "vegetation", "terrain", "sky", "person",
    "rider", "car", "truck", "bus", "train", "motorcycle", "bicycle",
)

_CITYSCAPES_TO_DEFAULT = {
    "void": "Background", "road": "road", "sidewalk": "Sidewalk", "building": "Building",
    "wall": "Wall", "fence": "Barrier", "pole": "pole", "traffic light": "Sign",
    "traffic sign": "Signboard", "vegetation": "Tree", "terrain": "Terrain", "sky": DROP,
    "person": "Pedestrian", "rider": "nmt", "car": "Car", "truck": "Car", "bus": "Car",
    "train": "Car", "motorcycle": "nmt", "bicycle": "nmt",
}


def default_taxonomy() -> ClassTaxonomy:
    return ClassTaxonomy.from_names([n for n, _ in DEFAULT_CLASSES],
                                    critical=[n for n, c in DEFAULT_CLASSES if c])


def cityscapes_taxonomy() -> ClassTaxonomy:
    return ClassTaxonomy.from_names(CITYSCAPES_CLASSES)


@dataclass(frozen=True, eq=False)
class LabelMap:
    cells: np.ndarray  # (height, width) integer class ids

    def __post_init__(self):
        c = np.asarray(self.cells)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise ValueError(f"label map cells must have shape (h, w), got {c.shape}")
        if not np.issubdtype(c.dtype, np.integer):
            if not np.all(np.equal(np.mod(c, 1), 0)):
                raise ValueError("label map cells must be integers")
        if c.size and c.min() < 0:
            raise ValueError("class ids must be nonnegative")
        c = c.astype(np.int64, copy=True)
        c.flags.writeable = False
        object.__setattr__(self, "cells", c)

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    def histogram(self, k: int) -> np.ndarray:
        return np.bincount(self.cells.ravel(), minlength=k)

    def validate(self, tax: ClassTaxonomy) -> "LabelMap":
        top = int(self.cells.max())
        if top >= len(tax):
            raise ValueError(f"class id {top} not in taxonomy of {len(tax)} classes")
        return self

    def __eq__(self, other):
        return isinstance(other, LabelMap) and np.array_equal(self.cells, other.cells)


@dataclass(frozen=True)
class ClassMigrationMap:
    """Rewrite rules ``source id -> target id`` (or ``DROP``)."""

    rules: Mapping[int, int | str] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for src, dst in dict(self.rules).items():
            if dst != DROP and (not isinstance(dst, (int, np.integer)) or dst < 0):
                raise ValueError(f"rule for class {src}: target must be a class id or 'drop', got {dst!r}")
            clean[int(src)] = DROP if dst == DROP else int(dst)
        object.__setattr__(self, "rules", clean)

    def is_total(self, source: ClassTaxonomy) -> bool:
        return all(e.id in self.rules for e in source)

    @classmethod
    def identity(cls, tax: ClassTaxonomy) -> "ClassMigrationMap":
        return cls({e.id: e.id for e in tax})

    @classmethod
    def from_json(cls, data: Mapping[str, int | str]) -> "ClassMigrationMap":
        if not isinstance(data, Mapping):
            raise ValueError("migration rules JSON must be an object")
        rules = {}
        for k, v in data.items():
            try:
                src = int(k)
            except ValueError as exc:
                raise ValueError(f"migration source {k!r} is not a class id") from exc
            if isinstance(v, str):
                if v.lower() != DROP:
                    raise ValueError(f"migration target {v!r} for class {src} must be an id or 'drop'")
                rules[src] = DROP
            else:
                rules[src] = v
        return cls(rules)

    def to_json(self) -> dict[str, int | str]:
        return {str(k): v for k, v in sorted(self.rules.items())}


def cityscapes_migration() -> ClassMigrationMap:
    src = cityscapes_taxonomy()
    dst = default_taxonomy()
    return ClassMigrationMap({
        src.id_of(s): (DROP if t == DROP else dst.id_of(t)) for s, t in _CITYSCAPES_TO_DEFAULT.items()
    })


def rgb_to_gray(img: RgbImage, mode: str = "normalized") -> GrayImage:
    """Weighted gamma-space gray level of every pixel.

    ``normalized`` takes the 2.2-root of the weighted mean of 2.2-powers, so an
    achromatic pixel maps to itself.  ``literal`` takes the square root as the
    formula is usually printed and clamps the (out of range) result to 255.
    """
    if mode == "normalized":
        expo = 1.0 / _GAMMA
    elif mode == "literal":
        expo = 0.5
    else:
        raise ValueError(f"unknown gray mode {mode!r}")
    px = img.pixels.astype(np.float64)
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    num = r**_GAMMA + (_G_WEIGHT * g) ** _GAMMA + (_B_WEIGHT * b) ** _GAMMA
    out = _round_half_away((num / _GRAY_DENOM) ** expo)
    return GrayImage(np.clip(out, 0, 255).astype(np.uint8))


def _nearest_class_lut(tax: ClassTaxonomy) -> np.ndarray:
    grays = tax.grays
    levels = np.arange(256)[:, None]
    # argmin returns the first minimum, i.e. the lower class id on ties
    return np.argmin(np.abs(levels - grays[None, :]), axis=1)


def gray_to_labelmap(img: GrayImage, tax: ClassTaxonomy) -> LabelMap:
    return LabelMap(_nearest_class_lut(tax)[img.pixels])


def labelmap_to_gray(m: LabelMap, tax: ClassTaxonomy) -> GrayImage:
    m.validate(tax)
    return GrayImage(tax.grays[m.cells].astype(np.uint8))


def migrate(m: LabelMap, rules: ClassMigrationMap, target: ClassTaxonomy) -> LabelMap:
    present = np.unique(m.cells)
    missing = [int(c) for c in present if int(c) not in rules.rules]
    if missing:
        raise ValueError(f"no migration rule for source class {missing[0]}")
    lut = np.zeros(int(present.max()) + 1, dtype=np.int64)
    for c in present:
        dst = rules.rules[int(c)]
        lut[c] = 0 if dst == DROP else dst
    return LabelMap(lut[m.cells]).validate(target)


# --- file I/O -----------------------------------------------------------------

def _read_netpbm_header(data: bytes, magic: bytes) -> tuple[int, int, int, int]:
    """Return (width, height, maxval, payload offset)."""
    if data[:2] != magic:
        raise FormatError(f"expected magic {magic.decode()}, got {data[:2]!r}")
    pos = 2
    fields = []
    n = len(data)
    while len(fields) < 3:
        while pos < n and (data[pos : pos + 1].isspace() or data[pos : pos + 1] == b"#"):
            if data[pos : pos + 1] == b"#":
                while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise FormatError("malformed header: expected a decimal number")
        fields.append(int(data[start:pos]))
    if pos >= n or not data[pos : pos + 1].isspace():
        raise FormatError("malformed header: missing whitespace before raster")
    w, h, maxval = fields
    if w < 1 or h < 1:
        raise FormatError(f"invalid dimensions {w}x{h}")
    if w * h > MAX_PIXELS:
        raise FormatError(f"dimensions {w}x{h} exceed the {MAX_PIXELS}-pixel limit")
    if not 1 <= maxval <= 255:
        raise FormatError(f"only 8-bit rasters are supported (maxval {maxval})")
    return w, h, maxval, pos + 1


def _read_raster(path: Path, magic: bytes, channels: int) -> np.ndarray:
    data = path.read_bytes()
    w, h, maxval, off = _read_netpbm_header(data, magic)
    need = w * h * channels
    payload = data[off : off + need]
    if len(payload) < need:
        raise FormatError(f"{path}: truncated raster ({len(payload)} of {need} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8)
    if arr.max(initial=0) > maxval:
        raise FormatError(f"{path}: sample exceeds maxval {maxval}")
    return arr.reshape((h, w, channels) if channels > 1 else (h, w))


def _write_raster(path: Path, magic: bytes, arr: np.ndarray) -> None:
    h, w = arr.shape[:2]
    header = b"%s\n%d %d\n255\n" % (magic, w, h)
    path.write_bytes(header + np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def _read_png(path: Path, mode: str) -> np.ndarray:
    from PIL import Image

    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise FormatError(f"{path}: not a PNG file")
            if im.mode != mode:
                raise FormatError(f"{path}: expected PNG mode {mode}, got {im.mode}")
            if im.width * im.height > MAX_PIXELS:
                raise FormatError(f"{path}: image too large")
            return np.asarray(im, dtype=np.uint8).copy()
    except (OSError, SyntaxError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise FormatError(f"{path}: unreadable PNG ({exc})") from exc


def load_labelmap(path, tax: ClassTaxonomy | None = None) -> LabelMap:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic.startswith(b"P5"):
        cells = _read_raster(path, b"P5", 1)
    elif magic.startswith(b"\x89PNG"):
        cells = _read_png(path, "L")
    else:
        raise FormatError(f"{path}: not a binary PGM or PNG label map")
    m = LabelMap(cells)
    if tax is not None:
        try:
            m.validate(tax)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    return m


def save_labelmap(m: LabelMap, path) -> None:
    if m.cells.max() > 255:
        raise ValueError("class ids above 255 cannot be stored in an 8-bit label map")
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(np.ascontiguousarray(m.cells, dtype=np.uint8)).save(path)
    else:
        _write_raster(path, b"P5", m.cells.astype(np.uint8))


def load_gray(path) -> GrayImage:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic.startswith(b"P5"):
        return GrayImage(_read_raster(path, b"P5", 1))
    if magic.startswith(b"\x89PNG"):
        return GrayImage(_read_png(path, "L"))
    raise FormatError(f"{path}: not a binary PGM or PNG gray image")


def save_gray(img: GrayImage, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(img.pixels).save(path)
    else:
        _write_raster(path, b"P5", img.pixels)


def load_rgb(path) -> RgbImage:
    """Binary PPM (``P6``) or 8-bit RGB PNG."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic.startswith(b"P6"):
        return RgbImage(_read_raster(path, b"P6", 3))
    if magic.startswith(b"\x89PNG"):
        return RgbImage(_read_png(path, "RGB"))
    raise FormatError(f"{path}: not a binary PPM or RGB PNG")


def save_rgb(img: RgbImage, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(img.pixels).save(path)
    else:
        _write_raster(path, b"P6", img.pixels)


def load_taxonomy(path) -> ClassTaxonomy:
    with open(path) as fh:
        return ClassTaxonomy.from_json(json.load(fh))


def load_migration(path) -> ClassMigrationMap:
    with open(path) as fh:
        return ClassMigrationMap.from_json(json.load(fh))
