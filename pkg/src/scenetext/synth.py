"""Deterministic blocky driving scenes with ground truth.

Scenes are drawn directly as label maps: a background band above the horizon,
the road below it with three lanes, road-type specific infrastructure, and
rectangular conflict objects that move at constant pixel velocity.  An RGB
stub colours every class from a fixed palette, with the traffic-light lamp lit
in the requested colour.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import LabeledDataset, extract_features, feature_names, write_feature_csv
from .labelmap import ClassTaxonomy, LabelMap, RgbImage, default_taxonomy, save_labelmap, save_rgb
from .scenario import SCENARIO_NAMES, RoadType, ScenarioLabel

LIGHT_RGB = {"red": (225, 30, 30), "green": (30, 200, 70), "yellow": (235, 200, 25)}
HOUSING_RGB = (35, 35, 35)

PALETTE = {
    "Background": (70, 130, 180), "Barrier": (190, 153, 153), "Guardrail": (180, 165, 180),
    "Building": (70, 70, 70), "Pedestrian": (220, 20, 60), "Sign": HOUSING_RGB,
    "Signboard": (220, 220, 0), "Car": (0, 0, 142), "nmt": (119, 11, 32),
    "Zebra line": (240, 240, 240), "infra": (150, 100, 100), "Sidewalk": (244, 35, 232),
    "Road line": (255, 255, 255), "Tunnel": (90, 90, 60), "Bridge": (150, 120, 90),
    "Tree": (107, 142, 35), "Median": (81, 0, 81), "Terrain": (152, 251, 152),
    "road": (128, 64, 128), "Ramp": (160, 90, 160), "Wall": (102, 102, 156),
    "Traffic cone": (250, 170, 30), "pole": (153, 153, 153),
}


@dataclass
class ObjectSpec:
    cls: str
    x: float  # center at frame 0, pixels
    y: float
    vx: float  # pixels / second
    vy: float
    w: int
    h: int

    def center(self, t: int, fps: float) -> tuple[float, float]:
        return self.x + self.vx * t / fps, self.y + self.vy * t / fps

    def box(self, t: int, fps: float) -> tuple[int, int]:
        """Top-left pixel; the rendered pixel centroid is within half a pixel of the center."""
        cx, cy = self.center(t, fps)
        return int(math.floor(cx - (self.w - 1) / 2 + 0.5)), int(math.floor(cy - (self.h - 1) / 2 + 0.5))


@dataclass
class SceneSpec:
    scenario: ScenarioLabel
    road_type: RoadType = RoadType.Ground
    width: int = 160
    height: int = 96
    fps: float = 10.0
    frames: int = 8
    objects: list[ObjectSpec] = field(default_factory=list)
    light: str | None = None
    infrastructure: float = 0.5
    seed: int = 0
    flip_noise: float = 0.0

    def __post_init__(self):
        self.scenario = ScenarioLabel[self.scenario] if isinstance(self.scenario, str) else ScenarioLabel(self.scenario)
        self.road_type = RoadType(self.road_type)
        self.objects = [o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects]
        if self.width < 32 or self.height < 24:
            raise ValueError("scene must be at least 32x24 pixels")
        if self.fps <= 0 or self.frames < 1:
            raise ValueError("fps must be positive and frames >= 1")
        if self.light is not None and self.light not in LIGHT_RGB:
            raise ValueError(f"unknown light colour {self.light!r}")
        for o in self.objects:
            for t in range(self.frames):
                x0, y0 = o.box(t, self.fps)
                if x0 < 0 or y0 < 0 or x0 + o.w > self.width or y0 + o.h > self.height:
                    raise ValueError(f"{o.cls} object leaves the frame at t={t}")

    @property
    def horizon(self) -> int:
        return int(0.4 * self.height)

    def lane_lines(self) -> tuple[int, int]:
        return int(0.38 * self.width), int(0.62 * self.width)

    def to_json(self) -> dict:
        d = asdict(self)
        d["scenario"] = self.scenario.name
        d["road_type"] = self.road_type.value
        return d

    @classmethod
    def from_json(cls, data: dict) -> "SceneSpec":
        return cls(**data)


@dataclass
class GroundTruth:
    frame: int
    scenario: str
    road_type: str
    objects: list[dict]  # id, cls, x, y, vx, vy, ttc (None = infinite)
    light: str | None

    @property
    def min_ttc(self) -> float:
        vals = [o["ttc"] for o in self.objects if o["ttc"] is not None]
        return min(vals) if vals else math.inf


def _fill(cells, x0, y0, x1, y1, cid):
    h, w = cells.shape
    cells[max(y0, 0) : min(y1, h), max(x0, 0) : min(x1, w)] = cid


def _draw_static(spec: SceneSpec, tax: ClassTaxonomy, rng: np.random.Generator) -> np.ndarray:
    W, H = spec.width, spec.height
    hz = spec.horizon
    cid = tax.id_of
    cells = np.zeros((H, W), dtype=np.int64)
    rt = spec.road_type

    # above the horizon
    if rt is RoadType.Tunnel:
        _fill(cells, 0, 0, W, hz, cid("Tunnel"))
    else:
        n_build = int(rng.integers(1, 4))
        for _ in range(n_build):
            bw = int(rng.integers(W // 10, W // 4))
            bx = int(rng.integers(0, W - bw))
            bh = int(rng.integers(hz // 3, hz))
            _fill(cells, bx, hz - bh, bx + bw, hz, cid("Building"))
        if rt is not RoadType.Expressway:
            for _ in range(int(rng.integers(0, 3))):
                tw = int(rng.integers(4, 10))
                tx = int(rng.integers(0, W - tw))
                _fill(cells, tx, hz - int(rng.integers(4, hz // 2)), tx + tw, hz, cid("Tree"))

    # road surface and margins
    _fill(cells, 0, hz, W, H, cid("road"))
    margin = max(W // 10, 3)
    if rt is RoadType.Tunnel:
        _fill(cells, 0, hz, margin, H, cid("Tunnel"))
        _fill(cells, W - margin, hz, W, H, cid("Tunnel"))
    elif rt is RoadType.Expressway:
        _fill(cells, 0, hz, 2, H, cid("Guardrail"))
        _fill(cells, W - 2, hz, W, H, cid("Guardrail"))
        _fill(cells, 2, hz, margin, H, cid("Terrain"))
        _fill(cells, W - margin, hz, W - 2, H, cid("Terrain"))
    elif rt is RoadType.FlyOver:
        _fill(cells, 0, hz, margin, H, cid("Bridge"))
        _fill(cells, W - margin, hz, W, H, cid("Bridge"))
        _fill(cells, margin, hz, margin + 2, H, cid("Barrier"))
        _fill(cells, W - margin - 2, hz, W - margin, H, cid("Barrier"))
    else:
        _fill(cells, 0, hz, margin, H, cid("Sidewalk"))
        _fill(cells, W - margin, hz, W, H, cid("Sidewalk"))

    if rt is RoadType.Ramp:
        rw = W // 6
        side = int(rng.integers(0, 2))
        x0 = margin if side == 0 else W - margin - rw
        _fill(cells, x0, hz + (H - hz) // 3, x0 + rw, H, cid("Ramp"))
    if rt is RoadType.Cross:
        zy = H - (H - hz) // 4
        for x in range(margin, W - margin, 6):
            _fill(cells, x, zy, x + 3, zy + max(H // 16, 3), cid("Zebra line"))

    # lane lines, dashed
    dash = max((H - hz) // 6, 2)
    for lx in spec.lane_lines():
        for y in range(hz + 1, H, 2 * dash):
            _fill(cells, lx - 1, y, lx + 1, y + dash, cid("Road line"))

    # roadside furniture
    n_poles = int(round(spec.infrastructure * 4))
    for _ in range(n_poles):
        px = int(rng.choice([rng.integers(1, margin), rng.integers(W - margin, W - 1)]))
        _fill(cells, px, hz - int(rng.integers(hz // 3, hz - 2)), px + 1, hz + 4, cid("pole"))
    if rng.random() < spec.infrastructure:
        sx = int(rng.integers(2, W // 4))
        _fill(cells, sx, 2, sx + 8, 6, cid("Signboard"))
    return cells


def _light_box(spec: SceneSpec) -> tuple[int, int, int, int]:
    x0 = int(0.7 * spec.width)
    return x0, 2, x0 + 3, 9


def generate_frame(spec: SceneSpec, t: int, tax: ClassTaxonomy | None = None):
    """Render frame ``t`` of a scene: ``(LabelMap, RgbImage, GroundTruth)``."""
    if not 0 <= t < spec.frames:
        raise ValueError(f"frame {t} outside [0, {spec.frames})")
    tax = tax or default_taxonomy()
    rng = np.random.default_rng(spec.seed)
    cells = _draw_static(spec, tax, rng)

    objs = []
    for i, o in enumerate(spec.objects):
        x0, y0 = o.box(t, spec.fps)
        _fill(cells, x0, y0, x0 + o.w, y0 + o.h, tax.id_of(o.cls))
        cx, cy = o.center(t, spec.fps)
        dist = spec.height - cy
        ttc = dist / o.vy if o.vy > 0 and dist > 0 else None
        objs.append({"id": i, "cls": o.cls, "x": cx, "y": cy, "vx": o.vx, "vy": o.vy, "ttc": ttc})

    if spec.light is not None:
        lx0, ly0, lx1, ly1 = _light_box(spec)
        _fill(cells, lx0, ly0, lx1, ly1, tax.id_of("Sign"))

    if spec.flip_noise > 0:
        noise_rng = np.random.default_rng([spec.seed, t])
        flip = noise_rng.random(cells.shape) < spec.flip_noise
        cells[flip] = noise_rng.integers(0, len(tax), int(flip.sum()))

    palette = np.array([PALETTE.get(e.name, (e.gray, e.gray, e.gray)) for e in tax], dtype=np.uint8)
    rgb = palette[cells]
    if spec.light is not None:
        lx0, ly0, lx1, ly1 = _light_box(spec)
        lamp_row = {"red": ly0, "yellow": ly0 + 2, "green": ly0 + 4}[spec.light]
        sub = cells[lamp_row : lamp_row + 3, lx0:lx1] == tax.id_of("Sign")
        rgb[lamp_row : lamp_row + 3, lx0:lx1][sub] = LIGHT_RGB[spec.light]

    truth = GroundTruth(t, spec.scenario.name, spec.road_type.value, objs, spec.light)
    return LabelMap(cells), RgbImage(rgb), truth


# --- scene sampling -----------------------------------------------------------

def random_spec(scenario: ScenarioLabel, seed: int, road_type: RoadType | None = None,
                width: int = 160, height: int = 96, fps: float = 10.0, frames: int = 8,
                flip_noise: float = 0.0) -> SceneSpec:
    """Sample a scene whose object layout matches the scenario definition.

    Free driving keeps the ego lane empty, following puts a car in the ego
    lane, cut-in puts a car across a lane line drifting inward, and emergency
    avoidance sends a pedestrian, cyclist or car laterally across the road.
    """
    rng = np.random.default_rng([seed, 7919])
    scenario = ScenarioLabel(scenario)
    if road_type is None:
        road_type = list(RoadType)[int(rng.integers(0, len(RoadType)))]
    W, H = width, height
    dur = (frames - 1) / fps
    hz = int(0.4 * H)
    left_line, right_line = int(0.38 * W), int(0.62 * W)
    objects: list[ObjectSpec] = []

    # distant traffic in the side lanes, well above the near-field objects
    for lane_x in (0.22 * W, 0.78 * W):
        if rng.random() < 0.3:
            objects.append(ObjectSpec("Car", lane_x + rng.uniform(-3, 3), hz + rng.uniform(5, 9),
                                      0.0, rng.uniform(-3, 3), 10, 5))

    near_y = rng.uniform(0.62 * H, 0.78 * H)
    if scenario is ScenarioLabel.Following:
        w, h = int(rng.integers(14, 20)), int(rng.integers(9, 13))
        objects.append(ObjectSpec("Car", 0.5 * W + rng.uniform(-3, 3), near_y,
                                  rng.uniform(-2, 2), rng.uniform(-8, 8), w, h))
    elif scenario is ScenarioLabel.CutIn:
        w, h = int(rng.integers(14, 20)), int(rng.integers(9, 13))
        side = int(rng.integers(0, 2))
        line = left_line if side == 0 else right_line
        speed = rng.uniform(5, 20) * (1 if side == 0 else -1)
        x = line + rng.uniform(-3, 3) - speed * dur / 2
        objects.append(ObjectSpec("Car", x, near_y, speed, rng.uniform(0, 10), w, h))
    elif scenario is ScenarioLabel.EmergencyAvoidance:
        kind = ["Pedestrian", "nmt", "Car"][int(rng.integers(0, 3))]
        w, h = {"Pedestrian": (4, 9), "nmt": (8, 9), "Car": (26, 9)}[kind]
        speed = rng.uniform(60, 140)
        span = speed * dur
        direction = 1 if rng.random() < 0.5 else -1
        lo = w / 2 + 2
        hi = W - w / 2 - 2 - span
        start = rng.uniform(lo, max(lo, hi))
        if direction < 0:
            start = W - start
        vy = rng.uniform(5, 30)
        y = min(near_y, H - h / 2 - 2 - vy * dur)
        objects.append(ObjectSpec(kind, start, y, direction * speed, vy, w, h))

    light = [None, "red", "green", "yellow"][int(rng.integers(0, 4))]
    return SceneSpec(scenario, road_type, W, H, fps, frames, objects, light,
                     float(rng.uniform(0.2, 0.9)), int(rng.integers(0, 2**31 - 1)), flip_noise)


def crossing_spec(seed: int = 0, light: str | None = "red") -> SceneSpec:
    """A car crossing the road at 100 px/s while closing in at 20 px/s, in front of a crossing."""
    return SceneSpec(ScenarioLabel.EmergencyAvoidance, RoadType.Cross, 160, 96, 10.0, 8,
                     [ObjectSpec("Car", 30.0, 60.0, 100.0, 20.0, 25, 9)], light, 0.5, seed)


@dataclass
class Corpus:
    dataset: LabeledDataset
    specs: list[SceneSpec]
    truths: list[GroundTruth]


def generate_corpus(count: int, seed: int, out_dir=None, tax: ClassTaxonomy | None = None,
                    width: int = 160, height: int = 96, flip_noise: float = 0.0,
                    labels: Sequence[ScenarioLabel] | None = None) -> Corpus:
    """Balanced single-frame corpus; optionally written out as PGM/PPM/CSV files."""
    if count < 1:
        raise ValueError("count must be >= 1")
    tax = tax or default_taxonomy()
    rng = np.random.default_rng(seed)
    labels = list(labels) if labels is not None else [ScenarioLabel(i % 4) for i in range(count)]
    if len(labels) != count:
        raise ValueError("labels must have one entry per frame")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "frames").mkdir(parents=True, exist_ok=True)
        (out / "rgb").mkdir(parents=True, exist_ok=True)

    rows, names, specs, truths, ids = [], [], [], [], []
    for i, lab in enumerate(labels):
        spec = random_spec(lab, int(rng.integers(0, 2**31 - 1)), width=width, height=height,
                           flip_noise=flip_noise)
        t = int(rng.integers(0, spec.frames))
        m, rgb, truth = generate_frame(spec, t, tax)
        fid = f"{i:05d}"
        rows.append(extract_features(m, tax).as_array())
        names.append(lab.name)
        specs.append(spec)
        truths.append(truth)
        ids.append(fid)
        if out is not None:
            save_labelmap(m, out / "frames" / f"{fid}.pgm")
            save_rgb(rgb, out / "rgb" / f"{fid}.ppm")

    cols = feature_names(len(tax))
    data = LabeledDataset.from_labels(np.array(rows), names, cols, SCENARIO_NAMES, ids)
    if out is not None:
        write_feature_csv(out / "features.csv", data.X, cols, names, ids)
        _write_truth_csv(out / "truth.csv", ids, truths)
        (out / "taxonomy.json").write_text(json.dumps(tax.to_json(), indent=1) + "\n")
    return Corpus(data, specs, truths)


def _fmt_ttc(v) -> str:
    return "inf" if v is None or math.isinf(v) else repr(float(v))


def _write_truth_csv(path, ids, truths: Sequence[GroundTruth]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["frame_id", "scenario", "road_type", "light", "n_objects", "min_ttc"])
        for fid, tr in zip(ids, truths):
            wr.writerow([fid, tr.scenario, tr.road_type, tr.light or "", len(tr.objects), _fmt_ttc(tr.min_ttc)])


def write_sequence(spec: SceneSpec, out_dir, tax: ClassTaxonomy | None = None, prefix: str = "") -> list[GroundTruth]:
    """Every frame of one scene plus a per-object truth CSV."""
    tax = tax or default_taxonomy()
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    truths = []
    for t in range(spec.frames):
        m, rgb, truth = generate_frame(spec, t, tax)
        save_labelmap(m, out / "frames" / f"{prefix}{t:04d}.pgm")
        save_rgb(rgb, out / "rgb" / f"{prefix}{t:04d}.ppm")
        truths.append(truth)
    with open(out / f"{prefix}truth.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["frame_index", "object_id", "cls", "x", "y", "vx", "vy", "ttc"])
        for tr in truths:
            for o in tr.objects:
                wr.writerow([tr.frame, o["id"], o["cls"], repr(o["x"]), repr(o["y"]),
                             repr(float(o["vx"])), repr(float(o["vy"])), _fmt_ttc(o["ttc"])])
    return truths


def with_light(spec: SceneSpec, light: str | None) -> SceneSpec:
    return replace(spec, light=light)
