"""Per-frame textual explanation reports.

A report combines the detected elements (with traffic-light colour), the
scenario distribution, the road type, conflict-object kinematics, the
complexity score and the advisory messages fired by a rule file.

Advisory conditions are small Python-syntax expressions evaluated over a fixed
set of names (see ``RULE_NAMES``); anything outside that whitelist is rejected
when the rule file is loaded.
"""
from __future__ import annotations

import ast
import json
import math
import string
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .complexity import DEFAULT_N_MAX, ComplexityReport, complexity_report, quantity_count
from .features import FeatureVector, extract_features
from .gbdt import BoostedEnsemble
from .labelmap import ClassTaxonomy, LabelMap, RgbImage
from .motion import MotionConfig, Trajectory, frame_centers, kinematics, track
from .scenario import RoadRuleSet, classify_road_type, classify_scenario

ATTRIBUTE_CLASSES = ("Sign",)
CONFLICT_CLASSES = ("Car", "nmt", "Pedestrian")


class StageError(ValueError):
    """A pipeline failure tagged with the stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


# --- traffic-light colour -----------------------------------------------------

@dataclass(frozen=True)
class LightColorConfig:
    red: tuple[tuple[float, float], ...] = ((345.0, 360.0), (0.0, 15.0))
    green: tuple[tuple[float, float], ...] = ((90.0, 150.0),)
    yellow: tuple[tuple[float, float], ...] = ((45.0, 70.0),)
    min_saturation: float = 0.3
    min_value: float = 0.3
    min_fraction: float = 0.2


def _hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hue in degrees [0, 360), saturation and value in [0, 1]."""
    c = rgb.astype(np.float64) / 255.0
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    mx = c.max(axis=-1)
    mn = c.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    hue = np.where(mx == r, ((g - b) / safe) % 6.0,
                   np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0))
    hue = np.where(delta > 0, 60.0 * hue, 0.0) % 360.0
    sat = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return hue, sat, mx


def light_color(rgb: RgbImage, mask: np.ndarray, cfg: LightColorConfig = LightColorConfig()) -> str:
    """Plurality hue class of the masked pixels, or ``unknown``.

    Pixels count only if they pass the saturation/value gate and fall inside
    one of the colour hue bands; fewer than ``min_fraction`` of the mask
    qualifying gives ``unknown``.  Ties resolve red, then yellow, then green.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != rgb.pixels.shape[:2]:
        raise ValueError("mask shape does not match the image")
    total = int(mask.sum())
    if total == 0:
        return "unknown"
    hue, sat, val = _hsv(rgb.pixels[mask])
    gated = (sat >= cfg.min_saturation) & (val >= cfg.min_value)
    counts = {}
    for name in ("red", "yellow", "green"):
        band = np.zeros_like(gated)
        for lo, hi in getattr(cfg, name):
            band |= (hue >= lo) & (hue <= hi)
        counts[name] = int(np.sum(gated & band))
    qualifying = sum(counts.values())
    if qualifying == 0 or qualifying < cfg.min_fraction * total:
        return "unknown"
    return max(counts, key=lambda k: counts[k])  # dict order breaks ties


# --- elements and tracks ------------------------------------------------------

@dataclass(frozen=True)
class ElementState:
    name: str
    class_id: int
    presence: bool
    area: int
    centroid: tuple[float, float] | None
    attribute: str | None = None

    def to_json(self) -> dict:
        return {"name": self.name, "class_id": self.class_id, "presence": self.presence,
                "area": self.area, "centroid": list(self.centroid) if self.centroid else None,
                "attribute": self.attribute}

    @classmethod
    def from_json(cls, d: dict) -> "ElementState":
        c = d["centroid"]
        return cls(d["name"], d["class_id"], d["presence"], d["area"],
                   tuple(c) if c is not None else None, d["attribute"])


def element_states(fv: FeatureVector, tax: ClassTaxonomy, labelmap: LabelMap | None = None,
                   rgb: RgbImage | None = None, light_cfg: LightColorConfig = LightColorConfig()) -> list[ElementState]:
    """Present non-background classes in id order; attribute classes get a colour verdict."""
    out = []
    for e in tax:
        if e.id == 0 or not fv.presence[e.id]:
            continue
        attr = None
        if e.name in ATTRIBUTE_CLASSES:
            attr = "unknown"
            if rgb is not None and labelmap is not None:
                attr = light_color(rgb, labelmap.cells == e.id, light_cfg)
        cx, cy = fv.centroid[e.id]
        out.append(ElementState(e.name, e.id, True, int(fv.pixel_sum[e.id]), (float(cx), float(cy)), attr))
    return out


@dataclass(frozen=True)
class TrackSummary:
    track_id: int
    x: float
    y: float
    vx: float | None
    vy: float | None
    ax: float | None
    ay: float | None
    ttc: float | None  # None: not closing in
    severe: bool
    samples: int

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, d: dict) -> "TrackSummary":
        return cls(**d)


# --- advisory rules -----------------------------------------------------------

_SCALAR_NAMES = ("light", "min_ttc", "severe", "lateral_speed_center", "max_abs_vx",
                 "n_tracks", "scenario", "road_type", "inf")
_FUNCTION_NAMES = ("present", "area")
RULE_NAMES = _SCALAR_NAMES + _FUNCTION_NAMES

_ALLOWED_NODES = (
    ast.Expression, ast.BoolOp, ast.And, ast.Or, ast.UnaryOp, ast.Not, ast.USub,
    ast.Compare, ast.Eq, ast.NotEq, ast.Lt, ast.LtE, ast.Gt, ast.GtE, ast.In, ast.NotIn,
    ast.Name, ast.Load, ast.Constant, ast.Call, ast.Tuple, ast.List,
)

_CMP: dict[type, Callable[[Any, Any], bool]] = {
    ast.Eq: lambda a, b: a == b, ast.NotEq: lambda a, b: a != b,
    ast.Lt: lambda a, b: a < b, ast.LtE: lambda a, b: a <= b,
    ast.Gt: lambda a, b: a > b, ast.GtE: lambda a, b: a >= b,
    ast.In: lambda a, b: a in b, ast.NotIn: lambda a, b: a not in b,
}


def _compile_condition(text: str) -> ast.Expression:
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"bad rule condition {text!r}: {exc.msg}") from exc
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ValueError(f"rule condition {text!r} uses unsupported syntax {type(node).__name__}")
        if isinstance(node, ast.Name) and node.id not in RULE_NAMES:
            raise ValueError(f"rule condition {text!r} references unknown name {node.id!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTION_NAMES:
                raise ValueError(f"rule condition {text!r} calls a non-whitelisted function")
            if node.keywords or not all(isinstance(a, ast.Constant) for a in node.args):
                raise ValueError(f"rule condition {text!r}: function arguments must be literals")
    return tree


def _eval(node: ast.AST, ctx: Mapping[str, Any]):
    if isinstance(node, ast.Expression):
        return _eval(node.body, ctx)
    if isinstance(node, ast.Constant):
        return node.value
    if isinstance(node, ast.Name):
        return ctx[node.id]
    if isinstance(node, (ast.Tuple, ast.List)):
        return tuple(_eval(e, ctx) for e in node.elts)
    if isinstance(node, ast.BoolOp):
        vals = (_eval(v, ctx) for v in node.values)
        return all(vals) if isinstance(node.op, ast.And) else any(vals)
    if isinstance(node, ast.UnaryOp):
        v = _eval(node.operand, ctx)
        return (not v) if isinstance(node.op, ast.Not) else -v
    if isinstance(node, ast.Compare):
        left = _eval(node.left, ctx)
        for op, comp in zip(node.ops, node.comparators):
            right = _eval(comp, ctx)
            if not _CMP[type(op)](left, right):
                return False
            left = right
        return True
    if isinstance(node, ast.Call):
        return ctx[node.func.id](*[a.value for a in node.args])
    raise ValueError(f"cannot evaluate {type(node).__name__}")


@dataclass(frozen=True, eq=False)
class AdvisoryRule:
    name: str
    when: str
    message: str
    _tree: ast.Expression = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "_tree", _compile_condition(self.when))
        for _, fname, _, _ in string.Formatter().parse(self.message):
            if fname is not None and fname not in _SCALAR_NAMES:
                raise ValueError(f"rule {self.name!r}: message placeholder {{{fname}}} cannot be bound")

    def fires(self, ctx: Mapping[str, Any]) -> bool:
        return bool(_eval(self._tree, ctx))

    def render(self, ctx: Mapping[str, Any]) -> str:
        return self.message.format(**{k: ctx[k] for k in _SCALAR_NAMES})


def parse_rules(data) -> list[AdvisoryRule]:
    if not isinstance(data, list):
        raise ValueError("advisory rule file must be a JSON array")
    rules = []
    for i, item in enumerate(data):
        if not isinstance(item, dict) or not {"name", "when", "message"} <= item.keys():
            raise ValueError(f"advisory rule #{i} needs 'name', 'when' and 'message'")
        rules.append(AdvisoryRule(str(item["name"]), str(item["when"]), str(item["message"])))
    return rules


def load_rules(path) -> list[AdvisoryRule]:
    with open(path) as fh:
        try:
            return parse_rules(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from exc


def default_rules() -> list[AdvisoryRule]:
    text = resources.files("scenetext.data").joinpath("advisories.json").read_text()
    return parse_rules(json.loads(text))


def rule_context(elements: Sequence[ElementState], tracks: Sequence[TrackSummary], frame_width: int,
                 scenario: str = "", road_type: str = "", severe_ttc: float = 1.0,
                 center_band: tuple[float, float] = (1 / 3, 2 / 3)) -> dict[str, Any]:
    by_name = {e.name: e for e in elements if e.presence}
    light = "unknown"
    for e in elements:
        if e.name in ATTRIBUTE_CLASSES and e.attribute:
            light = e.attribute
            break
    ttcs = [t.ttc for t in tracks if t.ttc is not None]
    min_ttc = min(ttcs) if ttcs else math.inf
    lo, hi = center_band[0] * frame_width, center_band[1] * frame_width
    lateral = [abs(t.vx) for t in tracks if t.vx is not None and lo <= t.x <= hi]
    all_vx = [abs(t.vx) for t in tracks if t.vx is not None]
    return {
        "present": lambda name: name in by_name,
        "area": lambda name: by_name[name].area if name in by_name else 0,
        "light": light,
        "min_ttc": min_ttc,
        "severe": min_ttc <= severe_ttc,
        "lateral_speed_center": max(lateral, default=0.0),
        "max_abs_vx": max(all_vx, default=0.0),
        "n_tracks": len(tracks),
        "scenario": scenario,
        "road_type": road_type,
        "inf": math.inf,
    }


def apply_rules(elements: Sequence[ElementState], tracks: Sequence[TrackSummary],
                rules: Sequence[AdvisoryRule], frame_width: int, **ctx_kw) -> list[str]:
    """Messages of every firing rule, in rule order, without duplicates."""
    ctx = rule_context(elements, tracks, frame_width, **ctx_kw)
    out: list[str] = []
    for rule in rules:
        if rule.fires(ctx):
            msg = rule.render(ctx)
            if msg not in out:
                out.append(msg)
    return out


# --- report -------------------------------------------------------------------

@dataclass
class ExplanationReport:
    frame_id: str
    scenario: str
    scenario_probabilities: dict[str, float]
    road_type: str
    elements: list[ElementState]
    tracks: list[TrackSummary]
    complexity: ComplexityReport
    advisories: list[str]

    def to_json(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "scenario": self.scenario,
            "scenario_probabilities": dict(self.scenario_probabilities),
            "road_type": self.road_type,
            "elements": [e.to_json() for e in self.elements],
            "tracks": [t.to_json() for t in self.tracks],
            "complexity": self.complexity.to_json(),
            "advisories": list(self.advisories),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_json(cls, d: dict) -> "ExplanationReport":
        return cls(d["frame_id"], d["scenario"], dict(d["scenario_probabilities"]), d["road_type"],
                   [ElementState.from_json(e) for e in d["elements"]],
                   [TrackSummary.from_json(t) for t in d["tracks"]],
                   ComplexityReport.from_json(d["complexity"]), list(d["advisories"]))

    @classmethod
    def loads(cls, text: str) -> "ExplanationReport":
        return cls.from_json(json.loads(text))

    def render_text(self) -> str:
        lines = [f"Frame {self.frame_id}",
                 f"  Scenario: {self.scenario} ({self.scenario_probabilities[self.scenario]:.1%})",
                 f"  Road type: {self.road_type}"]
        if self.elements:
            parts = []
            for e in self.elements:
                s = f"{e.name} ({e.area} px"
                s += f", {e.attribute})" if e.attribute else ")"
                parts.append(s)
            lines.append("  Elements: " + ", ".join(parts))
        for t in self.tracks:
            ttc = "inf" if t.ttc is None else f"{t.ttc:.2f} s"
            vx = "n/a" if t.vx is None else f"{t.vx:.1f}"
            vy = "n/a" if t.vy is None else f"{t.vy:.1f}"
            flag = " SEVERE" if t.severe else ""
            lines.append(f"  Track {t.track_id}: at ({t.x:.1f}, {t.y:.1f}) v=({vx}, {vy}) px/s TTC {ttc}{flag}")
        c = self.complexity
        lines.append(f"  Complexity d = {c.d:.2f} (C={c.C:.2f}, m={c.m:g}%, n={c.n}/{c.n_max})")
        for msg in self.advisories:
            lines.append(f"  >> {msg}")
        return "\n".join(lines)


@dataclass
class ExplainConfig:
    motion: MotionConfig = field(default_factory=MotionConfig)
    conflict_classes: tuple[str, ...] = CONFLICT_CLASSES
    variety_m: float = 78.8
    variety_m_by_road: dict[str, float] = field(default_factory=dict)
    n_max: int = DEFAULT_N_MAX
    center_band: tuple[float, float] = (1 / 3, 2 / 3)
    light: LightColorConfig = field(default_factory=LightColorConfig)


@dataclass
class Frame:
    frame_id: str
    labelmap: LabelMap
    rgb: RgbImage | None = None


def _stage(name: str, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except (ValueError, KeyError) as exc:
        raise StageError(name, str(exc)) from exc


def _track_summaries(tracks: Sequence[Trajectory], n_frames: int, ego_line: float,
                     severe_ttc: float) -> list[list[TrackSummary]]:
    per_frame: list[list[TrackSummary]] = [[] for _ in range(n_frames)]
    for tr in tracks:
        if len(tr) >= 2:
            states = kinematics(tr, ego_line)
        else:
            states = [None]
        for i, f in enumerate(tr.frames):
            s = states[i]
            if s is None:
                per_frame[f].append(TrackSummary(tr.track_id, tr.xs[i], tr.ys[i], None, None, None, None,
                                                 None, False, i + 1))
                continue
            ttc = None if math.isinf(s.ttc) else s.ttc
            per_frame[f].append(TrackSummary(tr.track_id, tr.xs[i], tr.ys[i], s.vx, s.vy, s.ax, s.ay,
                                             ttc, s.severe(severe_ttc), i + 1))
    return per_frame


def build_reports(frames: Sequence[Frame], model: BoostedEnsemble, tax: ClassTaxonomy,
                  road_rules: RoadRuleSet, rules: Sequence[AdvisoryRule],
                  cfg: ExplainConfig = ExplainConfig()) -> list[ExplanationReport]:
    """Explain an ordered frame sequence; tracks link conflict objects across it."""
    if not frames:
        return []
    conflict_ids = _stage("taxonomy", lambda: [tax.id_of(n) for n in cfg.conflict_classes])
    centers = []
    for fr in frames:
        _stage("labelmap", fr.labelmap.validate, tax)
        centers.append(_stage("motion", frame_centers, fr.labelmap, conflict_ids, cfg.motion))
    tracks = _stage("motion", track, centers, cfg.motion.fps, cfg.motion.max_jump)

    reports = []
    for i, fr in enumerate(frames):
        ego = cfg.motion.ego_line if cfg.motion.ego_line is not None else float(fr.labelmap.height)
        # a frame's tracks use samples up to and including it, so earlier reports
        # never depend on later frames
        history = [_truncate(tr, i) for tr in tracks]
        summaries = _track_summaries([t for t in history if t is not None], len(frames), ego,
                                     cfg.motion.severe_ttc)[i]
        reports.append(build_report(fr, model, tax, road_rules, rules, summaries, cfg))
    return reports


def _truncate(tr: Trajectory, last_frame: int) -> Trajectory | None:
    k = sum(1 for f in tr.frames if f <= last_frame)
    if k == 0 or tr.frames[k - 1] != last_frame:
        return None
    return Trajectory(tr.fps, tr.frames[:k], tr.xs[:k], tr.ys[:k], tr.track_id)


def build_report(frame: Frame, model: BoostedEnsemble, tax: ClassTaxonomy, road_rules: RoadRuleSet,
                 rules: Sequence[AdvisoryRule], tracks: Sequence[TrackSummary] = (),
                 cfg: ExplainConfig = ExplainConfig()) -> ExplanationReport:
    m = frame.labelmap
    fv = _stage("features", extract_features, m, tax)
    dist = _stage("scenario", classify_scenario, fv, model)
    road = _stage("road_type", classify_road_type, fv, road_rules)
    elements = _stage("elements", element_states, fv, tax, m, frame.rgb, cfg.light)
    ttcs = [t.ttc for t in tracks if t.ttc is not None]
    variety = cfg.variety_m_by_road.get(road.value, cfg.variety_m)
    cx = _stage("complexity", complexity_report, dist, variety, quantity_count(m), cfg.n_max,
                min(ttcs) if ttcs else None)
    adv = _stage("advisories", apply_rules, elements, tracks, rules, m.width,
                 scenario=dist.label.name, road_type=road.value,
                 severe_ttc=cfg.motion.severe_ttc, center_band=cfg.center_band)
    return ExplanationReport(frame.frame_id, dist.label.name, dist.as_dict(), road.value,
                             elements, list(tracks), cx, adv)
