"""Scenario and road-type vocabularies and the classifiers built on them."""
from __future__ import annotations

import enum
import json
import operator
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .features import FeatureVector, LabeledDataset, out_of_fold_predictions
from .gbdt import BoostedEnsemble, TrainConfig
from .metrics import ConfusionMatrix, confusion_from_labels, f1_macro


class ScenarioLabel(enum.IntEnum):
    FreeDriving = 0
    Following = 1
    CutIn = 2
    EmergencyAvoidance = 3

    @property
    def relation_value(self) -> int:
        """Relation-complexity weight of the scenario (1 = least severe, 5 = most)."""
        return RELATION_VALUES[self]


RELATION_VALUES = {
    ScenarioLabel.FreeDriving: 1,
    ScenarioLabel.Following: 3,
    ScenarioLabel.CutIn: 4,
    ScenarioLabel.EmergencyAvoidance: 5,
}

SCENARIO_NAMES = [s.name for s in ScenarioLabel]


class RoadType(enum.Enum):
    Cross = "Cross"
    Ground = "Ground"
    FlyOver = "FlyOver"
    Ramp = "Ramp"
    Tunnel = "Tunnel"
    Expressway = "Expressway"


@dataclass(frozen=True, eq=False)
class ScenarioDistribution:
    p: np.ndarray  # indexed by ScenarioLabel

    def __post_init__(self):
        p = np.asarray(self.p, dtype=np.float64)
        if p.shape != (len(ScenarioLabel),):
            raise ValueError(f"need {len(ScenarioLabel)} scenario probabilities, got shape {p.shape}")
        if np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("scenario probabilities must be nonnegative and sum to 1")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "p", p)

    @property
    def label(self) -> ScenarioLabel:
        # argmax keeps the first maximum: exact ties go to the lowest enum value
        return ScenarioLabel(int(np.argmax(self.p)))

    def as_dict(self) -> dict[str, float]:
        return {s.name: float(self.p[s]) for s in ScenarioLabel}

    def __eq__(self, other):
        return isinstance(other, ScenarioDistribution) and np.array_equal(self.p, other.p)


def classify_scenario(x: FeatureVector | np.ndarray, model: BoostedEnsemble) -> ScenarioDistribution:
    vec = x.as_array() if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64)
    try:
        order = [model.classes.index(s) for s in SCENARIO_NAMES]
    except ValueError as exc:
        raise ValueError(f"model classes {model.classes} are not the scenario labels") from exc
    return ScenarioDistribution(model.predict_proba(vec)[order])


# --- road type rules ----------------------------------------------------------

_OPS = {
    "==": operator.eq, "!=": operator.ne, ">": operator.gt,
    ">=": operator.ge, "<": operator.lt, "<=": operator.le,
}


def road_features(x: FeatureVector) -> dict[str, float]:
    """Named values a road rule may test: ``presence_<id>``, ``pixsum_<id>``, ``frac_<id>``."""
    total = max(x.total_pixels(), 1)
    out = {}
    for c in range(x.k):
        out[f"presence_{c}"] = float(x.presence[c])
        out[f"pixsum_{c}"] = float(x.pixel_sum[c])
        out[f"frac_{c}"] = float(x.pixel_sum[c]) / total
    return out


@dataclass(frozen=True)
class RoadRule:
    when: tuple[tuple[str, str, float], ...]
    then: RoadType

    def matches(self, feats: Mapping[str, float]) -> bool:
        for name, op, value in self.when:
            if name not in feats:
                raise ValueError(f"road rule references unknown feature {name!r}")
            if not _OPS[op](feats[name], value):
                return False
        return True


@dataclass(frozen=True)
class RoadRuleSet:
    rules: tuple[RoadRule, ...]
    fallback: RoadType = RoadType.Ground

    @classmethod
    def from_json(cls, data: Sequence[Mapping]) -> "RoadRuleSet":
        if not isinstance(data, list):
            raise ValueError("road rules JSON must be an array")
        rules = []
        for i, item in enumerate(data):
            try:
                then = RoadType(item["then"])
                preds = []
                for name, cond in item.get("when", {}).items():
                    op, value = cond
                    if op not in _OPS:
                        raise ValueError(f"unknown operator {op!r}")
                    preds.append((str(name), op, float(value)))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"malformed road rule #{i}: {exc}") from exc
            rules.append(RoadRule(tuple(preds), then))
        return cls(tuple(rules))

    def to_json(self) -> list[dict]:
        return [{"when": {n: [op, v] for n, op, v in r.when}, "then": r.then.value} for r in self.rules]


def default_road_rules() -> RoadRuleSet:
    text = resources.files("scenetext.data").joinpath("road_rules.json").read_text()
    return RoadRuleSet.from_json(json.loads(text))


def load_road_rules(path) -> RoadRuleSet:
    with open(path) as fh:
        return RoadRuleSet.from_json(json.load(fh))


def classify_road_type(x: FeatureVector, rules: RoadRuleSet) -> RoadType:
    feats = road_features(x)
    for rule in rules.rules:
        if rule.matches(feats):
            return rule.then
    return rules.fallback


# --- evaluation ---------------------------------------------------------------

@dataclass
class CrossValidationResult:
    confusion: ConfusionMatrix
    f1_macro: float
    classes: list[str]

    def to_json(self) -> dict:
        return {"classes": self.classes, "confusion": self.confusion.to_json(), "f1_macro": self.f1_macro}


def cross_validate(data: LabeledDataset, folds: int = 5, cfg: TrainConfig | None = None,
                   seed: int = 0) -> CrossValidationResult:
    """Out-of-fold predictions from stratified, seeded folds pooled into one matrix."""
    pred = out_of_fold_predictions(data, folds, cfg or TrainConfig(), seed)
    cm = confusion_from_labels(pred, data.y, len(data.classes))
    return CrossValidationResult(cm, f1_macro(cm), list(data.classes))
