import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenetext.explain import (AdvisoryRule, ElementState, ExplainConfig, ExplanationReport, Frame,
                               LightColorConfig, StageError, TrackSummary, apply_rules,
                               build_report, build_reports, default_rules, light_color, parse_rules)
from scenetext.gbdt import empty_ensemble
from scenetext.features import feature_names
from scenetext.labelmap import LabelMap, RgbImage, default_taxonomy
from scenetext.scenario import SCENARIO_NAMES, default_road_rules
from scenetext.synth import LIGHT_RGB, ObjectSpec, SceneSpec, crossing_spec, generate_frame, with_light

from oracles import random_report

TAX = default_taxonomy()
RED = "The traffic light is red, please slow down and stop."
ZEBRA = "There is an intersection, please be careful."
LATERAL = "There is an interaction in the vertical direction, please keep a safe distance"


def _flat_model():
    return empty_ensemble(SCENARIO_NAMES, feature_names(len(TAX)), np.log([0.1, 0.2, 0.3, 0.4]))


def _frames(spec):
    out = []
    for t in range(spec.frames):
        m, rgb, _ = generate_frame(spec, t, TAX)
        out.append(Frame(f"{t:04d}", m, rgb))
    return out


def _solid(rgb, n=4):
    return RgbImage(np.tile(np.array(rgb, dtype=np.uint8), (1, n, 1)))


@pytest.mark.parametrize("name", ["red", "green", "yellow"])
def test_light_color_palette(name):
    assert light_color(_solid(LIGHT_RGB[name]), np.ones((1, 4), bool)) == name


def test_light_color_unknown_cases():
    mask = np.ones((1, 4), bool)
    assert light_color(_solid((35, 35, 35)), mask) == "unknown"  # dark housing
    assert light_color(_solid((200, 200, 200)), mask) == "unknown"  # unsaturated
    assert light_color(_solid((20, 20, 240)), mask) == "unknown"  # blue hue
    assert light_color(_solid((255, 0, 0)), np.zeros((1, 4), bool)) == "unknown"
    # one lit pixel out of ten is below the default 20% floor
    px = np.tile(np.array([35, 35, 35], np.uint8), (1, 10, 1))
    px[0, 0] = LIGHT_RGB["red"]
    assert light_color(RgbImage(px), np.ones((1, 10), bool)) == "unknown"
    assert light_color(RgbImage(px), np.ones((1, 10), bool), LightColorConfig(min_fraction=0.05)) == "red"


def test_light_color_tie_prefers_red():
    px = np.array([[LIGHT_RGB["green"], LIGHT_RGB["red"]]], dtype=np.uint8)
    assert light_color(RgbImage(px), np.ones((1, 2), bool)) == "red"


def test_red_light_frame_reports_red():
    spec = crossing_spec(light="red")
    reps = build_reports(_frames(spec), _flat_model(), TAX, default_road_rules(), default_rules())
    for rep in reps:
        sign = [e for e in rep.elements if e.name == "Sign"]
        assert sign and sign[0].attribute == "red"
        assert rep.advisories[:2] == [RED, ZEBRA]
        assert rep.road_type == "Cross"


def test_green_light_no_red_message():
    reps = build_reports(_frames(with_light(crossing_spec(), "green")), _flat_model(), TAX,
                         default_road_rules(), default_rules())
    assert all(RED not in r.advisories for r in reps)


def test_reports_track_crossing_car():
    reps = build_reports(_frames(crossing_spec()), _flat_model(), TAX, default_road_rules(), default_rules())
    assert reps[0].tracks[0].vx is None
    for t, rep in enumerate(reps[1:], start=1):
        (tr,) = rep.tracks
        assert (tr.vx, tr.vy) == (100.0, 20.0)
        assert tr.ttc == pytest.approx((96 - (60 + 2 * t)) / 20)
        assert rep.complexity.ttc == pytest.approx(tr.ttc)
    # lateral flow fires once the car reaches the middle third of the frame
    fired = [LATERAL in r.advisories for r in reps]
    assert fired == [False, False, False, True, True, True, True, True]


def test_severe_conflict_message():
    spec = SceneSpec("EmergencyAvoidance", "Ground", objects=[ObjectSpec("Pedestrian", 80.0, 60.0, 0.0, 30.0, 4, 9)],
                     frames=3)
    reps = build_reports(_frames(spec), _flat_model(), TAX, default_road_rules(), default_rules())
    # y = 63 at frame 1, closing at 30 px/s toward 96: TTC 1.1 s; frame 2: 1.0 s
    assert reps[1].tracks[0].severe is False
    assert reps[2].tracks[0].severe is True
    assert "Severe conflict: time to collision is 1.00 s, brake now." in reps[2].advisories


def test_reports_are_causal():
    frames = _frames(crossing_spec())
    full = build_reports(frames, _flat_model(), TAX, default_road_rules(), default_rules())
    head = build_reports(frames[:4], _flat_model(), TAX, default_road_rules(), default_rules())
    assert [r.dumps() for r in full[:4]] == [r.dumps() for r in head]


def test_variety_by_road_type():
    frames = _frames(crossing_spec())[:1]
    cfg = ExplainConfig(variety_m_by_road={"Cross": 50.0})
    rep = build_reports(frames, _flat_model(), TAX, default_road_rules(), [], cfg)[0]
    assert rep.complexity.m == 50.0


def test_rule_parsing_rejects_unsafe():
    for bad in ['__import__("os")', "light.upper()", "x > 1", "present(light)", "lambda: 1", "1 +"]:
        with pytest.raises(ValueError):
            AdvisoryRule("r", bad, "m")
    with pytest.raises(ValueError):
        AdvisoryRule("r", "True", "value {unknown}")
    with pytest.raises(ValueError):
        parse_rules({"name": "r"})
    with pytest.raises(ValueError):
        parse_rules([{"name": "r", "when": "True"}])


def test_rule_evaluation():
    els = [ElementState("Zebra line", 9, True, 40, (1.0, 2.0)), ElementState("Sign", 5, True, 4, (0.0, 0.0), "red")]
    tracks = [TrackSummary(0, 50.0, 10.0, -40.0, 5.0, 0.0, 0.0, 2.5, False, 3)]
    rules = parse_rules([
        {"name": "a", "when": 'present("Zebra line") and area("Zebra line") > 30', "message": "zebra"},
        {"name": "b", "when": 'light in ("red", "yellow") and not severe', "message": "light {light}"},
        {"name": "c", "when": "min_ttc < 3 and n_tracks == 1", "message": "ttc {min_ttc:.1f}"},
        {"name": "d", "when": 'max_abs_vx > 30 and scenario == "CutIn"', "message": "d"},
        {"name": "e", "when": "min_ttc == inf", "message": "e"},
        {"name": "f", "when": "lateral_speed_center > 30", "message": "f"},
    ])
    out = apply_rules(els, tracks, rules, 150, scenario="CutIn")
    assert out == ["zebra", "light red", "ttc 2.5", "d", "f"]
    assert apply_rules([], [], rules, 150) == ["e"]


def test_stage_errors():
    frames = [Frame("0", LabelMap(np.array([[30]])))]
    with pytest.raises(StageError) as info:
        build_reports(frames, _flat_model(), TAX, default_road_rules(), [])
    assert info.value.stage == "labelmap"
    bad_model = empty_ensemble(SCENARIO_NAMES, ["x"], np.zeros(4))
    with pytest.raises(StageError) as info:
        build_report(Frame("0", LabelMap(np.zeros((4, 4), dtype=int))), bad_model, TAX, default_road_rules(), [])
    assert info.value.stage == "scenario"
    assert str(info.value).startswith("[scenario]")


def test_render_text_mentions_messages():
    reps = build_reports(_frames(crossing_spec()), _flat_model(), TAX, default_road_rules(), default_rules())
    text = reps[3].render_text()
    assert "Road type: Cross" in text and RED in text and "Track 0" in text


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_report_round_trip_property(seed):
    rep = random_report(np.random.default_rng(seed))
    assert ExplanationReport.loads(rep.dumps()).dumps() == rep.dumps()
    json.loads(rep.dumps())
