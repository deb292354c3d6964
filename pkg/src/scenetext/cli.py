"""``scenetext`` command line.

Exit codes: 0 success, 1 validation error, 2 I/O error.  Diagnostics go to
stderr; reports go to stdout unless ``--out`` names a file.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import labelmap as lm
from .complexity import DEFAULT_N_MAX
from .explain import ExplainConfig, Frame, StageError, build_reports, default_rules, load_rules
from .features import (extract_features, feature_names, read_feature_csv, rfe_select,
                       write_feature_csv)
from .gbdt import TrainConfig, load_model, save_model, train
from .metrics import ConfusionMatrix, ProbabilityField, confusion, cross_entropy, metrics_report
from .motion import MotionConfig, frame_centers, track, write_trajectory_csv
from .scenario import cross_validate, default_road_rules, load_road_rules
from .synth import SceneSpec, generate_corpus, write_sequence

LABEL_SUFFIXES = (".pgm", ".png")
RGB_SUFFIXES = (".ppm", ".png")


@dataclasses.dataclass
class RunConfig:
    taxonomy: str | None = None
    model: str | None = None
    rules: str | None = None
    road_rules: str | None = None
    eps: float | None = None
    eps_fraction: float = 0.02
    min_pts: int = 8
    fps: float = 10.0
    max_jump: float = 40.0
    ego_line: float | None = None
    severe_ttc: float = 1.0
    classes: list[str] = dataclasses.field(default_factory=lambda: ["Car", "nmt", "Pedestrian"])
    variety_m: float = 78.8
    variety_m_by_road: dict[str, float] = dataclasses.field(default_factory=dict)
    n_max: int = DEFAULT_N_MAX
    seed: int = 0
    folds: int = 5
    target_size: int = 4
    rounds: int = 50
    depth: int = 4
    gamma: float = 0.0
    lambda_: float = 1.0
    eta: float = 0.3
    min_child_weight: float = 1e-3
    mode: str = "normalized"
    policy: str = "exclude_absent"
    jobs: int = 1

    @classmethod
    def load(cls, path: str | None, overrides: dict[str, Any]) -> "RunConfig":
        data: dict[str, Any] = {}
        if path:
            with open(path) as fh:
                try:
                    data = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"config {path}: not valid JSON ({exc})") from exc
            if not isinstance(data, dict):
                raise ValueError(f"config {path}: expected a JSON object")
            if "lambda" in data:
                data["lambda_"] = data.pop("lambda")
            known = {f.name for f in dataclasses.fields(cls)}
            unknown = sorted(set(data) - known)
            if unknown:
                raise ValueError(f"config {path}: unknown key(s) {unknown}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        cfg = cls(**data)
        for key in ("taxonomy", "model", "rules", "road_rules"):
            p = getattr(cfg, key)
            if p is not None and p != "default" and not Path(p).exists():
                raise FileNotFoundError(f"{key} file {p} does not exist")
        return cfg

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.rounds, self.depth, self.gamma, self.lambda_, self.eta,
                           self.min_child_weight, self.seed)

    def motion_config(self) -> MotionConfig:
        return MotionConfig(self.eps, self.eps_fraction, self.min_pts, self.fps, self.max_jump,
                            self.ego_line, self.severe_ttc)

    def tax(self) -> lm.ClassTaxonomy:
        return lm.load_taxonomy(self.taxonomy) if self.taxonomy else lm.default_taxonomy()


def _files(path: Path, suffixes: Sequence[str]) -> list[Path]:
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise FileNotFoundError(f"{path} does not exist")
    return sorted(p for p in path.iterdir() if p.suffix.lower() in suffixes)


def _pmap(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, allow_nan=False) + "\n"


# --- workers (module level so they pickle) ------------------------------------

def _gray_job(job):
    src, dst, mode, tax_json = job
    gray = lm.rgb_to_gray(lm.load_rgb(src), mode)
    if tax_json is not None:
        lm.save_labelmap(lm.gray_to_labelmap(gray, lm.ClassTaxonomy.from_json(tax_json)), dst)
    else:
        lm.save_gray(gray, dst)


def _extract_job(job):
    path, tax_json = job
    tax = lm.ClassTaxonomy.from_json(tax_json)
    return extract_features(lm.load_labelmap(path, tax), tax).as_array()


# --- commands -----------------------------------------------------------------

def cmd_gray(a, cfg: RunConfig) -> int:
    src, dst = Path(a.input), Path(a.output)
    files = _files(src, RGB_SUFFIXES)
    tax_json = cfg.tax().to_json() if a.to_labels else None
    if src.is_dir():
        dst.mkdir(parents=True, exist_ok=True)
        jobs = [(f, dst / (f.stem + ".pgm"), cfg.mode, tax_json) for f in files]
    else:
        jobs = [(src, dst, cfg.mode, tax_json)]
    _pmap(_gray_job, jobs, cfg.jobs)
    return 0


def cmd_eval_seg(a, cfg: RunConfig) -> int:
    tax = cfg.tax()
    k = len(tax)
    truth_files = {p.stem: p for p in _files(Path(a.truth_dir), LABEL_SUFFIXES)}
    pred_dir = Path(a.pred_dir)
    pred_files = {p.stem: p for p in _files(pred_dir, LABEL_SUFFIXES)}
    if set(truth_files) != set(pred_files):
        missing = sorted(set(truth_files) ^ set(pred_files))
        raise ValueError(f"prediction and truth frames differ: {missing[:5]}")
    if not truth_files:
        raise ValueError("no label maps to evaluate")
    counts = np.zeros((k, k), dtype=np.int64)
    ce_sum, n_pix = 0.0, 0
    for stem in sorted(truth_files):
        truth = lm.load_labelmap(truth_files[stem], tax)
        pred = lm.load_labelmap(pred_files[stem], tax)
        counts += confusion(pred, truth, k).counts
        prob_path = pred_dir / f"{stem}.npy"
        field = ProbabilityField(np.load(prob_path)) if prob_path.exists() else ProbabilityField.one_hot(pred, k)
        ce_sum += cross_entropy(field, truth) * truth.cells.size
        n_pix += truth.cells.size
    report = metrics_report(ConfusionMatrix(counts), ce_sum / n_pix, cfg.policy)
    _emit(_dump(report), a.out)
    return 0


def cmd_migrate(a, cfg: RunConfig) -> int:
    target = cfg.tax()
    if a.rules_file == "cityscapes":
        rules, source = lm.cityscapes_migration(), lm.cityscapes_taxonomy()
    else:
        rules = lm.load_migration(a.rules_file)
        source = lm.load_taxonomy(a.source_taxonomy) if a.source_taxonomy else None
    if source is not None and not rules.is_total(source):
        missing = [e.name for e in source if e.id not in rules.rules]
        raise ValueError(f"migration rules are not total over the source taxonomy; missing {missing}")
    src, dst = Path(a.input), Path(a.output)
    files = _files(src, LABEL_SUFFIXES)
    if src.is_dir():
        dst.mkdir(parents=True, exist_ok=True)
    for f in files:
        m = lm.load_labelmap(f, source)
        out = dst / (f.stem + ".pgm") if src.is_dir() else dst
        lm.save_labelmap(lm.migrate(m, rules, target), out)
    return 0


def _read_labels(path) -> dict[str, str]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        col = "label" if "label" in (rd.fieldnames or []) else "scenario"
        if "frame_id" not in (rd.fieldnames or []) or col not in (rd.fieldnames or []):
            raise ValueError(f"{path}: labels CSV needs frame_id and label/scenario columns")
        return {r["frame_id"]: r[col] for r in rd}


def cmd_extract(a, cfg: RunConfig) -> int:
    tax = cfg.tax()
    files = _files(Path(a.frames), LABEL_SUFFIXES)
    if not files:
        raise ValueError(f"no label maps in {a.frames}")
    rows = _pmap(_extract_job, [(f, tax.to_json()) for f in files], cfg.jobs)
    ids = [f.stem for f in files]
    labels = None
    if a.labels:
        table = _read_labels(a.labels)
        missing = [i for i in ids if i not in table]
        if missing:
            raise ValueError(f"no label for frame(s) {missing[:5]}")
        labels = [table[i] for i in ids]
    write_feature_csv(a.output, np.array(rows), feature_names(len(tax)), labels, ids)
    return 0


def cmd_train(a, cfg: RunConfig) -> int:
    data = read_feature_csv(a.features)
    model = train(data, cfg.train_config())
    save_model(model, a.output)
    print(f"trained {model.rounds} rounds x {model.n_classes} classes; "
          f"training log-loss {model.train_loss[-1]:.4f}", file=sys.stderr)
    return 0


def cmd_select(a, cfg: RunConfig) -> int:
    data = read_feature_csv(a.features)
    sel = rfe_select(data, cfg.folds, cfg.target_size, cfg.train_config(), cfg.seed)
    _emit(_dump(sel.to_json()), a.out)
    return 0


def cmd_cv(a, cfg: RunConfig) -> int:
    data = read_feature_csv(a.features)
    res = cross_validate(data, cfg.folds, cfg.train_config(), cfg.seed)
    if a.out_csv:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["true\\pred", *res.classes])
        for name, row in zip(res.classes, res.confusion.counts):
            wr.writerow([name, *row.tolist()])
        Path(a.out_csv).write_text(buf.getvalue())
    _emit(_dump(res.to_json()), a.out)
    return 0


def _load_sequence(frames_dir, tax) -> list[tuple[Path, lm.LabelMap]]:
    files = _files(Path(frames_dir), LABEL_SUFFIXES)
    if not files:
        raise ValueError(f"no label maps in {frames_dir}")
    return [(f, lm.load_labelmap(f, tax)) for f in files]


def cmd_track(a, cfg: RunConfig) -> int:
    tax = cfg.tax()
    seq = _load_sequence(a.frames, tax)
    ids = [tax.id_of(n) for n in cfg.classes]
    mc = cfg.motion_config()
    centers = [frame_centers(m, ids, mc) for _, m in seq]
    tracks = track(centers, mc.fps, mc.max_jump)
    ego = mc.ego_line if mc.ego_line is not None else float(seq[0][1].height)
    buf = io.StringIO()
    write_trajectory_csv(buf, tracks, ego)
    _emit(buf.getvalue(), a.out)
    return 0


def cmd_explain(a, cfg: RunConfig) -> int:
    tax = cfg.tax()
    seq = _load_sequence(a.frames, tax)
    rgb_dir = Path(a.rgb_dir)
    if not rgb_dir.is_dir():
        raise FileNotFoundError(f"RGB directory {rgb_dir} does not exist")
    frames = []
    for path, m in seq:
        rgb = None
        for suf in RGB_SUFFIXES:
            cand = rgb_dir / (path.stem + suf)
            if cand.exists():
                rgb = lm.load_rgb(cand)
                break
        frames.append(Frame(path.stem, m, rgb))
    model = load_model(a.model)
    rules = default_rules() if a.rules == "default" else load_rules(a.rules)
    road_rules = load_road_rules(cfg.road_rules) if cfg.road_rules not in (None, "default") else default_road_rules()
    ecfg = ExplainConfig(cfg.motion_config(), tuple(cfg.classes), cfg.variety_m,
                         dict(cfg.variety_m_by_road), cfg.n_max)
    reports = build_reports(frames, model, tax, road_rules, rules, ecfg)
    if a.text:
        text = "\n\n".join(r.render_text() for r in reports) + "\n"
    else:
        text = "".join(r.dumps() + "\n" for r in reports)
    _emit(text, a.out)
    if a.complexity_csv:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["frame_id", "C", "m", "n", "n_max", "ttc", "d"])
        for r in reports:
            c = r.complexity
            wr.writerow([r.frame_id, repr(c.C), repr(c.m), c.n, c.n_max,
                         "inf" if c.ttc is None else repr(c.ttc), repr(c.d)])
        Path(a.complexity_csv).write_text(buf.getvalue())
    return 0


def cmd_synth(a, cfg: RunConfig) -> int:
    if len(a.paths) == 2:
        spec_path, out = a.paths
    elif len(a.paths) == 1:
        spec_path, out = None, a.paths[0]
    else:
        raise ValueError("usage: synth [SPEC.json] OUT_DIR")
    tax = cfg.tax()
    out_dir = Path(out)
    if spec_path:
        data = json.loads(Path(spec_path).read_text())
        specs = [SceneSpec.from_json(d) for d in (data if isinstance(data, list) else [data])]
        for i, spec in enumerate(specs):
            write_sequence(spec, out_dir, tax, prefix=f"{i:03d}_" if len(specs) > 1 else "")
        return 0
    if a.count is None:
        raise ValueError("synth needs a spec file or --count")
    corpus = generate_corpus(a.count, cfg.seed, out_dir, tax)
    print(f"wrote {len(corpus.dataset)} frames to {out_dir}", file=sys.stderr)
    return 0


# --- argument parsing ---------------------------------------------------------

def _train_flags(p):
    p.add_argument("--rounds", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--min-child-weight", dest="min_child_weight", type=float)
    p.add_argument("--seed", type=int)


def _motion_flags(p):
    p.add_argument("--classes", type=lambda s: [c.strip() for c in s.split(",") if c.strip()],
                   help="comma-separated conflict class names")
    p.add_argument("--eps", type=float)
    p.add_argument("--min-pts", dest="min_pts", type=int)
    p.add_argument("--fps", type=float)
    p.add_argument("--max-jump", dest="max_jump", type=float)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config; flags override its keys")
    common.add_argument("--taxonomy", help="taxonomy JSON (default: built-in 23-class table)")
    common.add_argument("--jobs", type=int, help="frame-level worker processes")

    ap = argparse.ArgumentParser(prog="scenetext", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gray", parents=[common], help="RGB images -> gray-scale PGM")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--mode", choices=["normalized", "literal"])
    p.add_argument("--to-labels", action="store_true", help="snap gray levels to taxonomy class ids")
    p.set_defaults(func=cmd_gray)

    p = sub.add_parser("eval-seg", parents=[common], help="mIoU / cross-entropy / F1 of predicted label maps")
    p.add_argument("pred_dir")
    p.add_argument("truth_dir")
    p.add_argument("--policy", choices=["exclude_absent", "include_absent"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_seg)

    p = sub.add_parser("migrate", parents=[common], help="remap label maps onto the target taxonomy")
    p.add_argument("input")
    p.add_argument("rules_file", metavar="rules", help="migration rules JSON, or 'cityscapes'")
    p.add_argument("output")
    p.add_argument("--source-taxonomy", dest="source_taxonomy")
    p.set_defaults(func=cmd_migrate)

    p = sub.add_parser("extract", parents=[common], help="label maps -> feature CSV")
    p.add_argument("frames")
    p.add_argument("output", metavar="out.csv")
    p.add_argument("--labels", help="CSV with frame_id and label (or scenario) columns")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="train the scenario classifier")
    p.add_argument("features")
    p.add_argument("output", metavar="out.model")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("select", parents=[common], help="recursive feature elimination report")
    p.add_argument("features")
    p.add_argument("--folds", type=int)
    p.add_argument("--target-size", dest="target_size", type=int)
    p.add_argument("--out")
    _train_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("track", parents=[common], help="conflict-object trajectories, kinematics and TTC")
    p.add_argument("frames")
    _motion_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("explain", parents=[common], help="NDJSON explanation reports for a frame sequence")
    p.add_argument("frames")
    p.add_argument("rgb_dir")
    p.add_argument("model")
    p.add_argument("rules", help="advisory rule JSON, or 'default'")
    p.add_argument("--road-rules", dest="road_rules")
    p.add_argument("--text", action="store_true", help="human-readable output instead of NDJSON")
    p.add_argument("--complexity-csv", dest="complexity_csv")
    p.add_argument("--out")
    _motion_flags(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("synth", parents=[common], help="synthetic frames, features and ground truth")
    p.add_argument("paths", nargs="+", metavar="[spec.json] out_dir")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cv", parents=[common], help="stratified k-fold confusion matrix and macro F1")
    p.add_argument("features")
    p.add_argument("--folds", type=int)
    p.add_argument("--out")
    p.add_argument("--out-csv", dest="out_csv")
    _train_flags(p)
    p.set_defaults(func=cmd_cv)
    return ap


_CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    try:
        overrides = {k: v for k, v in vars(a).items() if k in _CONFIG_KEYS}
        cfg = RunConfig.load(a.config, overrides)
        return a.func(a, cfg)
    except StageError as exc:
        print(f"scenetext {a.command}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, TypeError) as exc:
        print(f"scenetext {a.command}: [validation] {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"scenetext {a.command}: [io] {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
