"""End-to-end synthetic run: corpus -> CV -> RFE -> model -> crossing-sequence reports.

    python3 scripts/run_pipeline.py --out runs/demo --count 400
"""
import argparse
import json
import time
from pathlib import Path

from scenetext.explain import Frame, build_reports, default_rules
from scenetext.features import rfe_select
from scenetext.gbdt import TrainConfig, save_model, train
from scenetext.labelmap import default_taxonomy
from scenetext.scenario import cross_validate, default_road_rules
from scenetext.synth import crossing_spec, generate_corpus, generate_frame


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/demo")
    ap.add_argument("--count", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--skip-rfe", action="store_true", help="RFE over all 92 features takes a few minutes")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tax = default_taxonomy()
    cfg = TrainConfig(seed=args.seed)

    t0 = time.perf_counter()
    corpus = generate_corpus(args.count, args.seed, out / "corpus", tax)
    print(f"corpus: {args.count} frames in {time.perf_counter() - t0:.1f} s")

    t0 = time.perf_counter()
    cv = cross_validate(corpus.dataset, args.folds, cfg, args.seed)
    print(f"{args.folds}-fold macro F1 {cv.f1_macro:.4f} ({time.perf_counter() - t0:.1f} s)")
    for name, row in zip(cv.classes, cv.confusion.counts):
        print(f"  {name:>20s} {row.tolist()}")
    (out / "cv.json").write_text(json.dumps(cv.to_json(), indent=1) + "\n")

    if not args.skip_rfe:
        small = TrainConfig(rounds=10, max_depth=3)
        sel = rfe_select(corpus.dataset, args.folds, 4, small, args.seed)
        print("RFE keeps", ", ".join(sel.selected))
        (out / "rfe.json").write_text(json.dumps(sel.to_json(), indent=1) + "\n")

    model = train(corpus.dataset, cfg)
    save_model(model, out / "model.json")

    spec = crossing_spec(seed=args.seed, light="red")
    frames = []
    for t in range(spec.frames):
        m, rgb, _ = generate_frame(spec, t, tax)
        frames.append(Frame(f"{t:04d}", m, rgb))
    reports = build_reports(frames, model, tax, default_road_rules(), default_rules())
    with open(out / "crossing.ndjson", "w") as fh:
        for r in reports:
            fh.write(r.dumps() + "\n")
    print()
    print(reports[-1].render_text())


if __name__ == "__main__":
    main()
