"""The whole pipeline through the command line, start to finish.

Builds a tiny self-contained workspace (procedural "brick" and "wood"
texture photos, polygon templates, two annotated evaluation scenes), then
drives every subcommand in dependency order:

    synth       render shape-stream training images from the templates
    prune       crop the texture corpus and drop low-density crops
    train x2    fit the texture and shape streams
    eval-cls    classification accuracy per stream and fused
    detect-eval proposals, fused scoring, suppression, AP, diagnosis
    diagnose    rerun the error analysis from saved detections

Everything is seeded, so a second run reproduces the artifacts byte for
byte. Outputs land in demos/out/full_pipeline/; poke around runs/ when it
finishes, the reports are plain text and JSON, the plots are SVG.
"""

import json
import shutil
from pathlib import Path

import numpy as np

from twostream import (
    BoundingBox,
    DatasetManifest,
    Image,
    LabeledSample,
    save_image,
    save_manifest,
)
from twostream.cli import main as cli

OUT = Path(__file__).resolve().parent / "out" / "full_pipeline"
CLASSES = ("brick", "wood")


def brickish(rng, side=48):
    img = np.full((side, side), 0.55)
    img[::6, :] = 0.2
    img[:, ::8] = 0.2
    return np.clip(img + rng.normal(0, 0.03, img.shape), 0, 1)


def woodish(rng, side=48):
    img = 0.5 + 0.3 * np.sin(np.arange(side) / 2.5)[None, :] * np.ones((side, 1))
    return np.clip(img + rng.normal(0, 0.03, img.shape), 0, 1)


def build_workspace(root):
    rng = np.random.default_rng(99)
    tex_dir = root / "textures"
    samples = []
    for label, make in enumerate((brickish, woodish)):
        for i in range(3):
            rel = f"{CLASSES[label]}-{i}.png"
            save_image(Image(make(rng)), tex_dir / rel)
            samples.append(LabeledSample(rel, label, "train"))
    save_manifest(DatasetManifest(CLASSES, tuple(samples)),
                  tex_dir / "manifest.jsonl")

    (root / "templates.json").write_text(json.dumps([
        {"class": "brick",
         "vertices": [[0.2, 0.2], [0.8, 0.2], [0.8, 0.8], [0.2, 0.8]]},
        {"class": "wood",
         "vertices": [[0.5, 0.15], [0.85, 0.85], [0.15, 0.85]]},
    ], indent=1))

    eval_dir = root / "eval"
    eval_samples = []
    boxes = (BoundingBox(4, 4, 43, 43), BoundingBox(0, 0, 47, 47))
    for label, make in enumerate((brickish, woodish)):
        rel = f"scene-{CLASSES[label]}.png"
        save_image(Image(make(rng)), eval_dir / rel)
        eval_samples.append(LabeledSample(rel, label, "test",
                                          boxes=(boxes[label],)))
    save_manifest(DatasetManifest(CLASSES, tuple(eval_samples)),
                  eval_dir / "manifest.jsonl")

    stream = {"input_size": 16, "channels": 1, "background_negatives": 4,
              "learning_rate": 0.01, "batch_size": 16, "epochs": 5,
              "dropout": 0.25}
    config = {
        "classes": list(CLASSES),
        "similarity_groups": {"materials": list(CLASSES)},
        "seed": 0,
        "paths": {
            "output_dir": "runs",
            "templates": "templates.json",
            "texture_corpus": "textures/manifest.jsonl",
            # later stages read what earlier stages wrote
            "texture_train": "runs/prune/manifest.jsonl",
            "shape_train": "runs/synth/manifest.jsonl",
            "eval": "eval/manifest.jsonl",
            "backgrounds": "textures/manifest.jsonl",
            "texture_model": "runs/train-texture/model.bin",
            "shape_model": "runs/train-shape/model.bin",
            "detections": "runs/detect-eval/detections.txt",
        },
        "synthesis": {"width": 32, "height": 32, "fill": "uniform-gray",
                      "pose_mode": "axis-sweep", "pose_step": 10},
        "pruning": {"crops_per_image": 10, "retention": 0.8, "patch_size": 8},
        "streams": {"texture": dict(stream), "shape": dict(stream)},
        "proposals": {"kind": "sliding-window", "scales": [40, 48],
                      "aspect_ratios": [1.0], "stride_fraction": 0.25},
        "detection": {"score_threshold": 0.2, "top_k_fp": 5},
    }
    cfg = root / "run.json"
    cfg.write_text(json.dumps(config, indent=1))
    return cfg


def main():
    if OUT.exists():
        shutil.rmtree(OUT)  # demo owns this directory, stale runs confuse it
    OUT.mkdir(parents=True)
    cfg = build_workspace(OUT)
    print(f"workspace built under {OUT}\n")

    for argv in (["synth"], ["prune"], ["train", "--stream", "texture"],
                 ["train", "--stream", "shape"], ["eval-cls"],
                 ["detect-eval"], ["diagnose"]):
        code = cli([*argv, "--config", str(cfg)])
        if code != 0:
            raise SystemExit(f"{argv} failed with exit code {code}")

    summary = json.loads((OUT / "runs/eval-cls/summary.json").read_text())
    print(f"\nfused classification accuracy: {summary['overall']['fused']:.2f}")
    report = json.loads((OUT / "runs/detect-eval/report.json").read_text())
    print(f"detection mAP: {report['map']:.2f}")
    print(f"\nreadable reports:\n  {OUT / 'runs/eval-cls/report.txt'}\n"
          f"  {OUT / 'runs/detect-eval/report.txt'}")


if __name__ == "__main__":
    main()
