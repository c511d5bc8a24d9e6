"""Detection plumbing on a planted target, no training involved.

A dark square sits on a white canvas. Proposals come from edge density, a
hand-built ring template scores them (positive weight on the crop border,
negative inside, so a crop that frames the square wins), overlapping
detections are suppressed, and the survivors are scored against the ground
truth. Because every piece is deterministic, the average precision should
come out exactly 1.0; anything else means a cog slipped.

The second half mislabels some detections on purpose and runs the
false-positive diagnosis to show how errors are binned into
localization / similar-class / other-class / background.
"""

from pathlib import Path

import numpy as np

from twostream import (
    BoundingBox,
    Detection,
    FullyConnected,
    GroundTruthBox,
    Image,
    NetworkSpec,
    Softmax,
    TrainedModel,
    diagnose_false_positives,
    edge_density_proposals,
    evaluate_detections,
    init_params,
    nms_grouped,
    score_proposals,
)
from twostream.report import pr_curve_svg, write_text

OUT = Path(__file__).resolve().parent / "out" / "detect_and_diagnose"


def ring_model(side=8):
    w2d = np.full((side, side), -0.1)
    w2d[0, :] = w2d[-1, :] = 0.1
    w2d[:, 0] = w2d[:, -1] = 0.1
    w = np.zeros((side * side, 2))
    w[:, 0] = w2d.reshape(-1)
    spec = NetworkSpec((side, side, 1), (FullyConnected(2), Softmax()))
    params = init_params(spec, 0)
    params.layers[0]["w"][:] = w
    params.layers[0]["b"][:] = [-1.4, 0.0]
    return TrainedModel(spec, params, ("target", "background"))


def main():
    scene = np.ones((64, 64, 1))
    scene[20:44, 20:44] = 0.0
    image = Image(scene)
    truth = [GroundTruthBox("scene", 0, BoundingBox(20, 20, 43, 43))]

    proposals = edge_density_proposals(image, max_proposals=30)
    print(f"{len(proposals)} proposals from edge density")

    model = ring_model()
    detections = score_proposals(model, model, image, proposals, 0.5,
                                 image_id="scene")
    kept = nms_grouped(detections, 0.3)
    print(f"{len(detections)} above threshold, {len(kept)} after suppression")
    for d in kept[:3]:
        print(f"  score {d.score:.3f} box ({d.box.x1},{d.box.y1},"
              f"{d.box.x2},{d.box.y2})")

    result = evaluate_detections(kept, truth, ("target",))
    ap = result["per_class"]["target"]
    print(f"average precision: {ap.ap:.3f} (want exactly 1.0)")
    write_text(OUT / "pr_target.svg",
               pr_curve_svg(ap.recall, ap.precision, title="target"))
    print(f"PR curve -> {OUT / 'pr_target.svg'}")

    # now a contrived error mix: correct hit, a shifted box, a hit on the
    # wrong-but-related class, one on an unrelated class, and one on nothing
    classes = ("cup", "mug", "lamp")
    groups = {"drinkware": ("cup", "mug"), "lighting": ("lamp",)}
    B = BoundingBox
    gts = [GroundTruthBox("room", 0, B(10, 10, 29, 29)),
           GroundTruthBox("room", 1, B(60, 10, 79, 29)),
           GroundTruthBox("room", 2, B(10, 60, 29, 79))]
    dets = [Detection("room", 0, 0.95, B(10, 10, 29, 29)),   # true positive
            Detection("room", 0, 0.90, B(16, 10, 35, 29)),   # off target
            Detection("room", 0, 0.85, B(62, 12, 81, 31)),   # that's the mug
            Detection("room", 0, 0.80, B(12, 62, 31, 81)),   # that's the lamp
            Detection("room", 0, 0.75, B(100, 100, 119, 119))]  # thin air
    report = diagnose_false_positives(dets, gts, classes, groups)
    print(f"\ndiagnosis over {report.examined} false positives:")
    for group, counts in sorted(report.group_counts.items()):
        row = "  ".join(f"{k} {v}" for k, v in counts.items())
        print(f"  {group:10s} {row}")


if __name__ == "__main__":
    main()
