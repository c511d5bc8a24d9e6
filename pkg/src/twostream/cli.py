"""Command line entry points for reproducible two-stream runs.

Subcommands: synth, prune, train, eval-cls, detect-eval, diagnose.
Every command reads one validated config file, derives all randomness from a
single master seed, and writes its artifacts plus a machine-readable
summary.json into its own subdirectory of the output directory. Timestamps
live only in run_meta.json, so a rerun with the same config and seed is
byte-identical everywhere else.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_run_config
from .detect import (
    edge_density_proposals,
    load_detections,
    load_proposals,
    nms_grouped,
    sample_negatives,
    score_proposals,
    sliding_window_proposals,
    write_detections,
)
from .evaluate import (
    GroundTruthBox,
    confusion,
    diagnose_false_positives,
    evaluate_detections,
    overall_accuracy,
    FP_CATEGORIES,
)
from .fusion import fuse_average
from .imagery import (
    BoundingBox,
    DatasetManifest,
    LabeledSample,
    crop,
    load_image,
    load_manifest,
    random_center_crops,
    resize_bilinear,
    save_image,
    save_manifest,
)
from .nnet import default_network_spec, forward, load_model, save_model, train
from .pruning import prune
from .report import confusion_svg, format_table, pr_curve_svg, write_json, write_text
from .seeding import derive_rng
from .synth import (
    RenderConfig,
    apply_statistics_matching,
    default_pose_grid,
    enumerate_poses,
    load_templates,
    mean_image,
    render_silhouette,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_DATA = 4
EXIT_LOCKED = 5


class MissingInputError(Exception):
    """A path the command needs is unset in the config or absent on disk."""


class LockHeldError(Exception):
    """Another command holds the output-directory lock."""


# ---------------------------------------------------------------------------
# Shared plumbing

def _require_path(config: RunConfig, name: str, must_exist: bool = True) -> Path:
    p = getattr(config.paths, name)
    if p is None:
        raise MissingInputError(f"config paths.{name} is required by this command")
    if must_exist and not p.exists():
        raise MissingInputError(f"paths.{name}: {p} does not exist")
    return p


@contextmanager
def _lock(out_dir: Path):
    path = out_dir / ".lock"
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
    except FileExistsError:
        raise LockHeldError(f"{path} exists: another command is using this "
                            "output directory (delete the file if it is stale)"
                            ) from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        path.unlink(missing_ok=True)


def _resolve(manifest_path: Path, sample: LabeledSample) -> Path:
    p = Path(sample.path)
    return p if p.is_absolute() else manifest_path.parent / p


def _load_corpus(manifest_path: Path) -> list:
    m = load_manifest(manifest_path)
    if not m.samples:
        raise ValueError(f"{manifest_path}: corpus manifest has no samples")
    return [load_image(_resolve(manifest_path, s)) for s in m.samples]


def _derived_seed(master: int, *tags) -> int:
    return int(derive_rng(master, *tags).integers(0, 2 ** 31))


def _check_classes(manifest: DatasetManifest, config: RunConfig, where) -> None:
    if manifest.class_names != config.classes:
        raise ValueError(f"{where}: manifest classes {manifest.class_names} "
                         f"differ from configured classes {config.classes}")


def _to_channels(image, channels: int):
    return image.as_rgb() if channels == 3 else image.as_gray()


def _model_batch(patches, model) -> np.ndarray:
    h, w, c = model.spec.input_shape
    batch = np.empty((len(patches), h, w, c))
    for i, patch in enumerate(patches):
        batch[i] = resize_bilinear(_to_channels(patch, c), w, h).data
    return batch


# ---------------------------------------------------------------------------
# synth

def cmd_synth(config: RunConfig, seed: int, out_dir: Path, args) -> dict:
    tpath = _require_path(config, "templates")
    templates = load_templates(tpath)
    if not templates:
        raise ValueError(f"{tpath}: no templates defined")
    for t in templates:
        if t.label not in config.classes:
            raise ValueError(f"template class {t.label!r} is not in the "
                             f"configured class list {config.classes}")

    syn = config.synthesis
    background_image = None
    corpus = ()
    if syn.background == "mean-image":
        corpus_images = _load_corpus(_require_path(config, "backgrounds"))
        background_image = mean_image(corpus_images, syn.width, syn.height)
    elif syn.background == "corpus-patch":
        corpus = tuple(_load_corpus(_require_path(config, "backgrounds")))
    rcfg = RenderConfig(width=syn.width, height=syn.height,
                        background=syn.background, fill=syn.fill,
                        sigma_blur=syn.sigma_blur, sigma_noise=syn.sigma_noise,
                        background_image=background_image,
                        background_corpus=corpus)
    poses = enumerate_poses(default_pose_grid(syn.pose_mode, syn.pose_step))

    subdir = out_dir / "synth"
    (subdir / "images").mkdir(parents=True, exist_ok=True)
    samples = []
    for ti, template in enumerate(templates):
        label = config.classes.index(template.label)
        for pi, pose in enumerate(poses):
            rng = derive_rng(seed, "synth", ti, pi)
            image, _ = render_silhouette(template, pose, rcfg, rng)
            if syn.statistics_matching:
                image = apply_statistics_matching(image, rcfg, rng)
            rel = f"images/{template.label}-{ti:03d}-{pi:05d}.png"
            save_image(image, subdir / rel)
            samples.append(LabeledSample(rel, label, "train"))
    save_manifest(DatasetManifest(config.classes, tuple(samples)),
                  subdir / "manifest.jsonl")
    return {"command": "synth", "seed": seed,
            "classes": list(config.classes),
            "templates": len(templates), "poses_per_template": len(poses),
            "images": len(samples), "manifest": "synth/manifest.jsonl"}


# ---------------------------------------------------------------------------
# prune

def cmd_prune(config: RunConfig, seed: int, out_dir: Path, args) -> dict:
    src = _require_path(config, "texture_corpus")
    manifest = load_manifest(src)
    _check_classes(manifest, config, src)
    pr = config.pruning
    feature_model = None
    if config.paths.feature_model is not None:
        feature_model = load_model(_require_path(config, "feature_model"))

    by_class: dict[int, list] = {i: [] for i in range(len(config.classes))}
    for si, sample in enumerate(manifest.samples):
        image = load_image(_resolve(src, sample))
        rng = derive_rng(seed, "prune", "crops", si)
        for ci, box in enumerate(random_center_crops(image, pr.crops_per_image, rng)):
            name = f"{Path(sample.path).stem}-{si:04d}-{ci:02d}.png"
            by_class[sample.label].append((crop(image, box), name, sample.split))

    subdir = out_dir / "prune"
    subdir.mkdir(parents=True, exist_ok=True)
    kept_samples = []
    rows = []
    for label, cname in enumerate(config.classes):
        patches = by_class[label]
        if len(patches) < 2:
            raise ValueError(f"class {cname!r} has {len(patches)} patches; "
                             "need at least 2 to fit a density model")
        if feature_model is not None:
            feats, _ = forward(feature_model,
                               _model_batch([p for p, _, _ in patches],
                                            feature_model))
        else:
            side = pr.patch_size
            feats = np.stack([
                resize_bilinear(p.as_gray(), side, side).data.ravel()
                for p, _, _ in patches])
        _, result = prune(feats, shrinkage=pr.shrinkage, retention=pr.retention)
        for idx in result.kept:
            patch, name, split = patches[idx]
            rel = f"patches/{cname}/{name}"
            save_image(patch, subdir / rel)
            kept_samples.append(LabeledSample(rel, label, split))
        rows.append({"class": cname, "epsilon": result.threshold,
                     "kept": len(result.kept), "removed": len(result.removed),
                     "retention": pr.retention})
    save_manifest(DatasetManifest(config.classes, tuple(kept_samples)),
                  subdir / "manifest.jsonl")
    write_json(subdir / "report.json", rows)
    return {"command": "prune", "seed": seed,
            "classes": list(config.classes),
            "patches": sum(r["kept"] + r["removed"] for r in rows),
            "kept": sum(r["kept"] for r in rows),
            "removed": sum(r["removed"] for r in rows),
            "manifest": "prune/manifest.jsonl", "report": "prune/report.json"}


# ---------------------------------------------------------------------------
# train

def cmd_train(config: RunConfig, seed: int, out_dir: Path, args) -> dict:
    stream = args.stream
    key = "texture_train" if stream == "texture" else "shape_train"
    mpath = _require_path(config, key)
    manifest = load_manifest(mpath)
    _check_classes(manifest, config, mpath)
    st = config.streams[stream]
    side, ch = st.input_size, st.channels

    xs, ys = [], []
    for sample in manifest.samples:
        if sample.split != "train":
            continue
        image = load_image(_resolve(mpath, sample), channels=ch)
        xs.append(resize_bilinear(image, side, side).data)
        ys.append(sample.label)
    if not xs:
        raise ValueError(f"{mpath}: no samples in the train split")

    names = config.classes
    if st.background_negatives:
        corpus = _load_corpus(_require_path(config, "backgrounds"))
        rng = derive_rng(seed, "train", stream, "negatives")
        for patch in sample_negatives(corpus, st.background_negatives, side, rng):
            xs.append(_to_channels(patch, ch).data)
            ys.append(len(names))
        names = names + ("background",)

    spec = default_network_spec(len(names), (side, side, ch),
                                dropout=st.train.dropout)
    tconf = replace(st.train, seed=_derived_seed(seed, "train", stream))
    losses: list[float] = []
    model = train((np.stack(xs), np.array(ys)), spec, tconf, names,
                  on_epoch=lambda _, loss: losses.append(loss))

    subdir = out_dir / f"train-{stream}"
    subdir.mkdir(parents=True, exist_ok=True)
    save_model(model, subdir / "model.bin")
    write_text(subdir / "loss_log.txt",
               "".join(f"{i} {loss:.6f}\n" for i, loss in enumerate(losses)))
    return {"command": "train", "stream": stream, "seed": seed,
            "classes": list(names), "samples": len(ys),
            "epochs": tconf.epochs, "losses": losses,
            "model": f"train-{stream}/model.bin",
            "loss_log": f"train-{stream}/loss_log.txt"}


# ---------------------------------------------------------------------------
# eval-cls

def _load_eval_samples(config: RunConfig):
    mpath = _require_path(config, "eval")
    manifest = load_manifest(mpath)
    _check_classes(manifest, config, mpath)
    samples = [s for s in manifest.samples if s.split == "test"] or \
        list(manifest.samples)
    return mpath, samples


def _load_stream_models(config: RunConfig):
    mt = load_model(_require_path(config, "texture_model"))
    ms = load_model(_require_path(config, "shape_model"))
    if mt.class_names != ms.class_names:
        raise ValueError("stream models disagree on the class list: "
                         f"{mt.class_names} vs {ms.class_names}")
    n_fg = len(config.classes)
    if (tuple(mt.class_names[:n_fg]) != config.classes
            or len(mt.class_names) not in (n_fg, n_fg + 1)):
        raise ValueError(f"model classes {mt.class_names} do not extend the "
                         f"configured classes {config.classes}")
    return mt, ms


def cmd_eval_cls(config: RunConfig, seed: int, out_dir: Path, args) -> dict:
    mpath, samples = _load_eval_samples(config)
    mt, ms = _load_stream_models(config)
    n_fg = len(config.classes)

    patches, labels = [], []
    for sample in samples:
        image = load_image(_resolve(mpath, sample))
        boxes = sample.boxes or (BoundingBox(0, 0, image.width - 1,
                                             image.height - 1),)
        for box in boxes:
            patches.append(crop(image, box))
            labels.append(sample.label)
    if not patches:
        raise ValueError(f"{mpath}: nothing to evaluate")
    labels = np.array(labels)

    _, post_t = forward(mt, _model_batch(patches, mt))
    _, post_s = forward(ms, _model_batch(patches, ms))
    post_f = np.stack([fuse_average(a, b) for a, b in zip(post_t, post_s)])
    preds = {"texture": np.argmax(post_t[:, :n_fg], axis=1),
             "shape": np.argmax(post_s[:, :n_fg], axis=1),
             "fused": np.argmax(post_f[:, :n_fg], axis=1)}

    overall = {k: overall_accuracy(v, labels) for k, v in preds.items()}
    per_class = {}
    for label, cname in enumerate(config.classes):
        sel = labels == label
        per_class[cname] = {
            k: float((v[sel] == label).mean()) if sel.any() else 0.0
            for k, v in preds.items()}

    subdir = out_dir / "eval-cls"
    subdir.mkdir(parents=True, exist_ok=True)
    report = {"overall": overall, "per_class": per_class,
              "crops": len(patches)}
    write_json(subdir / "report.json", report)
    table_rows = [[c, per_class[c]["texture"], per_class[c]["shape"],
                   per_class[c]["fused"]] for c in config.classes]
    table_rows.append(["overall", overall["texture"], overall["shape"],
                       overall["fused"]])
    write_text(subdir / "report.txt",
               format_table(["class", "texture", "shape", "fused"], table_rows))
    for key, p in preds.items():
        cm = confusion(p, labels, n_fg)
        write_text(subdir / f"confusion_{key}.svg",
                   confusion_svg(cm.normalized, config.classes))
    return {"command": "eval-cls", "seed": seed, **report,
            "report": "eval-cls/report.json"}


# ---------------------------------------------------------------------------
# detect-eval

def _detection_models(config: RunConfig):
    mt, ms = _load_stream_models(config)
    if len(mt.class_names) != len(config.classes) + 1:
        raise ValueError("detection models must be trained with a trailing "
                         f"background class; got classes {mt.class_names}")
    return mt, ms


def _ground_truths(samples) -> list:
    gts = [GroundTruthBox(s.path, s.label, b)
           for s in samples for b in (s.boxes or ())]
    if not gts:
        raise ValueError("eval manifest has no ground-truth boxes")
    return gts


def cmd_detect_eval(config: RunConfig, seed: int, out_dir: Path, args) -> dict:
    mpath, samples = _load_eval_samples(config)
    mt, ms = _detection_models(config)
    gts = _ground_truths(samples)
    det = config.detection
    prop = config.proposals

    proposals_file = None
    if config.paths.proposals is not None:
        proposals_file = load_proposals(_require_path(config, "proposals"))

    detections = []
    for sample in samples:
        image = load_image(_resolve(mpath, sample))
        if proposals_file is not None:
            props = proposals_file.get(sample.path, [])
        elif prop.kind == "edge-density":
            props = edge_density_proposals(image, prop.max_proposals)
        else:
            props = sliding_window_proposals(image, prop.scales,
                                             prop.aspect_ratios,
                                             prop.stride_fraction)
        detections += score_proposals(mt, ms, image, props,
                                      det.score_threshold, image_id=sample.path)
    kept = nms_grouped(detections, det.nms_iou)
    kept.sort(key=lambda d: (d.image_id, d.class_index, -d.score, d.box))

    result = evaluate_detections(kept, gts, config.classes,
                                 iou_threshold=det.match_iou, mode=det.ap_mode)
    diagnosis = diagnose_false_positives(kept, gts, config.classes,
                                         config.similarity_groups,
                                         det.top_k_fp, det.match_iou)

    subdir = out_dir / "detect-eval"
    subdir.mkdir(parents=True, exist_ok=True)
    write_detections(kept, config.classes, subdir / "detections.txt")
    per_class = {name: {"ap": r.ap, "mode": r.mode}
                 for name, r in result["per_class"].items()}
    diag_json = {"per_group": diagnosis.group_counts,
                 "totals": diagnosis.totals(), "examined": diagnosis.examined}
    report = {"map": result["map"], "per_class": per_class,
              "detections": len(kept), "diagnosis": diag_json}
    write_json(subdir / "report.json", report)

    rows = [[name, per_class[name]["ap"]] for name in sorted(per_class)]
    rows.append(["mAP", result["map"]])
    text = format_table(["class", "ap"], rows)
    text += "\n" + _diagnosis_table(diagnosis)
    write_text(subdir / "report.txt", text)
    for name, r in result["per_class"].items():
        write_text(subdir / f"pr_{name}.svg",
                   pr_curve_svg(r.recall, r.precision,
                                title=f"{name} AP={r.ap:.4f}"))
    return {"command": "detect-eval", "seed": seed, **report,
            "detections_file": "detect-eval/detections.txt",
            "report": "detect-eval/report.json"}


def _diagnosis_table(diagnosis) -> str:
    rows = [[group, *(counts[c] for c in FP_CATEGORIES)]
            for group, counts in sorted(diagnosis.group_counts.items())]
    totals = diagnosis.totals()
    rows.append(["total", *(totals[c] for c in FP_CATEGORIES)])
    return format_table(["group", *FP_CATEGORIES], rows)


# ---------------------------------------------------------------------------
# diagnose

def cmd_diagnose(config: RunConfig, seed: int, out_dir: Path, args) -> dict:
    mpath, samples = _load_eval_samples(config)
    gts = _ground_truths(samples)
    dpath = _require_path(config, "detections")
    detections = load_detections(dpath, config.classes)
    det = config.detection
    diagnosis = diagnose_false_positives(detections, gts, config.classes,
                                         config.similarity_groups,
                                         det.top_k_fp, det.match_iou)
    subdir = out_dir / "diagnose"
    subdir.mkdir(parents=True, exist_ok=True)
    payload = {"per_group": diagnosis.group_counts,
               "totals": diagnosis.totals(), "examined": diagnosis.examined}
    write_json(subdir / "diagnosis.json", payload)
    write_text(subdir / "diagnosis.txt", _diagnosis_table(diagnosis))
    return {"command": "diagnose", "seed": seed, **payload,
            "report": "diagnose/diagnosis.json"}


# ---------------------------------------------------------------------------
# Entry point

_COMMANDS = {
    "synth": (cmd_synth, lambda a: "synth"),
    "prune": (cmd_prune, lambda a: "prune"),
    "train": (cmd_train, lambda a: f"train-{a.stream}"),
    "eval-cls": (cmd_eval_cls, lambda a: "eval-cls"),
    "detect-eval": (cmd_detect_eval, lambda a: "detect-eval"),
    "diagnose": (cmd_diagnose, lambda a: "diagnose"),
}


def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", required=True, help="run config JSON file")
    shared.add_argument("--seed", type=int, default=None,
                        help="override the config master seed")
    shared.add_argument("--out", default=None,
                        help="override the config output directory")
    shared.add_argument("--jobs", type=int, default=1,
                        help="worker count (reserved; commands run "
                             "single-process)")
    parser = argparse.ArgumentParser(
        prog="twostream",
        description="Two-stream recognition pipeline: synthesis, pruning, "
                    "training, fusion evaluation, detection, diagnosis.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "render the pose grid for every template into a dataset",
        "prune": "crop-augment the texture corpus and drop density outliers",
        "train": "train one stream classifier on its manifest",
        "eval-cls": "per-stream and fused classification accuracy on crops",
        "detect-eval": "proposals, fused scoring, NMS, AP and FP diagnosis",
        "diagnose": "categorize false positives of an existing detections file",
    }
    for name in _COMMANDS:
        p = sub.add_parser(name, parents=[shared], help=helps[name])
        if name == "train":
            p.add_argument("--stream", required=True,
                           choices=("texture", "shape"),
                           help="which stream to train")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    started = datetime.now(timezone.utc)
    t0 = time.monotonic()
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        config = load_run_config(args.config)
        seed = args.seed if args.seed is not None else config.seed
        if seed < 0:
            raise ConfigError("--seed must be >= 0")
        out_dir = Path(args.out) if args.out else config.paths.output_dir
        if out_dir is None:
            raise ConfigError("no output directory: set paths.output_dir in "
                              "the config or pass --out")
        out_dir.mkdir(parents=True, exist_ok=True)
        command, dirname = _COMMANDS[args.command]
        with _lock(out_dir):
            summary = command(config, seed, out_dir, args)
            subdir = out_dir / dirname(args)
            write_json(subdir / "summary.json", summary)
            write_json(subdir / "run_meta.json", {
                "argv": list(sys.argv if argv is None else argv),
                "started_utc": started.isoformat(),
                "finished_utc": datetime.now(timezone.utc).isoformat(),
                "elapsed_seconds": time.monotonic() - t0,
            })
    except ConfigError as e:
        return _fail("config", e, EXIT_CONFIG)
    except MissingInputError as e:
        return _fail("missing-input", e, EXIT_MISSING_INPUT)
    except FileNotFoundError as e:
        return _fail("missing-input", e, EXIT_MISSING_INPUT)
    except LockHeldError as e:
        return _fail("locked", e, EXIT_LOCKED)
    except ValueError as e:
        return _fail("data", e, EXIT_DATA)
    print(f"{args.command}: ok -> {subdir / 'summary.json'}")
    return EXIT_OK


def _fail(category: str, err: Exception, code: int) -> int:
    print(f"error[{category}]: {err}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
