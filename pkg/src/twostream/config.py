"""Run configuration: one JSON file, fully validated before any work starts.

The schema is documented in the README. Relative paths are resolved against
the directory containing the config file; a single master seed governs every
stage (the command line can override it).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .evaluate import AP_MODES
from .nnet import TrainConfig
from .synth import BACKGROUND_MODES, FILL_MODES

__all__ = [
    "ConfigError",
    "PathSettings",
    "SynthesisSettings",
    "PruningSettings",
    "StreamSettings",
    "ProposalSettings",
    "DetectionSettings",
    "RunConfig",
    "load_run_config",
]

POSE_MODES = ("cartesian", "axis-sweep")
PROPOSAL_KINDS = ("edge-density", "sliding-window")
STREAMS = ("texture", "shape")

_PATH_KEYS = ("output_dir", "templates", "texture_corpus", "texture_train",
              "shape_train", "eval", "backgrounds", "feature_model",
              "texture_model", "shape_model", "proposals", "detections")


class ConfigError(ValueError):
    """Invalid or unparseable run configuration."""


@dataclass(frozen=True)
class PathSettings:
    output_dir: Path | None = None
    templates: Path | None = None
    texture_corpus: Path | None = None
    texture_train: Path | None = None
    shape_train: Path | None = None
    eval: Path | None = None
    backgrounds: Path | None = None
    feature_model: Path | None = None
    texture_model: Path | None = None
    shape_model: Path | None = None
    proposals: Path | None = None
    detections: Path | None = None


@dataclass(frozen=True)
class SynthesisSettings:
    width: int = 64
    height: int = 64
    background: str = "white"
    fill: str = "uniform-gray"
    sigma_blur: float = 1.0
    sigma_noise: float = 0.1
    pose_mode: str = "cartesian"
    pose_step: float = 2.0
    statistics_matching: bool = True


@dataclass(frozen=True)
class PruningSettings:
    shrinkage: float = 0.1
    retention: float = 0.8
    crops_per_image: int = 40
    patch_size: int = 12  # pixel-feature side length when no feature model is set


@dataclass(frozen=True)
class StreamSettings:
    input_size: int = 32
    channels: int = 3
    background_negatives: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass(frozen=True)
class ProposalSettings:
    kind: str = "edge-density"
    max_proposals: int = 100
    scales: tuple[int, ...] = (16, 32, 48)
    aspect_ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    stride_fraction: float = 0.25


@dataclass(frozen=True)
class DetectionSettings:
    nms_iou: float = 0.3
    score_threshold: float = 0.5
    match_iou: float = 0.5
    ap_mode: str = "eleven-point"
    top_k_fp: int = 10


@dataclass(frozen=True)
class RunConfig:
    classes: tuple[str, ...]
    similarity_groups: dict
    paths: PathSettings
    synthesis: SynthesisSettings
    pruning: PruningSettings
    streams: dict
    proposals: ProposalSettings
    detection: DetectionSettings
    seed: int


def _mapping(obj, ctx: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{ctx}: expected an object, got {type(obj).__name__}")
    return dict(obj)


def _reject_unknown(d: dict, known, ctx: str) -> None:
    extra = sorted(set(d) - set(known))
    if extra:
        raise ConfigError(f"{ctx}: unknown keys {extra}")


def _string(d, key, default, ctx, choices=None):
    v = d.get(key, default)
    if not isinstance(v, str):
        raise ConfigError(f"{ctx}.{key}: expected a string")
    if choices is not None and v not in choices:
        raise ConfigError(f"{ctx}.{key}: must be one of {list(choices)}")
    return v


def _number(d, key, default, ctx, lo=None, hi=None, integer=False):
    v = d.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{ctx}.{key}: expected a number")
    if integer:
        if v != int(v):
            raise ConfigError(f"{ctx}.{key}: expected an integer")
        v = int(v)
    if lo is not None and v < lo:
        raise ConfigError(f"{ctx}.{key}: must be >= {lo}")
    if hi is not None and v > hi:
        raise ConfigError(f"{ctx}.{key}: must be <= {hi}")
    return v


def _boolean(d, key, default, ctx):
    v = d.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{ctx}.{key}: expected true or false")
    return v


def _classes(raw) -> tuple[str, ...]:
    if not isinstance(raw, list) or not raw:
        raise ConfigError("classes: expected a non-empty list of names")
    names = []
    for i, v in enumerate(raw):
        if not isinstance(v, str) or not v:
            raise ConfigError(f"classes[{i}]: expected a non-empty string")
        names.append(v)
    if len(set(names)) != len(names):
        raise ConfigError("classes: names must be unique")
    return tuple(names)


def _similarity_groups(raw, classes) -> dict:
    if raw is None:
        return {}
    groups = _mapping(raw, "similarity_groups")
    seen: dict[str, str] = {}
    out = {}
    for gname, members in groups.items():
        if not isinstance(members, list):
            raise ConfigError(f"similarity_groups.{gname}: expected a list")
        for m in members:
            if m not in classes:
                raise ConfigError(f"similarity_groups.{gname}: {m!r} is not "
                                  "a declared class")
            if m in seen:
                raise ConfigError(f"similarity_groups: class {m!r} appears in "
                                  f"both {seen[m]!r} and {gname!r}")
            seen[m] = gname
        out[str(gname)] = tuple(members)
    return out


def _paths(raw, base: Path) -> PathSettings:
    if raw is None:
        return PathSettings()
    d = _mapping(raw, "paths")
    _reject_unknown(d, _PATH_KEYS, "paths")
    resolved = {}
    for key in _PATH_KEYS:
        v = d.get(key)
        if v is None:
            continue
        if not isinstance(v, str) or not v:
            raise ConfigError(f"paths.{key}: expected a path string")
        p = Path(v)
        resolved[key] = p if p.is_absolute() else base / p
    return PathSettings(**resolved)


def _synthesis(raw) -> SynthesisSettings:
    if raw is None:
        return SynthesisSettings()
    d = _mapping(raw, "synthesis")
    _reject_unknown(d, ("width", "height", "background", "fill", "sigma_blur",
                        "sigma_noise", "pose_mode", "pose_step",
                        "statistics_matching"), "synthesis")
    return SynthesisSettings(
        width=_number(d, "width", 64, "synthesis", lo=1, integer=True),
        height=_number(d, "height", 64, "synthesis", lo=1, integer=True),
        background=_string(d, "background", "white", "synthesis", BACKGROUND_MODES),
        fill=_string(d, "fill", "uniform-gray", "synthesis", FILL_MODES),
        sigma_blur=_number(d, "sigma_blur", 1.0, "synthesis", lo=0.0),
        sigma_noise=_number(d, "sigma_noise", 0.1, "synthesis", lo=0.0),
        pose_mode=_string(d, "pose_mode", "cartesian", "synthesis", POSE_MODES),
        pose_step=_number(d, "pose_step", 2.0, "synthesis", lo=1e-9),
        statistics_matching=_boolean(d, "statistics_matching", True, "synthesis"),
    )


def _pruning(raw) -> PruningSettings:
    if raw is None:
        return PruningSettings()
    d = _mapping(raw, "pruning")
    _reject_unknown(d, ("shrinkage", "retention", "crops_per_image",
                        "patch_size"), "pruning")
    return PruningSettings(
        shrinkage=_number(d, "shrinkage", 0.1, "pruning", lo=0.0, hi=1.0),
        retention=_number(d, "retention", 0.8, "pruning", lo=1e-9, hi=1.0),
        crops_per_image=_number(d, "crops_per_image", 40, "pruning", lo=1,
                                integer=True),
        patch_size=_number(d, "patch_size", 12, "pruning", lo=1, integer=True),
    )


def _stream(raw, name: str) -> StreamSettings:
    ctx = f"streams.{name}"
    if raw is None:
        return StreamSettings()
    d = _mapping(raw, ctx)
    _reject_unknown(d, ("input_size", "channels", "background_negatives",
                        "learning_rate", "momentum", "weight_decay", "dropout",
                        "batch_size", "epochs"), ctx)
    try:
        train = TrainConfig(
            learning_rate=_number(d, "learning_rate", 0.001, ctx),
            momentum=_number(d, "momentum", 0.9, ctx),
            weight_decay=_number(d, "weight_decay", 0.0005, ctx),
            dropout=_number(d, "dropout", 0.5, ctx),
            batch_size=_number(d, "batch_size", 32, ctx, lo=1, integer=True),
            epochs=_number(d, "epochs", 10, ctx, lo=1, integer=True),
        )
    except ValueError as e:
        raise ConfigError(f"{ctx}: {e}") from None
    channels = _number(d, "channels", 3, ctx, integer=True)
    if channels not in (1, 3):
        raise ConfigError(f"{ctx}.channels: must be 1 or 3")
    return StreamSettings(
        input_size=_number(d, "input_size", 32, ctx, lo=1, integer=True),
        channels=channels,
        background_negatives=_number(d, "background_negatives", 0, ctx, lo=0,
                                     integer=True),
        train=train,
    )


def _proposals(raw) -> ProposalSettings:
    if raw is None:
        return ProposalSettings()
    d = _mapping(raw, "proposals")
    _reject_unknown(d, ("kind", "max_proposals", "scales", "aspect_ratios",
                        "stride_fraction"), "proposals")
    kind = _string(d, "kind", "edge-density", "proposals", PROPOSAL_KINDS)
    scales = d.get("scales", [16, 32, 48])
    ratios = d.get("aspect_ratios", [0.5, 1.0, 2.0])
    if (not isinstance(scales, list) or not scales or
            any(isinstance(s, bool) or not isinstance(s, (int, float)) or s < 1
                for s in scales)):
        raise ConfigError("proposals.scales: expected a list of sizes >= 1")
    if (not isinstance(ratios, list) or not ratios or
            any(isinstance(r, bool) or not isinstance(r, (int, float)) or r <= 0
                for r in ratios)):
        raise ConfigError("proposals.aspect_ratios: expected positive numbers")
    return ProposalSettings(
        kind=kind,
        max_proposals=_number(d, "max_proposals", 100, "proposals", lo=1,
                              integer=True),
        scales=tuple(int(s) for s in scales),
        aspect_ratios=tuple(float(r) for r in ratios),
        stride_fraction=_number(d, "stride_fraction", 0.25, "proposals",
                                lo=1e-9, hi=1.0),
    )


def _detection(raw) -> DetectionSettings:
    if raw is None:
        return DetectionSettings()
    d = _mapping(raw, "detection")
    _reject_unknown(d, ("nms_iou", "score_threshold", "match_iou", "ap_mode",
                        "top_k_fp"), "detection")
    return DetectionSettings(
        nms_iou=_number(d, "nms_iou", 0.3, "detection", lo=0.0, hi=1.0),
        score_threshold=_number(d, "score_threshold", 0.5, "detection",
                                lo=0.0, hi=1.0),
        match_iou=_number(d, "match_iou", 0.5, "detection", lo=1e-9, hi=1.0),
        ap_mode=_string(d, "ap_mode", "eleven-point", "detection", AP_MODES),
        top_k_fp=_number(d, "top_k_fp", 10, "detection", lo=1, integer=True),
    )


def load_run_config(path) -> RunConfig:
    """Parse and validate a JSON run config; raises ConfigError on any defect."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from None
    top = _mapping(raw, str(path))
    _reject_unknown(top, ("classes", "similarity_groups", "seed", "paths",
                          "synthesis", "pruning", "streams", "proposals",
                          "detection"), "config")
    classes = _classes(top.get("classes"))
    streams_raw = top.get("streams")
    if streams_raw is not None:
        streams_raw = _mapping(streams_raw, "streams")
        _reject_unknown(streams_raw, STREAMS, "streams")
    else:
        streams_raw = {}
    return RunConfig(
        classes=classes,
        similarity_groups=_similarity_groups(top.get("similarity_groups"), classes),
        paths=_paths(top.get("paths"), path.resolve().parent),
        synthesis=_synthesis(top.get("synthesis")),
        pruning=_pruning(top.get("pruning")),
        streams={name: _stream(streams_raw.get(name), name) for name in STREAMS},
        proposals=_proposals(top.get("proposals")),
        detection=_detection(top.get("detection")),
        seed=_number(top, "seed", 0, "config", lo=0, integer=True),
    )
