"""Acceptance suite: ten numbered criteria, one test each.

Each test checks its stated tolerances, asserts its runtime bound, and prints
one PASS line (run with ``pytest -s`` to see them; a failed assertion is the
FAIL line). The final test also bounds the whole suite's runtime.
"""

import itertools
import time
from fractions import Fraction

import numpy as np

from test_cli import build_workspace, run, tree_hashes
from twostream.detect import (
    Detection,
    edge_density_proposals,
    nms,
    nms_grouped,
    score_proposals,
)
from twostream.evaluate import (
    GroundTruthBox,
    average_precision,
    diagnose_false_positives,
    evaluate_detections,
    iou,
)
from twostream.fusion import fuse_average
from twostream.imagery import BoundingBox, Image
from twostream.nnet import (
    Conv,
    Dropout,
    FullyConnected,
    NetworkSpec,
    Relu,
    Softmax,
    TrainConfig,
    TrainedModel,
    forward,
    init_params,
    loss_and_grad,
    train,
)
from twostream.pruning import prune, retained_count
from twostream.seeding import derive_rng
from twostream.synth import (
    Pose,
    RenderConfig,
    SilhouetteTemplate,
    apply_statistics_matching,
    gaussian_blur,
    render_silhouette,
    sobel_magnitude,
)

_SUITE_T0 = time.monotonic()


def _passed(n, desc, t0, bound):
    elapsed = time.monotonic() - t0
    assert elapsed <= bound, f"criterion {n} took {elapsed:.1f}s > {bound}s"
    print(f"criterion {n:2d}: PASS ({desc}) [{elapsed:.2f}s]")


# ---------------------------------------------------------------------------
# 1. Fusion improvement on a two-cue dataset

_C1_SIDE = 16


def _shape_mask(kind, rng):
    cy, cx = 7.5 + rng.uniform(-2, 2), 7.5 + rng.uniform(-2, 2)
    yy, xx = np.mgrid[0:_C1_SIDE, 0:_C1_SIDE]
    if kind == 0:  # disc
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= 5.5 ** 2
    # cross: a horizontal and a vertical bar
    return (((np.abs(xx - cx) <= 5.5) & (np.abs(yy - cy) <= 2)) |
            ((np.abs(yy - cy) <= 5.5) & (np.abs(xx - cx) <= 2)))


def _texture_field(kind, rng):
    phase = rng.integers(0, 4)
    yy, xx = np.mgrid[0:_C1_SIDE, 0:_C1_SIDE]
    if kind == 0:  # vertical stripes, period 4
        return np.where((xx + phase) % 4 < 2, 0.2, 0.8)
    return np.where((xx // 2 + yy // 2 + phase) % 2 == 0, 0.2, 0.8)


def _two_cue_sample(shape_kind, texture_kind, rng):
    img = np.full((_C1_SIDE, _C1_SIDE), 0.5)
    mask = _shape_mask(shape_kind, rng)
    img[mask] = _texture_field(texture_kind, rng)[mask]
    return np.clip(img + rng.normal(0, 0.03, img.shape), 0, 1)[:, :, None]


def _two_cue_dataset(stream, split, n_per_class, rng):
    """4 classes = 2 shapes x 2 textures; the off-stream cue is randomized."""
    xs, ys = [], []
    for label in range(4):
        shape_kind, texture_kind = divmod(label, 2)
        for _ in range(n_per_class):
            if split == "test":
                sk, tk = shape_kind, texture_kind
            elif stream == "shape":
                sk, tk = shape_kind, int(rng.integers(2))
            else:
                sk, tk = int(rng.integers(2)), texture_kind
            xs.append(_two_cue_sample(sk, tk, rng))
            ys.append(label)
    return np.stack(xs), np.array(ys)


def test_criterion_01_fusion_beats_both_streams():
    t0 = time.monotonic()
    spec = NetworkSpec((_C1_SIDE, _C1_SIDE, 1),
                       (Conv(6, 3, stride=2), Relu(), FullyConnected(32),
                        Relu(), FullyConnected(4), Softmax()))
    gaps = []
    for seed in range(5):
        rng = derive_rng(seed, "fusion-data")
        x_test, y_test = _two_cue_dataset(None, "test", 200, rng)
        posteriors, accs = {}, {}
        for stream in ("shape", "texture"):
            x_train, y_train = _two_cue_dataset(stream, "train", 500, rng)
            cfg = TrainConfig(learning_rate=0.02, epochs=6, batch_size=32,
                              seed=int(derive_rng(seed, stream).integers(2 ** 31)))
            model = train((x_train, y_train), spec, cfg)
            _, post = forward(model, x_test)
            posteriors[stream] = post
            accs[stream] = float((np.argmax(post, axis=1) == y_test).mean())
        fused = np.stack([fuse_average(a, b) for a, b in
                          zip(posteriors["shape"], posteriors["texture"])])
        acc_fused = float((np.argmax(fused, axis=1) == y_test).mean())
        assert acc_fused >= max(accs.values()), \
            f"seed {seed}: fused {acc_fused:.3f} < max stream {max(accs.values()):.3f}"
        gaps.append(acc_fused - max(accs.values()))
    assert np.mean(gaps) >= 0.05, f"mean fusion gain {np.mean(gaps):.3f} < 0.05"
    _passed(1, f"fused wins all 5 seeds, mean gain {np.mean(gaps):.3f}", t0, 120)


# ---------------------------------------------------------------------------
# 2. Statistics-matching effect on white-background renderings

def _grid_tile(spacing):
    """Bright tile crossed by one-pixel dark lines: thin synthetic edges."""
    arr = np.ones((spacing, spacing))
    arr[0, :] = 0.0
    arr[:, 0] = 0.0
    return Image(np.repeat(arr[:, :, None], 3, axis=2))


def test_criterion_02_statistics_matching_effect():
    t0 = time.monotonic()
    templates = (
        SilhouetteTemplate("a", np.array([[0.15, 0.15], [0.85, 0.15],
                                          [0.85, 0.85], [0.15, 0.85]]),
                           texture=_grid_tile(8)),
        SilhouetteTemplate("b", np.array([[0.5, 0.1], [0.9, 0.9], [0.1, 0.9]]),
                           texture=_grid_tile(6)),
    )
    cfg = RenderConfig(width=64, height=64, background="white",
                       fill="textured", sigma_blur=1.0, sigma_noise=0.1)
    poses = [Pose(x, y, z) for x, y, z in
             [(0, 0, 90), (10, -10, 74), (-6, 4, 110),
              (2, 8, 256), (-10, 10, 270), (4, -2, 288)]]
    raw, matched = [], []
    for ti, template in enumerate(templates):
        for pi, pose in enumerate(poses):
            rng = derive_rng(0, "statsim", ti, pi)
            image, _ = render_silhouette(template, pose, cfg, rng)
            raw.append(image)
            matched.append(apply_statistics_matching(image, cfg, rng))
    corpus = [gaussian_blur(Image(derive_rng(0, "corpus", i).random((64, 64, 3))),
                            1.5) for i in range(12)]

    def pooled(images):
        return np.concatenate([sobel_magnitude(im).ravel() for im in images])

    m_raw, m_matched, m_corpus = pooled(raw), pooled(matched), pooled(corpus)
    p99_pre = np.percentile(m_raw, 99)
    p99_post = np.percentile(m_matched, 99)
    assert p99_post <= 0.5 * p99_pre, \
        f"p99 {p99_post:.3f} > half of pre-transform {p99_pre:.3f}"

    upper = max(m.max() for m in (m_raw, m_matched, m_corpus))

    def hist(mags):
        counts, _ = np.histogram(mags, bins=32, range=(0.0, float(upper)))
        return counts / counts.sum()

    l1_matched = np.abs(hist(m_matched) - hist(m_corpus)).sum()
    l1_raw = np.abs(hist(m_raw) - hist(m_corpus)).sum()
    assert l1_matched < l1_raw, \
        f"matched L1 {l1_matched:.3f} not below unmatched {l1_raw:.3f}"
    _passed(2, f"p99 ratio {p99_post / p99_pre:.2f}, "
               f"L1 {l1_matched:.2f} < {l1_raw:.2f}", t0, 30)


# ---------------------------------------------------------------------------
# 3. Pruning oracle

def test_criterion_03_pruning_oracle():
    t0 = time.monotonic()
    for seed in range(20):
        rng = derive_rng(seed, "prune-oracle")
        inliers = rng.standard_normal((90, 2))
        angles = rng.uniform(0, 2 * np.pi, 10)
        radii = 8.0 + 4.0 * rng.random(10)  # Mahalanobis >= 8 from N(0, I)
        outliers = np.stack([radii * np.cos(angles),
                             radii * np.sin(angles)], axis=1)
        _, result = prune(np.vstack([inliers, outliers]), retention=0.9)
        assert set(result.removed) == set(range(90, 100)), \
            f"seed {seed}: removed {sorted(result.removed)}"
    for n, expected in ((5, 4), (10, 8), (1000, 800)):
        assert retained_count(n, 0.8) == expected
    _passed(3, "10 planted outliers removed on 20 seeds; "
               "ceil(0.8 n) kept exactly", t0, 5)


# ---------------------------------------------------------------------------
# 4. Gradient correctness on every layer type

_C4_SPEC = NetworkSpec((6, 6, 1),
                       (Conv(2, 3, stride=2), Relu(), FullyConnected(8),
                        Relu(), Dropout(0.5), FullyConnected(3), Softmax()))


def _relu_margin(params, x):
    """Smallest |pre-activation| feeding a Relu (independent tiny forward)."""
    w0, b0 = params.layers[0]["w"], params.layers[0]["b"]
    n = x.shape[0]
    conv = np.empty((n, 2, 2, 2))
    for oy in range(2):
        for ox in range(2):
            patch = x[:, oy * 2:oy * 2 + 3, ox * 2:ox * 2 + 3, :]
            conv[:, oy, ox, :] = np.tensordot(
                patch, w0, axes=([1, 2, 3], [1, 2, 3])) + b0
    hidden = np.maximum(conv, 0).reshape(n, -1)
    fc1 = hidden @ params.layers[2]["w"] + params.layers[2]["b"]
    return min(np.abs(conv).min(), np.abs(fc1).min())


def test_criterion_04_gradient_checks():
    t0 = time.monotonic()
    step = 1e-4
    n_params = sum(p["w"].size + p["b"].size
                   for p in init_params(_C4_SPEC, 0).layers if p is not None)
    assert n_params <= 500, n_params
    worst = 0.0
    for seed in range(10):
        # redraw until no Relu input sits within 1e-2 of its kink, so the
        # central difference stays on one side of every non-smooth point
        for attempt in range(100):
            rng = derive_rng(seed, "gradcheck", attempt)
            params = init_params(_C4_SPEC, 100 * seed + attempt)
            x = rng.random((4, 6, 6, 1))
            y = rng.integers(0, 3, 4)
            if _relu_margin(params, x) > 1e-2:
                break
        else:
            raise AssertionError(f"seed {seed}: no kink-free draw found")

        def loss_at():
            # fresh generator per call keeps the dropout mask identical
            return loss_and_grad(params, (x, y),
                                 rng=np.random.default_rng(777))[0]

        _, grads = loss_and_grad(params, (x, y), rng=np.random.default_rng(777))
        for li, p in enumerate(params.layers):
            if p is None:
                continue
            for key in ("w", "b"):
                flat = p[key].reshape(-1)
                gflat = grads[li][key].reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + step
                    up = loss_at()
                    flat[i] = orig - step
                    down = loss_at()
                    flat[i] = orig
                    fd = (up - down) / (2 * step)
                    err = abs(gflat[i] - fd) / max(1.0, abs(gflat[i]), abs(fd))
                    worst = max(worst, err)
                    assert err <= 1e-4, \
                        f"seed {seed} layer {li} {key}[{i}]: rel err {err:.2e}"
    _passed(4, f"{n_params} params, 10 seeds, worst rel err {worst:.1e}", t0, 10)


# ---------------------------------------------------------------------------
# 5. AP oracle equivalence (exhaustive)

def _ref_eleven_point(flags, n_pos):
    tp = 0
    precs, recs = [], []
    for i, f in enumerate(flags, 1):
        tp += bool(f)
        precs.append(Fraction(tp, i))
        recs.append(Fraction(tp, n_pos))
    total = Fraction(0)
    for k in range(11):
        t = Fraction(k, 10)
        best = [p for p, r in zip(precs, recs) if r >= t]
        total += max(best) if best else Fraction(0)
    return total / 11


def _ref_continuous(flags, n_pos):
    tp = 0
    precs, recs = [], []
    for i, f in enumerate(flags, 1):
        tp += bool(f)
        precs.append(Fraction(tp, i))
        recs.append(Fraction(tp, n_pos))
    total = Fraction(0)
    prev = Fraction(0)
    for i, r in enumerate(recs):
        if r > prev:
            total += (r - prev) * max(precs[i:])
        prev = r
    return total


def test_criterion_05_ap_oracle_exhaustive():
    t0 = time.monotonic()
    checked = 0
    for length in range(9):
        for flags in itertools.product((False, True), repeat=length):
            tp = sum(flags)
            for n_pos in range(max(tp, 1), 5):
                for mode, ref in (("eleven-point", _ref_eleven_point),
                                  ("continuous", _ref_continuous)):
                    got = average_precision(flags, n_pos, mode=mode).ap
                    want = float(ref(flags, n_pos))
                    assert abs(got - want) <= 1e-9, \
                        (flags, n_pos, mode, got, want)
                    checked += 1
    assert checked >= 2 * 511
    _passed(5, f"{checked} flag/n_pos/mode combinations vs exact-rational "
               "references", t0, 5)


# ---------------------------------------------------------------------------
# 6. IoU spot values

def test_criterion_06_iou_spot_values():
    t0 = time.monotonic()
    a = BoundingBox(3, 4, 10, 12)
    assert iou(a, a) == 1.0
    assert iou(BoundingBox(0, 0, 4, 4), BoundingBox(20, 20, 24, 24)) == 0.0
    assert iou(BoundingBox(0, 0, 9, 9), BoundingBox(5, 0, 14, 9)) == 1 / 3
    _passed(6, "identical 1, disjoint 0, overlap exactly 1/3", t0, 5)


# ---------------------------------------------------------------------------
# 7. NMS brute-force equivalence

def _naive_nms(dets, threshold):
    ordered = sorted(dets, key=lambda d: (-d.score, d.box))
    kept = []
    for d in ordered:
        if all(iou(d.box, k.box) <= threshold for k in kept):
            kept.append(d)
    return kept


def test_criterion_07_nms_bruteforce():
    t0 = time.monotonic()
    rng = derive_rng(7, "nms-trials")
    for trial in range(1000):
        n = int(rng.integers(0, 7))
        dets = []
        for _ in range(n):
            x = np.sort(rng.integers(0, 20, 2))
            y = np.sort(rng.integers(0, 20, 2))
            dets.append(Detection("img", 0, float(rng.random()),
                                  BoundingBox(int(x[0]), int(y[0]),
                                              int(x[1]), int(y[1]))))
        threshold = float(rng.choice([0.1, 0.3, 0.5, 0.7]))
        got = nms(dets, threshold)
        want = _naive_nms(dets, threshold)
        assert [(d.score, d.box) for d in got] == \
               [(d.score, d.box) for d in want], (trial, threshold)
        for i, a in enumerate(got):
            for b in got[i + 1:]:
                assert iou(a.box, b.box) <= threshold
    _passed(7, "1000 random instances match the exhaustive reference", t0, 5)


# ---------------------------------------------------------------------------
# 8. Detection smoke test

def _ring_model(side=8):
    """Affine softmax template: dark centre with a light surround scores high."""
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


def test_criterion_08_detection_smoke():
    t0 = time.monotonic()
    scene = np.ones((64, 64, 1))
    scene[20:44, 20:44] = 0.0  # planted high-contrast square
    image = Image(scene)
    ground_truth = [GroundTruthBox("scene", 0, BoundingBox(20, 20, 43, 43))]
    model = _ring_model()
    proposals = edge_density_proposals(image, max_proposals=30)
    detections = score_proposals(model, model, image, proposals, 0.5,
                                 image_id="scene")
    assert detections
    kept = nms_grouped(detections, 0.3)
    result = evaluate_detections(kept, ground_truth, ("target",),
                                 iou_threshold=0.5)
    assert result["per_class"]["target"].ap == 1.0
    assert result["map"] == 1.0
    _passed(8, "planted square recovered end to end with AP 1.0", t0, 30)


# ---------------------------------------------------------------------------
# 9. Diagnosis recovery

def test_criterion_09_diagnosis_recovery():
    t0 = time.monotonic()
    classes = ("cat", "dog", "car", "bus", "chair")
    groups = {"animals": ("cat", "dog"), "vehicles": ("car", "bus"),
              "furniture": ("chair",)}
    box = BoundingBox
    gts = [GroundTruthBox("img", 0, box(0, 0, 19, 19)),
           GroundTruthBox("img", 1, box(100, 100, 119, 119)),
           GroundTruthBox("img", 2, box(200, 200, 219, 219)),
           GroundTruthBox("img", 3, box(500, 500, 519, 519)),
           GroundTruthBox("img", 4, box(300, 300, 319, 319))]
    dets = [
        Detection("img", 0, 0.98, box(0, 0, 19, 19)),        # TP
        Detection("img", 0, 0.97, box(0, 0, 19, 19)),        # duplicate -> Loc
        Detection("img", 0, 0.90, box(5, 5, 24, 24)),        # Loc
        Detection("img", 0, 0.85, box(105, 105, 124, 124)),  # Sim (dog GT)
        Detection("img", 0, 0.80, box(205, 205, 224, 224)),  # Oth (car GT)
        Detection("img", 0, 0.75, box(400, 400, 419, 419)),  # BG
        Detection("img", 2, 0.70, box(505, 505, 524, 524)),  # Sim (bus GT)
        Detection("img", 4, 0.65, box(5, 5, 24, 24)),        # Oth (cat GT)
    ]
    report = diagnose_false_positives(dets, gts, classes, groups)
    assert report.group_counts == {
        "animals": {"Loc": 2, "Sim": 1, "Oth": 1, "BG": 1},
        "vehicles": {"Loc": 0, "Sim": 1, "Oth": 0, "BG": 0},
        "furniture": {"Loc": 0, "Sim": 0, "Oth": 1, "BG": 0},
    }
    assert report.examined == 7
    _passed(9, "planted Loc/Sim/Oth/BG composition recovered exactly", t0, 5)


# ---------------------------------------------------------------------------
# 10. CLI determinism

_CHAIN = (["synth"], ["prune"], ["train", "--stream", "texture"],
          ["train", "--stream", "shape"], ["eval-cls"], ["detect-eval"],
          ["diagnose"])


def test_criterion_10_cli_determinism(tmp_path):
    t0 = time.monotonic()
    hashes = []
    for name in ("a", "b"):
        root = tmp_path / name
        root.mkdir()
        cfg = build_workspace(root)
        for argv in _CHAIN:
            assert run(cfg, *argv) == 0, argv
        hashes.append(tree_hashes(root / "runs"))
    assert hashes[0] and hashes[0] == hashes[1]
    suite_elapsed = time.monotonic() - _SUITE_T0
    assert suite_elapsed <= 300, f"suite took {suite_elapsed:.0f}s"
    _passed(10, f"full command chain byte-identical across reruns "
                f"({len(hashes[0])} files); suite {suite_elapsed:.0f}s", t0, 300)
