"""Fit a Gaussian to texture crops and throw away the ones it can't explain.

Crops harvested from web images are mostly on-topic, but a minority are
watermarks, borders, or plain wrong. With no labels to lean on, we model the
crop features as one multivariate Gaussian and keep the highest-density
fraction. Here the "bad" crops are planted on purpose so you can check the
ranking does what it should.
"""

from pathlib import Path

import numpy as np

from twostream import Image, derive_rng, log_densities, prune, save_image

OUT = Path(__file__).resolve().parent / "out" / "prune_outliers"
SIDE = 8


def clean_crop(rng):
    # horizontal wood-ish bands plus grain
    rows = 0.45 + 0.25 * np.sin(np.arange(SIDE) * 0.9 + rng.uniform(0, 6))
    return np.clip(rows[:, None] + rng.normal(0, 0.05, (SIDE, SIDE)), 0, 1)


def junk_crop(rng):
    # same pixel grain as the clean crops; a noiseless patch would sit at
    # the mean of every noise direction and score suspiciously well
    kind = rng.integers(3)
    if kind == 0:  # white overexposed patch
        base = np.full((SIDE, SIDE), 0.97)
    elif kind == 1:  # black border fragment
        base = np.full((SIDE, SIDE), 0.05)
    else:  # right texture, wrong orientation
        cols = 0.45 + 0.25 * np.sin(np.arange(SIDE) * 0.9 + rng.uniform(0, 6))
        base = np.ones((SIDE, 1)) * cols[None, :]
    return np.clip(base + rng.normal(0, 0.05, (SIDE, SIDE)), 0, 1)


def main():
    rng = derive_rng(0, "demo-prune")
    crops = [clean_crop(rng) for _ in range(54)] + [junk_crop(rng) for _ in range(6)]
    feats = np.stack([c.reshape(-1) for c in crops])

    model, result = prune(feats, retention=0.9)
    planted = set(range(54, 60))
    caught = planted & set(result.removed)

    print(f"{len(crops)} crops, retention 0.9 -> kept {len(result.kept)}, "
          f"removed {len(result.removed)}")
    print(f"planted junk caught: {len(caught)}/6 "
          f"(removed indices {sorted(result.removed)})")

    dens = log_densities(model, feats)
    order = np.argsort(dens)
    print("five least likely crops under the fitted Gaussian:")
    for i in order[:5]:
        tag = "planted junk" if i in planted else "clean"
        print(f"  crop {i:2d}  log density {dens[i]:9.1f}  ({tag})")

    print(f"density threshold at retention 0.9: {result.threshold:.1f}")

    for i in result.kept[:6]:
        save_image(Image(crops[i][:, :, None]), OUT / f"kept-{i:02d}.png")
    for i in result.removed:
        save_image(Image(crops[i][:, :, None]), OUT / f"removed-{i:02d}.png")
    print(f"sample kept/removed crops written to {OUT}")


if __name__ == "__main__":
    main()
