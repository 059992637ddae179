"""Train a small proximity regressor on phantom patches and predict a full image.

A reduced network and patch size keep this to about a minute on a laptop CPU.
"""

import numpy as np

from hdogreg.network import RegressorConfig
from hdogreg.phantom import PhantomSpec, generate
from hdogreg.proximity import proximity_map
from hdogreg.regressor import PatchSet, extract_patches, predict_full, train


def main():
    spec = PhantomSpec(height=256, width=256, n_blobs=30)
    sets = []
    for seed in range(4):
        ph = generate(spec, seed=seed)
        sets.append(extract_patches(ph.image, proximity_map(ph.annotations), patch=64, stride=64))
    patches = PatchSet.concatenate(sets)
    held = generate(spec, seed=99)
    val = extract_patches(held.image, proximity_map(held.annotations), 64, 64, require_positive=False)

    cfg = RegressorConfig(channels=(4, 8, 16), levels=3, learning_rate=1e-3, epochs=30, batch_size=8)
    result = train(patches, cfg, validation=val)
    for epoch, (loss, score) in enumerate(zip(result.losses, result.val_iou)):
        print(f"epoch {epoch:2d} loss {loss:.4f} val IoU {score:.3f}")
    print(f"best epoch {result.best_epoch}")

    pred = predict_full(result.model, held.image, tile=128, overlap=32)
    truth = proximity_map(held.annotations)
    print(f"prediction range [{pred.min():.3f}, {pred.max():.3f}], "
          f"mean abs error vs oracle map {np.abs(pred - truth).mean():.4f}")


if __name__ == "__main__":
    main()
