"""
Overfitting eight synthetic images
==================================

Each synthetic image holds 2-5 bright blobs and its ground-truth scanpath
visits them brightest first.  A model that can learn anything should drive the
scanpath loss towards zero on such a tiny set; this script shows how far 500
Adam steps get.
"""
import sys

import numpy as np

from spgen.data import synthetic_dataset
from spgen.model import predict_scanpath
from spgen.training import TrainConfig, scanpath_loss, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 500
data = synthetic_dataset(seed=0, n_images=8)
print("blobs per image:", [len(s.scanpaths[0]) for s in data])

# batch_size 8 means one step per epoch
params, report = train(data, TrainConfig(epochs=steps, batch_size=8, seed=0))

losses = np.array(report.step_losses)
windows = losses[: len(losses) // 50 * 50].reshape(-1, 50).mean(axis=1)
print("50-step loss windows:", np.round(windows, 4).tolist())

# Score the trained model with deterministic decoding.
for s in data[:3]:
    pred = predict_scanpath(s.image, params, temperature=0.0)
    print(s.id, "gt", np.round(s.scanpaths[0].fixations, 2).tolist())
    print("      pred", np.round(pred.fixations, 2).tolist(), f"loss {scanpath_loss(pred, s.scanpaths[0]):.4f}")

params.save("overfit.spgn", {"seed": 0})
print("checkpoint written to overfit.spgn")
