"""
A tour of the gaze metrics
==========================

Builds a saliency map from a few observers, then scores candidate scanpaths
with NSS, Congruency and the four MultiMatch dimensions.
"""
import numpy as np

from spgen.metrics import build_saliency_map, congruency, multimatch, nss, simplify_scanpath

H, W = 48, 64

# Three observers who all look at the left half, mostly near (0.25, 0.5).
observers = [
    np.array([[0.25, 0.50], [0.30, 0.40], [0.20, 0.60]]),
    np.array([[0.24, 0.52], [0.35, 0.45]]),
    np.array([[0.22, 0.48], [0.28, 0.55], [0.40, 0.50]]),
]

# Gaussian-smoothed fixation density, max-normalized to 1.
saliency = build_saliency_map(observers, sigma_px=H / 26, h=H, w=W)
print("saliency map", saliency.shape, "peak at", np.unravel_index(saliency.raw.argmax(), saliency.shape))

# A prediction on the hot spot and one on the empty right half.
good = np.array([[0.26, 0.50], [0.32, 0.45]])
bad = np.array([[0.80, 0.20], [0.90, 0.80]])
for name, sp in (("good", good), ("bad", bad)):
    print(f"{name:5s} NSS {nss(sp, saliency):+.3f}  congruency {congruency(sp, saliency):.2f}")

# MultiMatch first condenses short or collinear saccades.
wobbly = np.array([[0.1, 0.5], [0.3, 0.5], [0.5, 0.52], [0.9, 0.5]])
print("simplified", simplify_scanpath(wobbly).tolist())

# Then it aligns saccades and compares them; 1.0 means identical.
a = np.array([[0.0, 0.0], [1.0, 0.0]])
b = np.array([[0.0, 0.0], [0.0, 1.0]])
mm = multimatch(a, b)
print("right-angle pair:", {k: round(v, 3) for k, v in zip(("shape", "direction", "length", "position", "mm"),
                                                          mm.as_tuple())})
print("self-similarity:", multimatch(observers[0], observers[0]).mm_score)
