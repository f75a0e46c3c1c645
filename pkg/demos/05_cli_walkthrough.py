"""
End-to-end command line walkthrough
===================================

synth -> train -> infer -> eval, all through ``spgen.cli.main`` so the script
runs without the console entry point on PATH.  Outputs land in ./cli_demo.
"""
from pathlib import Path

from spgen.cli import main

work = Path("cli_demo")

# 1. a small labelled dataset and an unlabelled, colour-shifted one
main(["synth", "--seed", "0", "--n", "8", "--out", str(work / "source")])
main(["synth", "--seed", "1", "--n", "8", "--domain", "target", "--domain-shift", "0.15",
      "--out", str(work / "target")])

# 2. train, then adapt the trained checkpoint towards the target images
main(["train", str(work / "source" / "manifest.json"), "--epochs", "100", "--lr", "3e-4",
      "--seed", "0", "--out", str(work / "run")])
main(["adapt", str(work / "source" / "manifest.json"), str(work / "target" / "manifest.json"),
      "--from-checkpoint", str(work / "run" / "model.spgn"), "--epochs", "20", "--lr", "3e-4",
      "--out", str(work / "adapted")])

# 3. five stochastic samples per image
pred = work / "pred"
for image in sorted((work / "source" / "images").glob("*.png")):
    main(["infer", str(work / "run" / "model.spgn"), str(image), "--temperature", "0.8", "--samples", "5",
          "--seed", "0", "--out", str(pred / f"{image.stem}.json"),
          "--heatmap", str(pred / f"{image.stem}_heat.png")])

# 4. score them; the saliency table goes to scores_saliency.csv
main(["eval", str(pred), str(work / "source" / "manifest.json"), "--metric", "all", "--workers", "2",
      "--out", str(work / "scores.csv")])
