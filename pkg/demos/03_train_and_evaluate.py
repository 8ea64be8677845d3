"""
Train a small model and score it
================================

About two minutes on one CPU: generate corrupted scenes, train the ADT+FSA
model, evaluate with the benchmark metrics, and blend the prediction over
a test image.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from plard import pipeline as pl
from plard.evalkit import quantize_confidence
from plard.synthscene import CameraConfig, generate_dataset

out = Path("demo_out")
out.mkdir(exist_ok=True)
camera = CameraConfig(width=160, height=48)

train_scenes, _ = generate_dataset(24, seed=1, corruption_level=0.7, camera=camera)
test_scenes, _ = generate_dataset(9, seed=2, corruption_level=0.7, camera=camera)

config = pl.TrainConfig(epochs=40, lr_start=1e-2, lr_end=1e-4, stage_channels=(8, 16, 32, 64, 64),
                        lidar_divisor=2, input_mode="adt", fusion="fsa")
train = pl.prepare_samples(train_scenes, config.input_mode)
test = pl.prepare_samples(test_scenes, config.input_mode)

model = pl.build_model(config)
result = pl.train(model, train, config)
print("loss per epoch:", " ".join(f"{e['loss']:.3f}" for e in result.log))

report = pl.evaluate(model, test)
print(f"test MaxF {report.max_f:.2f}  AP {report.ap:.2f}  PRE {report.pre:.2f}  REC {report.rec:.2f}  "
      f"at threshold {report.threshold_at_maxf:.3f}")
for cat, rep in sorted(report.per_category.items()):
    print(f"  {cat:4s} MaxF {rep.max_f:.2f}")

# road probability in green over the first test image
prob = quantize_confidence(pl.predict(model, test[:1])[0])
image = test_scenes[0].image.astype(float)
alpha = 0.6 * prob[..., None]
blend = (1 - alpha) * image + alpha * np.array([0.0, 255.0, 0.0])
Image.fromarray(np.floor(blend + 0.5).astype(np.uint8)).save(out / "overlay.png")
print("overlay written to", out / "overlay.png")
