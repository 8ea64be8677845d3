"""
Feature space adaptation inside the two-stream network
======================================================

Build the toy two-stream model, look at where the LiDAR features enter the
visual stream, and check two properties by hand: what an FSA module costs,
and that switching the fusion off gives back the image-only network.
"""

from __future__ import annotations

import numpy as np

from plard import autodiff as ad
from plard.autodiff import ParameterStore
from plard.model import (FsaModule, ModelConfig, PlardModel, StreamConfig, forward, fsa_forward,
                         fsa_mac_formula)

stream = StreamConfig((8, 16, 32, 64, 64), lidar_divisor=2)
model = PlardModel(ModelConfig(stream, input_mode="adt", fusion="fsa", lam=0.1), seed=0)
print("visual channels ", stream.stage_channels)
print("LiDAR channels  ", stream.lidar_channels)
print("fused at stages ", model.fused_stages)
print("parameters      ", model.params.num_values())

rng = np.random.default_rng(0)
image = rng.random((1, 3, 48, 160))
adt = rng.random((1, 1, 48, 160))
out = forward(model, image, adt)
print("parsing map", out.parsing.shape, "sums to one per pixel:",
      bool(np.allclose(out.parsing.data.sum(axis=1), 1.0)))

# one FSA module: lift the LiDAR features, then predict alpha and beta from both streams
c, div, h, w = 64, 8, 24, 80
fsa = FsaModule.create(ParameterStore(1), "demo", c, c // div)
with ad.count_macs() as counter:
    fsa_forward(ad.Tensor(rng.normal(size=(1, c, h, w))), ad.Tensor(rng.normal(size=(1, c // div, h, w))), fsa)
print(f"FSA MACs at C={c}, {h}x{w}: counted {counter.total:,}, formula {fsa_mac_formula(c, div, h, w):,} "
      f"({counter.total / (c * c * h * w):.3f} C^2 HW)")

# lambda = 0 removes the LiDAR contribution entirely
fused = PlardModel(ModelConfig(stream, lam=0.0), seed=3)
plain = PlardModel(ModelConfig(stream, input_mode="none"), seed=3)
same = np.array_equal(forward(fused, image, adt).parsing.data, forward(plain, image).parsing.data)
print("lambda=0 equals the image-only network bit for bit:", same)
