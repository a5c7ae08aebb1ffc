"""Synthetic phantoms and the junction target codec.

Run: python demos/01_phantom_and_codec.py
"""
import numpy as np

from vaffnet.codec import CONF, decode, encode_grid, encode_heatmap, round_trip
from vaffnet.phantom import PhantomConfig, generate_phantom

# A phantom is a Sample: three en-face layers plus vessel/FAZ masks and junctions
cfg = PhantomConfig(image_size=(128, 128), rng_seed=3)
sample = generate_phantom(cfg, sample_id="demo")
ann = sample.annotations
print("layers:", sample.shape, "vessel px:", int(ann.vessel_mask.sum()), "faz px:", int(ann.faz_mask.sum()))
for j in ann.junctions:
    print("  ", j.kind, (j.x, j.y))

# the FAZ is darker in the deep layer than in the superficial one
faz = ann.faz_mask.astype(bool)
print("mean svc / dvc inside FAZ: %.3f / %.3f" % (sample.triplet.svc[faz].mean(), sample.triplet.dvc[faz].mean()))

# Targets: a peak-1 Gaussian heatmap and an S x S x 4 grid
h, w = sample.shape
heat = encode_heatmap(ann.junctions, h, w, sigma=2.5)
grid = encode_grid(ann.junctions, h, w, cell_size=8)
print("heatmap max", heat.max(), "grid", grid.shape, "occupied cells", int(grid[..., CONF].sum()))

# decoding the clean targets gives the annotations back
back = decode(heat, grid)
print("round trip exact:", set(back) == set(ann.junctions))

# a 304 x 304 frame gives a 38 x 38 grid
print("304 x 304 grid:", encode_grid([], 304, 304).shape, "empty round trip:", round_trip([], 304, 304))
