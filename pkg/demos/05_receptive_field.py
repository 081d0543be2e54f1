"""Similarity of every stage-1 position to one reference pixel, before and after fusion.

Writes rf_before.pgm and rf_after.pgm to the working directory.
Run: python3 demos/05_receptive_field.py
"""

from sidert import imageio
from sidert.cli import attention_maps
from sidert.data import generate_scene
from sidert.model import SideRT

model = SideRT.init(seed=0)
scene = generate_scene(5, 64, 128)
before, after = attention_maps(model, scene.image, (20, 70))
for name, m in (("rf_before.pgm", before), ("rf_after.pgm", after)):
    imageio.write_pgm(name, m)
    print(f"{name}: mean similarity {m.mean():.3f}, reference {m[20, 70]:.3f}")
