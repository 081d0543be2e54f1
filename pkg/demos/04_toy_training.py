"""Overfit a toy model on eight synthetic scenes and watch the metrics fall.

Takes about a minute on one core. Pass a step count to shorten it:
    python3 demos/04_toy_training.py 300
"""

import sys

import numpy as np

from sidert.data import synthetic_dataset
from sidert.decoder import DecoderConfig
from sidert.encoder import EncoderConfig
from sidert.metrics import aggregate, compute_metrics
from sidert.model import ModelConfig, SideRT
from sidert.train import TrainConfig, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
data = synthetic_dataset(8, 0, 32, 64)
cfg = ModelConfig(EncoderConfig(base_channels=8), DecoderConfig(decoder_channels=8))
model = SideRT.init(cfg, seed=0)
print(f"{model.n_params()} parameters, {len(data)} scenes of 32x64")


def evaluate():
    return aggregate([compute_metrics(model.predict(s.image), s.depth[0], s.mask[0]) for s in data])


print("before:", evaluate().to_lines().replace("\n", "  "))


def log(step, loss):
    if step % 200 == 0:
        print(f"step {step:5d}  batch loss {loss:.4f}")


state = train(model, data, TrainConfig(lr=1e-4, batch_size=2, steps=steps), on_step=log)
print("after: ", evaluate().to_table())
print(f"first 10 batch losses averaged {np.mean(state.loss_history[:10]):.4f}")
