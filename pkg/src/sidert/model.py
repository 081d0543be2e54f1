"""The full encoder + side-decoder depth network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import DecoderConfig, MultiStagePrediction, decode, init_decoder
from .encoder import EncoderConfig, FeaturePyramid, encode, init_encoder
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)


class SideRT:
    """Parameters plus configuration; ``forward`` maps a 3xHxW image to five depth maps."""

    def __init__(self, cfg: ModelConfig, params: dict):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: ModelConfig = ModelConfig(), seed: int = 0) -> "SideRT":
        rng = np.random.default_rng(seed)
        params = init_encoder(cfg.encoder, rng)
        params.update(init_decoder(cfg.encoder, cfg.decoder, rng))
        return cls(cfg, params)

    def encode(self, image) -> FeaturePyramid:
        image = image if isinstance(image, Tensor) else Tensor(image)
        return encode(self.params, image, self.cfg.encoder)

    def forward(self, image) -> MultiStagePrediction:
        return decode(self.params, self.encode(image), self.cfg.decoder)

    __call__ = forward

    def predict(self, image) -> np.ndarray:
        """Full-resolution depth map as a plain ``H x W`` array."""
        return self.forward(image).final.data[0]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def n_params(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))
