"""MLP backbone split into shallow extractor, deep extractor and evidence head.

Layer roles follow a fixed split: the first hidden layer is the shallow
extractor, every further hidden layer belongs to the deep extractor, and the
last layer is a linear head producing raw evidence logits. Hidden layers use
softplus so the whole network is C1.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)


@dataclass
class BackboneParams:
    widths: list[int]
    weights: list[Tensor]
    biases: list[Tensor]
    seed: int | None = None

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def shallow_dim(self) -> int:
        return self.widths[1]

    @property
    def feature_dim(self) -> int:
        return self.widths[-2]

    @property
    def num_classes(self) -> int:
        return self.widths[-1]

    @property
    def role_split(self) -> dict[str, int]:
        return {"f1": 1, "f2": len(self.widths) - 3, "g": 1}

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def replace(self, arrays: list[np.ndarray]) -> "BackboneParams":
        """New params with the given arrays, in :meth:`parameters` order."""
        ws = [Tensor(a, requires_grad=True) for a in arrays[0::2]]
        bs = [Tensor(a, requires_grad=True) for a in arrays[1::2]]
        return BackboneParams(list(self.widths), ws, bs, self.seed)

    def copy(self) -> "BackboneParams":
        return self.replace([p.numpy() for p in self.parameters()])


@dataclass
class FeaturePair:
    shallow: Tensor
    embedding: Tensor
    z: Tensor
    # rows whose deep feature had zero norm and were left unnormalized
    zero_rows: np.ndarray


def _check_widths(widths) -> list[int]:
    widths = [int(w) for w in widths]
    if len(widths) < 4:
        raise ConfigError("need input, shallow, >=1 deep and output widths", "widths")
    if any(w < 1 for w in widths):
        raise ConfigError(f"non-positive width in {widths}", "widths")
    return widths


def init(seed: int, widths) -> BackboneParams:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    widths = _check_widths(widths)
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(Tensor(rng.uniform(-a, a, size=(fan_in, fan_out)), requires_grad=True))
        bs.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return BackboneParams(widths, ws, bs, seed)


def shallow_features(params: BackboneParams, x) -> Tensor:
    x = dc.as_tensor(x)
    if x.values.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError("forward", x.shape, (None, params.input_dim))
    return dc.softplus(dc.affine(x, params.weights[0], params.biases[0]))


def normalize_rows(h: Tensor) -> tuple[Tensor, np.ndarray]:
    norm = dc.l2norm(h, axis=1, keepdims=True)
    zero = norm.values[:, 0] == 0.0
    if np.any(zero):
        log.warning("%d embedding rows have zero norm; left unnormalized", int(zero.sum()))
    # 1.0 on zero rows keeps them at zero instead of dividing by zero
    safe = norm + Tensor(zero.astype(np.float64)[:, None])
    ones = Tensor(np.ones((1, h.shape[1])))
    return dc.div(h, dc.matmul(safe, ones)), zero


def forward(params: BackboneParams, x) -> tuple[FeaturePair, Tensor]:
    """Run the backbone; returns features and raw evidence logits."""
    shallow = shallow_features(params, x)
    h = shallow
    n_layers = len(params.weights)
    for i in range(1, n_layers - 1):
        h = dc.softplus(dc.affine(h, params.weights[i], params.biases[i]))
    logits = dc.affine(h, params.weights[-1], params.biases[-1])
    z, zero = normalize_rows(h)
    return FeaturePair(shallow, h, z, zero), logits


def predict_logits(params: BackboneParams, x) -> np.ndarray:
    return forward(params, x)[1].numpy()


# checkpoints

def to_dict(params: BackboneParams) -> dict:
    layers = [{"w": w.values.tolist(), "b": b.values.tolist()}
              for w, b in zip(params.weights, params.biases)]
    return {"widths": list(params.widths), "layers": layers,
            "seed": params.seed, "role_split": params.role_split}


def from_dict(doc: dict) -> BackboneParams:
    widths = _check_widths(doc["widths"])
    layers = doc["layers"]
    if len(layers) != len(widths) - 1:
        raise ConfigError(f"{len(layers)} layers for widths {widths}", "layers")
    ws, bs = [], []
    for i, layer in enumerate(layers):
        w = np.array(layer["w"], dtype=np.float64).reshape(-1, widths[i + 1]) \
            if layer["w"] else np.zeros((widths[i], widths[i + 1]))
        b = np.array(layer["b"], dtype=np.float64)
        if w.shape != (widths[i], widths[i + 1]) or b.shape != (widths[i + 1],):
            raise ShapeError("checkpoint", w.shape, (widths[i], widths[i + 1]))
        ws.append(Tensor(w, requires_grad=True))
        bs.append(Tensor(b, requires_grad=True))
    return BackboneParams(widths, ws, bs, doc.get("seed"))


def save_checkpoint(params: BackboneParams, path) -> None:
    Path(path).write_text(json.dumps(to_dict(params)) + "\n", encoding="utf-8")


def load_checkpoint(path) -> BackboneParams:
    return from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
