"""Bitstring encoder, decoder CNN, thresholding, and the training loss.

The encoder is a single linear layer A of shape (N_v x N_b): a bitstring
b in {0,1}^N_b maps to per-variable activations u = sigmoid(A b), and
each variable's activation is stretched onto its bounds,
delta_i = lo_i + u_i (hi_i - lo_i). Because bounds are symmetric around
zero offset, the all-zeros bitstring always reproduces the nominal
drawing regardless of A; it is reserved as a calibration code and never
sampled during training.

The decoder is three conv layers (relu + 2x2 max-pool each) followed by
a two-layer fully connected head; the sigmoid output per bit is a
pseudo-probability, thresholded at 0.5 with ties mapping to 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import (array_to_bytes, bytes_to_array, load_checkpoint,
                         save_checkpoint)
from .errors import DimensionMismatch, ShapeMismatch
from .softraster import RasterConfig
from .tensor import Tensor
from .vecdraw import Drawing, apply_perturbation


@dataclass(frozen=True)
class BitString:
    bits: tuple[int, ...]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("bits must be 0 or 1")

    def __len__(self):
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)

    def array(self) -> np.ndarray:
        return np.array(self.bits, dtype=np.float32)

    @classmethod
    def from_array(cls, arr) -> "BitString":
        return cls(tuple(int(b) for b in np.asarray(arr).reshape(-1)))

    @classmethod
    def random(cls, n_bits: int, rng: np.random.Generator) -> "BitString":
        return cls(tuple(int(b) for b in rng.integers(0, 2, size=n_bits)))

    def to_hex(self) -> str:
        """Big-endian hex; bit 0 is the most significant bit of the first nibble."""
        n = len(self.bits)
        nibbles = (n + 3) // 4
        padded = list(self.bits) + [0] * (nibbles * 4 - n)
        digits = []
        for i in range(nibbles):
            v = (padded[4 * i] << 3) | (padded[4 * i + 1] << 2) \
                | (padded[4 * i + 2] << 1) | padded[4 * i + 3]
            digits.append(f"{v:x}")
        return "0x" + "".join(digits).upper()

    @classmethod
    def from_hex(cls, text: str, n_bits: int) -> "BitString":
        t = text.strip().lower().removeprefix("0x")
        nibbles = (n_bits + 3) // 4
        if len(t) != nibbles or any(c not in "0123456789abcdef" for c in t):
            raise DimensionMismatch(
                f"hex string {text!r} does not encode exactly {n_bits} bits")
        bits = []
        for c in t:
            v = int(c, 16)
            bits.extend([(v >> 3) & 1, (v >> 2) & 1, (v >> 1) & 1, v & 1])
        if any(bits[n_bits:]):
            raise DimensionMismatch(
                f"hex string {text!r} sets padding bits beyond bit {n_bits - 1}")
        return cls(tuple(bits[:n_bits]))


@dataclass
class Probits:
    """Per-bit pseudo-probabilities in the open interval (0, 1)."""
    x_hat: np.ndarray


@dataclass
class ModelConfig:
    n_bits: int = 24
    n_vars: int = 0
    raster: RasterConfig = field(default_factory=RasterConfig)
    conv_channels: tuple[int, ...] = (16, 32, 64)
    kernel: int = 3
    fc_hidden: int = 256
    drawing_meta: dict | None = None   # canvas/keypoints/mask for capture-side use

    def to_json(self) -> str:
        d = {"n_bits": self.n_bits, "n_vars": self.n_vars,
             "raster": self.raster.to_dict(),
             "conv_channels": list(self.conv_channels),
             "kernel": self.kernel, "fc_hidden": self.fc_hidden}
        if self.drawing_meta is not None:
            d["drawing_meta"] = self.drawing_meta
        return json.dumps(d)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        d = json.loads(text)
        return cls(n_bits=d["n_bits"], n_vars=d["n_vars"],
                   raster=RasterConfig.from_dict(d["raster"]),
                   conv_channels=tuple(d["conv_channels"]),
                   kernel=d["kernel"], fc_hidden=d["fc_hidden"],
                   drawing_meta=d.get("drawing_meta"))


class Model:
    """Encoder matrix plus decoder weights; see `params()` for naming."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.A = Tensor(rng.normal(0.0, 0.5, size=(c.n_vars, c.n_bits)), requires_grad=True)

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        self.conv_w: list[Tensor] = []
        self.conv_b: list[Tensor] = []
        cin = 1
        for cout in c.conv_channels:
            self.conv_w.append(uniform((cout, cin, c.kernel, c.kernel),
                                       cin * c.kernel * c.kernel))
            self.conv_b.append(Tensor(np.zeros(cout), requires_grad=True))
            cin = cout
        pools = len(c.conv_channels)
        fh = c.raster.height // (2 ** pools)
        fw = c.raster.width // (2 ** pools)
        if fh * 2 ** pools != c.raster.height or fw * 2 ** pools != c.raster.width:
            raise ShapeMismatch("raster size must be divisible by 2 per pooling stage")
        flat = cin * fh * fw
        self.fc1_w = uniform((flat, c.fc_hidden), flat)
        self.fc1_b = Tensor(np.zeros(c.fc_hidden), requires_grad=True)
        self.fc2_w = uniform((c.fc_hidden, c.n_bits), c.fc_hidden)
        self.fc2_b = Tensor(np.zeros(c.n_bits), requires_grad=True)
        self._flat = flat

    def params(self) -> dict[str, Tensor]:
        out = {"encoder.A": self.A}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b), start=1):
            out[f"decoder.conv{i}.w"] = w
            out[f"decoder.conv{i}.b"] = b
        out["decoder.fc1.w"] = self.fc1_w
        out["decoder.fc1.b"] = self.fc1_b
        out["decoder.fc2.w"] = self.fc2_w
        out["decoder.fc2.b"] = self.fc2_b
        return out

    def decoder_params(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.params().items() if k != "encoder.A"}


def encode_deltas(model: Model, bits, bounds: tuple[np.ndarray, np.ndarray]) -> Tensor:
    """Differentiable map from bitstrings (B, N_b) to offsets (B, N_v).

    `bounds` is the (lo, hi) pair from Drawing.bounds().
    """
    arr = bits.data if isinstance(bits, Tensor) else np.asarray(bits, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.shape[1] != model.config.n_bits:
        raise DimensionMismatch(f"expected {model.config.n_bits} bits, got {arr.shape[1]}")
    lo = np.asarray(bounds[0], dtype=np.float32)
    hi = np.asarray(bounds[1], dtype=np.float32)
    if lo.shape != (model.config.n_vars,):
        raise DimensionMismatch(f"bounds must have {model.config.n_vars} entries")
    u = T.sigmoid(T.matmul(Tensor(arr), T.transpose(model.A)))
    return Tensor(lo) + u * Tensor(hi - lo)


def encode(model: Model, d: Drawing, b: BitString) -> Drawing:
    """Perturb the drawing to carry the bitstring; detached convenience form.

    The gradient-carrying route used in training is
    encode_deltas + soft_rasterize(d, cfg, delta).
    """
    if len(b) != model.config.n_bits:
        raise DimensionMismatch(f"expected {model.config.n_bits} bits, got {len(b)}")
    if d.n_vars != model.config.n_vars:
        raise DimensionMismatch(
            f"drawing has {d.n_vars} variables, model expects {model.config.n_vars}")
    z = model.A.data.astype(np.float64) @ b.array().astype(np.float64)
    u = np.clip(1.0 / (1.0 + np.exp(-z)), 1e-12, 1.0 - 1e-12)
    lo, hi = d.bounds()
    return apply_perturbation(d, lo + u * (hi - lo))


def decode_logits(model: Model, image: Tensor) -> Tensor:
    """Decoder forward pass on (B, 1, H, W) ink images; returns (B, N_b) logits."""
    x = image
    if x.ndim != 4:
        raise ShapeMismatch(f"decoder expects (B, 1, H, W), got {x.shape}")
    c = model.config
    if x.shape[2] != c.raster.height or x.shape[3] != c.raster.width:
        raise ShapeMismatch(f"decoder expects {c.raster.height}x{c.raster.width} input, "
                            f"got {x.shape[2]}x{x.shape[3]}")
    for w, b in zip(model.conv_w, model.conv_b):
        x = T.conv2d(x, w)
        x = x + T.reshape(b, (1, b.shape[0], 1, 1))
        x = T.relu(x)
        x = T.max_pool2d(x)
    x = T.reshape(x, (x.shape[0], model._flat))
    x = T.relu(T.matmul(x, model.fc1_w) + model.fc1_b)
    return T.matmul(x, model.fc2_w) + model.fc2_b


def decode_probits(model: Model, image) -> Probits:
    """Per-bit pseudo-probabilities for one image or a batch.

    Accepts an (H, W) array, a (B, H, W) array, or the equivalent
    tensors; probabilities are computed in float64 and clipped into the
    open interval.
    """
    arr = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    squeeze = arr.ndim == 2
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim == 3:
        arr = arr[:, None]
    logits = decode_logits(model, Tensor(arr)).data.astype(np.float64)
    x_hat = np.clip(1.0 / (1.0 + np.exp(-logits)), 1e-15, 1.0 - 1e-15)
    return Probits(x_hat[0] if squeeze else x_hat)


def threshold(probits: Probits) -> BitString:
    """x_hat <= 0.5 maps to 0, otherwise 1."""
    x = np.asarray(probits.x_hat)
    if x.ndim != 1:
        raise DimensionMismatch("threshold expects a single probit vector")
    return BitString.from_array(x > 0.5)


def bce_loss(logits: Tensor, bits) -> Tensor:
    """Mean sigmoid cross-entropy from pre-sigmoid logits.

    softplus(z) - b z equals -[b log sigmoid(z) + (1-b) log(1-sigmoid(z))]
    and stays finite for large |z|.
    """
    arr = np.asarray(bits.data if isinstance(bits, Tensor) else bits, dtype=np.float32)
    if arr.shape != logits.shape:
        if arr.ndim == 1 and logits.ndim == 1 and arr.shape[0] == logits.shape[0]:
            pass
        else:
            raise DimensionMismatch(f"logits {logits.shape} vs bits {arr.shape}")
    return T.mean(T.softplus(logits) - Tensor(arr) * logits)


def save_model(model: Model, path) -> None:
    entries = {name: t.data for name, t in model.params().items()}
    entries["config"] = bytes_to_array(model.config.to_json().encode("utf-8"))
    save_checkpoint(path, entries)


def load_model(path) -> Model:
    entries = load_checkpoint(path)
    config = ModelConfig.from_json(array_to_bytes(entries.pop("config")).decode("utf-8"))
    model = Model(config, seed=0)
    for name, t in model.params().items():
        if name not in entries:
            raise KeyError(f"checkpoint missing entry {name!r}")
        if entries[name].shape != t.shape:
            raise ShapeMismatch(f"{name}: checkpoint {entries[name].shape} vs model {t.shape}")
        t.data = np.ascontiguousarray(entries[name])
    return model
