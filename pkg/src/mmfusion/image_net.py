"""Image preprocessing and a VGG-style convolutional classifier.

Blocks of 3x3 same-padded convolutions + ReLU, each block closed by a 2x2
stride-2 max pool, then fully connected ReLU layers and a linear
classifier. ``VGG16_BLOCKS``/``VGG16_FC`` give the 224-pixel VGG-16 shape;
the defaults are a 32-pixel, three-block network that trains on a CPU.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .losses import weighted_sigmoid_ce
from .optim import OptimizerSettings, TrainLog, run_epochs
from .rng import Streams
from .text_net import TrainResult, he_normal, top1_hits

logger = logging.getLogger(__name__)

VGG16_BLOCKS = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))
VGG16_FC = (4096, 4096)
DESK_BLOCKS = ((2, 32), (2, 64), (2, 128))
DESK_FC = (256,)


@dataclass
class ImageNetConfig:
    num_classes: int
    input_size: int = 32
    conv_blocks: tuple = DESK_BLOCKS
    fc_dims: tuple = DESK_FC
    q: float = 30.0

    def __post_init__(self):
        self.conv_blocks = tuple((int(n), int(c)) for n, c in self.conv_blocks)
        self.fc_dims = tuple(int(d) for d in self.fc_dims)
        if self.num_classes <= 0 or self.input_size <= 0 or self.q <= 0:
            raise T.ConfigError("image network sizes must be positive")
        if any(n <= 0 or c <= 0 for n, c in self.conv_blocks) or any(d <= 0 for d in self.fc_dims):
            raise T.ConfigError("conv blocks and fc dims must be positive")
        if self.input_size % (2 ** len(self.conv_blocks)):
            raise T.ConfigError(
                f"input size {self.input_size} not divisible by 2^{len(self.conv_blocks)}"
            )

    @classmethod
    def vgg16(cls, num_classes: int) -> "ImageNetConfig":
        return cls(num_classes, 224, VGG16_BLOCKS, VGG16_FC)

    @property
    def feature_side(self) -> int:
        return self.input_size // 2 ** len(self.conv_blocks)

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        s = self.feature_side
        return (s, s, self.conv_blocks[-1][1])

    @property
    def hidden_dim(self) -> int:
        return self.fc_dims[-1] if self.fc_dims else int(np.prod(self.feature_shape))

    def fingerprint_fields(self) -> dict:
        return {
            "kind": "image",
            "num_classes": self.num_classes,
            "input_size": self.input_size,
            "conv_blocks": [list(b) for b in self.conv_blocks],
            "fc_dims": list(self.fc_dims),
        }


# ---------------------------------------------------------------------------
# preprocessing

@dataclass
class ImagePreprocStats:
    channel_mean: tuple  # three floats, pixel units

    def to_list(self) -> list[float]:
        return [float(x) for x in self.channel_mean]


def resize_nearest(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    if h < 1 or w < 1:
        raise ValueError("image must be at least 1x1")
    rows = (np.arange(size) * h) // size
    cols = (np.arange(size) * w) // size
    return img[rows][:, cols]


def compute_stats(raw_images, size: int) -> ImagePreprocStats:
    """Per-channel mean of the resized training images (64-bit accumulation)."""
    total = np.zeros(3, dtype=np.float64)
    count = 0
    for img in raw_images:
        r = resize_nearest(np.asarray(img), size)
        total += r.reshape(-1, 3).sum(axis=0, dtype=np.float64)
        count += size * size
    if count == 0:
        raise ValueError("cannot compute image statistics from an empty split")
    return ImagePreprocStats(tuple(total / count))


def preprocess_image(raw: np.ndarray, size: int, stats: ImagePreprocStats) -> np.ndarray:
    """Nearest-neighbour resize to size x size, float32, minus channel mean."""
    r = resize_nearest(np.asarray(raw), size).astype(np.float32)
    return r - np.asarray(stats.channel_mean, dtype=np.float32)


def preprocess_images(raw_images, size: int, stats: ImagePreprocStats) -> np.ndarray:
    if not len(raw_images):
        return np.zeros((0, size, size, 3), np.float32)
    return np.stack([preprocess_image(im, size, stats) for im in raw_images])


# ---------------------------------------------------------------------------
# network

class VGGNet:
    def __init__(self, cfg: ImageNetConfig, streams: Streams, head_dim: int | None = None, dtype=np.float32):
        self.cfg = cfg
        self.head_dim = cfg.num_classes if head_dim is None else head_dim
        rng = streams("init", "image")
        self.params: dict[str, T.Tensor] = {}
        cin = 3
        for b, (nconv, cout) in enumerate(cfg.conv_blocks):
            for k in range(nconv):
                name = f"block{b}.conv{k}"
                self.params[name + ".w"] = T.Tensor(he_normal(rng, (cout, 3, 3, cin), 9 * cin, dtype), requires_grad=True)
                self.params[name + ".b"] = T.Tensor(np.zeros(cout, dtype), requires_grad=True)
                cin = cout
        width = int(np.prod(cfg.feature_shape))
        for i, d in enumerate(cfg.fc_dims):
            self.params[f"fc{i}.w"] = T.Tensor(he_normal(rng, (width, d), width, dtype), requires_grad=True)
            self.params[f"fc{i}.b"] = T.Tensor(np.zeros(d, dtype), requires_grad=True)
            width = d
        self.params["out.w"] = T.Tensor(
            (rng.standard_normal((width, self.head_dim)) * np.sqrt(1.0 / width)).astype(dtype), requires_grad=True
        )
        self.params["out.b"] = T.Tensor(np.zeros(self.head_dim, dtype), requires_grad=True)

    frozen_rows: dict = {}

    def features(self, img) -> T.Tensor:
        """Convolutional trunk: [..., S, S, 3] -> [..., S/2^B, S/2^B, C_last]."""
        x = img if isinstance(img, T.Tensor) else T.Tensor(img)
        for b, (nconv, _) in enumerate(self.cfg.conv_blocks):
            for k in range(nconv):
                name = f"block{b}.conv{k}"
                x = T.relu(T.add(T.conv2d_same(x, self.params[name + ".w"]), self.params[name + ".b"]))
            x = T.maxpool2d(x)
        return x

    def hidden(self, img) -> T.Tensor:
        x = img if isinstance(img, T.Tensor) else T.Tensor(img)
        s = self.cfg.input_size
        if x.shape[-3:] != (s, s, 3):
            raise T.ShapeError(f"expected images of shape {(s, s, 3)}, got {x.shape[-3:]}")
        feat = self.features(x)
        lead = feat.shape[:-3]
        h = T.reshape(feat, lead + (int(np.prod(feat.shape[-3:])),))
        for i in range(len(self.cfg.fc_dims)):
            h = T.relu(T.linear(h, self.params[f"fc{i}.w"], self.params[f"fc{i}.b"]))
        return h

    def forward(self, img, train: bool = False, rng=None):
        """(logits [..., head_dim], hidden [..., hidden_dim]); no dropout."""
        hid = self.hidden(img)
        return T.linear(hid, self.params["out.w"], self.params["out.b"]), hid

    def predict_logits(self, images, batch_size: int = 128) -> np.ndarray:
        out = [self.forward(images[i : i + batch_size])[0].data for i in range(0, len(images), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.head_dim), np.float32)

    def hidden_matrix(self, images, batch_size: int = 128) -> np.ndarray:
        out = [self.hidden(images[i : i + batch_size]).data for i in range(0, len(images), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.cfg.hidden_dim), np.float32)


def image_forward(img, model: VGGNet, train: bool = False, rng=None):
    return model.forward(img, train, rng)


def train_image(
    train_images: np.ndarray,
    train_targets: np.ndarray,
    cfg: ImageNetConfig,
    opt: OptimizerSettings,
    streams: Streams,
    val_images: np.ndarray | None = None,
    val_shelves=None,
) -> TrainResult:
    """Fit a VGGNet on preprocessed images and multi-hot targets."""
    if len(train_images) == 0:
        raise ValueError("empty training split")
    model = VGGNet(cfg, streams)
    log = TrainLog()

    def batch_loss(idx, rng):
        logits, _ = model.forward(train_images[idx], train=True, rng=rng)
        return weighted_sigmoid_ce(logits, train_targets[idx], cfg.q)

    def on_epoch_end(epoch, loss):
        log.epoch_loss.append(loss)
        if val_images is not None and val_shelves is not None:
            log.val_metric.append(top1_hits(model.predict_logits(val_images), val_shelves))
        logger.info("image " + log.lines()[-1])

    run_epochs(
        model.params,
        len(train_images),
        batch_loss,
        opt,
        shuffle_rng=lambda e: streams("shuffle", "image", e),
        dropout_rng=lambda e: streams("dropout", "image", e),
        on_epoch_end=on_epoch_end,
    )
    return TrainResult(model, log)
