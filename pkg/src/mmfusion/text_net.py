"""Title preprocessing and a multi-width convolutional text classifier.

Embedding -> one valid convolution per filter width -> ReLU -> max over
time -> concatenation ("hidden") -> dropout -> fully connected logits.
Logits are trained with the weighted sigmoid loss; softmax is only used to
turn them into class probabilities downstream.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .losses import weighted_sigmoid_ce
from .optim import OptimizerSettings, TrainLog, run_epochs
from .rng import Streams

logger = logging.getLogger(__name__)

NULL_ID = 0
OOV_ID = 1


class Vocabulary:
    """Token -> id map. Id 0 is NULL padding, id 1 is out-of-vocabulary."""

    def __init__(self, tokens=()):
        self.tokens: list[str] = []
        self.index: dict[str, int] = {}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens) + 2
            self.tokens.append(token)
        return self.index[token]

    def __len__(self) -> int:
        return len(self.tokens) + 2

    def lookup(self, token: str) -> int:
        return self.index.get(token, OOV_ID)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for tok in self.tokens:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls(line for line in text.split("\n") if line != "")


def tokenize(title: str) -> list[str]:
    return title.lower().split()


def build_vocab(corpus) -> Vocabulary:
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    vocab = Vocabulary()
    for title in corpus:
        for tok in tokenize(title):
            vocab.add(tok)
    return vocab


def preprocess_title(title: str, vocab: Vocabulary, max_len: int = 40) -> np.ndarray:
    """Lowercase, split, map to ids, truncate to ``max_len``, right-pad with NULL."""
    ids = [vocab.lookup(t) for t in tokenize(title)][:max_len]
    out = np.zeros(max_len, dtype=np.int64)
    out[: len(ids)] = ids
    return out


def encode_titles(titles, vocab: Vocabulary, max_len: int = 40) -> np.ndarray:
    return np.stack([preprocess_title(t, vocab, max_len) for t in titles]) if titles else np.zeros((0, max_len), np.int64)


@dataclass
class TextNetConfig:
    num_classes: int
    vocab_size: int
    embed_dim: int = 100
    max_len: int = 40
    filter_widths: tuple = (3, 4, 5)
    filters_per_width: int = 128
    dropout_rate: float = 0.5
    q: float = 30.0

    def __post_init__(self):
        self.filter_widths = tuple(int(w) for w in self.filter_widths)
        vals = [self.num_classes, self.vocab_size, self.embed_dim, self.max_len, self.filters_per_width, self.q]
        if min(vals) <= 0 or not self.filter_widths or min(self.filter_widths) <= 0:
            raise T.ConfigError("text network sizes must all be positive")
        if self.max_len < max(self.filter_widths):
            raise T.ConfigError(f"max_len {self.max_len} shorter than widest filter {max(self.filter_widths)}")
        if not 0 <= self.dropout_rate < 1:
            raise T.ConfigError(f"dropout rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def hidden_dim(self) -> int:
        return len(self.filter_widths) * self.filters_per_width

    def fingerprint_fields(self) -> dict:
        return {
            "kind": "text",
            "num_classes": self.num_classes,
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "max_len": self.max_len,
            "filter_widths": list(self.filter_widths),
            "filters_per_width": self.filters_per_width,
        }


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class TextCNN:
    """Parameters live in ``self.params`` (ordered name -> Tensor).

    ``head_dim`` overrides the number of output logits (1 for a policy).
    """

    def __init__(self, cfg: TextNetConfig, streams: Streams, head_dim: int | None = None, dtype=np.float32):
        self.cfg = cfg
        self.head_dim = cfg.num_classes if head_dim is None else head_dim
        rng = streams("init", "text")
        emb = rng.uniform(-0.05, 0.05, size=(cfg.vocab_size, cfg.embed_dim)).astype(dtype)
        emb[NULL_ID] = 0
        self.params: dict[str, T.Tensor] = {"embedding": T.Tensor(emb, requires_grad=True)}
        for w in cfg.filter_widths:
            fan_in = w * cfg.embed_dim
            self.params[f"conv{w}.w"] = T.Tensor(
                he_normal(rng, (cfg.filters_per_width, w, cfg.embed_dim), fan_in, dtype), requires_grad=True
            )
            self.params[f"conv{w}.b"] = T.Tensor(np.zeros(cfg.filters_per_width, dtype), requires_grad=True)
        h = cfg.hidden_dim
        self.params["fc.w"] = T.Tensor(
            (rng.standard_normal((h, self.head_dim)) * np.sqrt(1.0 / h)).astype(dtype), requires_grad=True
        )
        self.params["fc.b"] = T.Tensor(np.zeros(self.head_dim, dtype), requires_grad=True)

    frozen_rows = {"embedding": NULL_ID}

    def hidden(self, ids) -> T.Tensor:
        p = self.params
        emb = T.embedding_gather(p["embedding"], ids)
        pooled = []
        for w in self.cfg.filter_widths:
            conv = T.add(T.conv1d_valid(emb, p[f"conv{w}.w"]), p[f"conv{w}.b"])
            pooled.append(T.max_over_time(T.relu(conv)))
        return T.concat(pooled, axis=-1)

    def forward(self, ids, train: bool = False, rng: np.random.Generator | None = None):
        """ids: [..., max_len] -> (logits [..., head_dim], hidden [..., hidden_dim])."""
        ids = np.asarray(ids)
        if ids.shape[-1] != self.cfg.max_len:
            raise T.ShapeError(f"expected {self.cfg.max_len} token ids, got {ids.shape[-1]}")
        hid = self.hidden(ids)
        dropped = T.dropout(hid, self.cfg.dropout_rate, train, rng)
        logits = T.linear(dropped, self.params["fc.w"], self.params["fc.b"])
        return logits, hid

    def predict_logits(self, ids, batch_size: int = 256) -> np.ndarray:
        out = [self.forward(ids[i : i + batch_size])[0].data for i in range(0, len(ids), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.head_dim), np.float32)

    def hidden_matrix(self, ids, batch_size: int = 256) -> np.ndarray:
        out = [self.hidden(ids[i : i + batch_size]).data for i in range(0, len(ids), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.cfg.hidden_dim), np.float32)


def text_forward(ids, model: TextCNN, train: bool = False, rng=None):
    return model.forward(ids, train, rng)


def top1(logits: np.ndarray) -> np.ndarray:
    return np.argmax(logits, axis=-1)


def top1_hits(logits: np.ndarray, shelves) -> float:
    pred = top1(logits)
    return float(np.mean([int(p) in s for p, s in zip(pred, shelves)])) if len(shelves) else float("nan")


@dataclass
class TrainResult:
    model: object
    log: TrainLog = field(default_factory=TrainLog)


def train_text(
    train_ids: np.ndarray,
    train_targets: np.ndarray,
    cfg: TextNetConfig,
    opt: OptimizerSettings,
    streams: Streams,
    train_shelves=None,
    val_ids: np.ndarray | None = None,
    val_shelves=None,
) -> TrainResult:
    """Fit a TextCNN on pre-encoded titles and multi-hot targets."""
    if len(train_ids) == 0:
        raise ValueError("empty training split")
    model = TextCNN(cfg, streams)
    log = TrainLog()

    def batch_loss(idx, rng):
        logits, _ = model.forward(train_ids[idx], train=True, rng=rng)
        return weighted_sigmoid_ce(logits, train_targets[idx], cfg.q)

    def on_epoch_end(epoch, loss):
        log.epoch_loss.append(loss)
        if train_shelves is not None:
            log.train_metric.append(top1_hits(model.predict_logits(train_ids), train_shelves))
        if val_ids is not None and val_shelves is not None:
            log.val_metric.append(top1_hits(model.predict_logits(val_ids), val_shelves))
        logger.info("text " + log.lines()[-1])

    run_epochs(
        model.params,
        len(train_ids),
        batch_loss,
        opt,
        shuffle_rng=lambda e: streams("shuffle", "text", e),
        dropout_rng=lambda e: streams("dropout", "text", e),
        on_epoch_end=on_epoch_end,
        frozen_rows=model.frozen_rows,
    )
    return TrainResult(model, log)
