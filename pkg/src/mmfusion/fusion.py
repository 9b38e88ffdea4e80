"""Combining the text and image classifiers.

Decision level: a learned policy looks at both networks' outputs (or at the
raw inputs) and picks which network's top-1 class to report; two fixed
rules (mean of probabilities, most confident network) serve as baselines.
Feature level: the towers' last hidden layers are concatenated and a new
head is trained on top, either end-to-end or on frozen features.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .image_net import ImageNetConfig, VGGNet
from .losses import weighted_sigmoid_ce
from .optim import OptimizerSettings, TrainLog, run_epochs
from .rng import Streams
from .tensor import ConfigError, stable_sigmoid, stable_softmax
from .text_net import TextCNN, TextNetConfig, he_normal

logger = logging.getLogger(__name__)

CP_KINDS = ("CP-1", "CP-3", "CP-all")
RAW_KINDS = ("text-input", "image-input", "both-inputs")


class LeakageError(ValueError):
    """Policy examples overlap the towers' training split."""


# ---------------------------------------------------------------------------
# prediction pairs

@dataclass
class PredictionPair:
    id: str
    text_probs: np.ndarray
    image_probs: np.ndarray
    text_top1: int
    image_top1: int
    shelves: frozenset | None = None
    text_logits: np.ndarray | None = None
    image_logits: np.ndarray | None = None


@dataclass
class PredictionPairs:
    """Both networks' outputs on one dataset, row-aligned by product id."""

    ids: list
    text_probs: np.ndarray
    image_probs: np.ndarray
    text_top1: np.ndarray
    image_top1: np.ndarray
    shelves: list | None = None
    text_logits: np.ndarray | None = None
    image_logits: np.ndarray | None = None

    @classmethod
    def from_logits(cls, ids, text_logits, image_logits, shelves=None) -> "PredictionPairs":
        text_logits = np.asarray(text_logits)
        image_logits = np.asarray(image_logits)
        if text_logits.shape != image_logits.shape:
            raise ValueError(f"logit shapes differ: {text_logits.shape} vs {image_logits.shape}")
        tl64 = text_logits.astype(np.float64)
        il64 = image_logits.astype(np.float64)
        return cls(
            ids=list(ids),
            text_probs=stable_softmax(tl64),
            image_probs=stable_softmax(il64),
            text_top1=np.argmax(text_logits, axis=-1),
            image_top1=np.argmax(image_logits, axis=-1),
            shelves=None if shelves is None else list(shelves),
            text_logits=text_logits,
            image_logits=image_logits,
        )

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> PredictionPair:
        return PredictionPair(
            self.ids[i],
            self.text_probs[i],
            self.image_probs[i],
            int(self.text_top1[i]),
            int(self.image_top1[i]),
            None if self.shelves is None else self.shelves[i],
            None if self.text_logits is None else self.text_logits[i],
            None if self.image_logits is None else self.image_logits[i],
        )

    def subset(self, idx) -> "PredictionPairs":
        idx = np.asarray(list(idx), dtype=np.int64)
        pick = lambda a: None if a is None else a[idx]
        return PredictionPairs(
            [self.ids[i] for i in idx],
            self.text_probs[idx],
            self.image_probs[idx],
            self.text_top1[idx],
            self.image_top1[idx],
            None if self.shelves is None else [self.shelves[i] for i in idx],
            pick(self.text_logits),
            pick(self.image_logits),
        )

    def text_correct(self) -> np.ndarray:
        return _hits(self.text_top1, self._need_shelves())

    def image_correct(self) -> np.ndarray:
        return _hits(self.image_top1, self._need_shelves())

    def _need_shelves(self):
        if self.shelves is None:
            raise ValueError("prediction pairs carry no shelf sets")
        return self.shelves

    # line-delimited persistence: one JSON object per product
    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for i in range(len(self)):
                row = {
                    "id": self.ids[i],
                    "text_probs": [float(v) for v in self.text_probs[i]],
                    "image_probs": [float(v) for v in self.image_probs[i]],
                    "text_top1": int(self.text_top1[i]),
                    "image_top1": int(self.image_top1[i]),
                    "shelves": None if self.shelves is None else sorted(int(s) for s in self.shelves[i]),
                }
                f.write(json.dumps(row) + "\n")

    @classmethod
    def load(cls, path) -> "PredictionPairs":
        ids, tp, ip, tt, it, sh = [], [], [], [], [], []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                    ids.append(row["id"])
                    tp.append(row["text_probs"])
                    ip.append(row["image_probs"])
                    tt.append(row["text_top1"])
                    it.append(row["image_top1"])
                    sh.append(row["shelves"])
                except (KeyError, json.JSONDecodeError) as exc:
                    raise ValueError(f"{path}:{lineno}: malformed prediction record") from exc
        shelves = None if any(s is None for s in sh) else [frozenset(s) for s in sh]
        return cls(ids, np.array(tp), np.array(ip), np.array(tt, dtype=np.int64), np.array(it, dtype=np.int64), shelves)


def _hits(pred, shelves) -> np.ndarray:
    return np.array([int(p) in s for p, s in zip(pred, shelves)], dtype=bool)


# ---------------------------------------------------------------------------
# policy examples

def cp_features(pairs, kind: str) -> np.ndarray:
    """Class-probability features; works on one pair or a PredictionPairs."""
    tp = np.atleast_2d(pairs.text_probs)
    ip = np.atleast_2d(pairs.image_probs)
    if kind == "CP-1":
        feats = np.concatenate([tp.max(-1, keepdims=True), ip.max(-1, keepdims=True)], axis=-1)
    elif kind == "CP-3":
        top = lambda p: -np.sort(-p, axis=-1)[:, :3]
        feats = np.concatenate([top(tp), top(ip)], axis=-1)
    elif kind == "CP-all":
        feats = np.concatenate([tp, ip], axis=-1)
    else:
        raise ConfigError(f"{kind!r} is not a class-probability input kind")
    feats = feats.astype(np.float32)
    return feats[0] if np.ndim(pairs.text_probs) == 1 else feats


def policy_labels(text_correct, image_correct) -> np.ndarray:
    """1 where the image network is right and the text network wrong."""
    return (np.asarray(image_correct, bool) & ~np.asarray(text_correct, bool)).astype(np.int64)


@dataclass
class PolicyExamples:
    ids: list
    features: np.ndarray | None  # None for raw-input kinds
    labels: np.ndarray
    kind: str

    def __len__(self) -> int:
        return len(self.labels)


def make_policy_dataset(pairs: PredictionPairs, kind: str = "CP-3", tower_train_ids=()) -> PolicyExamples:
    """Features + labels for policy training. ``tower_train_ids`` are checked
    for overlap with ``pairs`` (policy rows must come from a held-out split)."""
    leaked = set(pairs.ids) & set(tower_train_ids)
    if leaked:
        raise LeakageError(f"{len(leaked)} policy products were used to train the towers, e.g. {sorted(leaked)[0]}")
    labels = policy_labels(pairs.text_correct(), pairs.image_correct())
    feats = cp_features(pairs, kind) if kind in CP_KINDS else None
    if kind not in CP_KINDS and kind not in RAW_KINDS:
        raise ConfigError(f"unknown policy input kind {kind!r}")
    return PolicyExamples(list(pairs.ids), feats, labels, kind)


# ---------------------------------------------------------------------------
# policies

@dataclass
class PolicyConfig:
    input_kind: str = "CP-3"
    num_layers: int = 2
    hidden_units: int = 10
    q: float = 5.0

    def __post_init__(self):
        if self.input_kind not in CP_KINDS + RAW_KINDS:
            raise ConfigError(f"unknown policy input kind {self.input_kind!r}")
        if self.num_layers not in (1, 2):
            raise ConfigError(f"policy needs 1 or 2 layers, got {self.num_layers}")
        if self.hidden_units < 1 or self.q <= 0:
            raise ConfigError("hidden_units >= 1 and q > 0 required")

    @property
    def tag(self) -> str:
        q = f"{self.q:g}"
        if self.input_kind in RAW_KINDS:
            return f"{self.input_kind}_q{q}"
        return f"{self.input_kind}_{self.num_layers}l_q{q}"

    @classmethod
    def parse(cls, text: str, hidden_units: int = 10) -> "PolicyConfig":
        """``"CP-3/2/5"`` -> kind CP-3, 2 layers, q=5. Raw kinds take ``-`` layers."""
        parts = text.strip().split("/")
        if len(parts) != 3:
            raise ConfigError(f"policy spec {text!r} must look like KIND/LAYERS/Q")
        kind, layers, q = parts
        return cls(kind, 2 if layers in ("-", "") else int(layers), hidden_units, float(q))

    def fingerprint_fields(self, feature_dim: int | None = None) -> dict:
        return {
            "kind": "policy",
            "input_kind": self.input_kind,
            "num_layers": self.num_layers,
            "hidden_units": self.hidden_units,
            "feature_dim": feature_dim,
        }


def feature_dim(kind: str, num_classes: int) -> int:
    return {"CP-1": 2, "CP-3": 6, "CP-all": 2 * num_classes}[kind]


class MLP:
    """1 or 2 fully connected layers (ReLU between) on a flat feature vector."""

    def __init__(self, in_dim: int, out_dim: int, num_layers: int, hidden_units: int,
                 rng: np.random.Generator, prefix: str = "", dtype=np.float32):
        self.params: dict[str, T.Tensor] = {}
        self.num_layers = num_layers
        self.prefix = prefix
        dims = [in_dim, hidden_units, out_dim] if num_layers == 2 else [in_dim, out_dim]
        for i in range(len(dims) - 1):
            self.params[f"{prefix}l{i}.w"] = T.Tensor(he_normal(rng, (dims[i], dims[i + 1]), dims[i], dtype), requires_grad=True)
            self.params[f"{prefix}l{i}.b"] = T.Tensor(np.zeros(dims[i + 1], dtype), requires_grad=True)

    frozen_rows: dict = {}

    def __call__(self, x) -> T.Tensor:
        h = x if isinstance(x, T.Tensor) else T.Tensor(x)
        for i in range(self.num_layers):
            h = T.linear(h, self.params[f"{self.prefix}l{i}.w"], self.params[f"{self.prefix}l{i}.b"])
            if i < self.num_layers - 1:
                h = T.relu(h)
        return h


class Policy:
    """Decides, per product, whether to trust the image network.

    ``model`` is an MLP for class-probability inputs, a tower with a one-logit
    head for raw inputs, or None for a constant policy.
    """

    def __init__(self, cfg: PolicyConfig, model=None, constant: int | None = None):
        self.cfg = cfg
        self.model = model
        self.constant = constant
        self.log = TrainLog()
        self.selected_epoch: int | None = None

    @classmethod
    def constant_policy(cls, value: int, kind: str = "CP-3") -> "Policy":
        return cls(PolicyConfig(kind), constant=int(value))

    @property
    def params(self) -> dict:
        return {} if self.model is None else self.model.params

    def logits(self, inputs: "PolicyInputs") -> np.ndarray:
        n = len(inputs)
        if self.constant is not None:
            return np.full(n, 1e4 if self.constant else -1e4)
        kind = self.cfg.input_kind
        if inputs.kind is not None and inputs.kind != kind:
            raise ConfigError(f"policy expects {kind} inputs, got {inputs.kind}")
        if kind in CP_KINDS:
            return self.model(inputs.cp(kind)).data.reshape(-1)
        if kind == "text-input":
            return self.model.predict_logits(inputs.title_ids).reshape(-1)
        if kind == "image-input":
            return self.model.predict_logits(inputs.images).reshape(-1)
        return self.model.predict_logits(inputs.title_ids, inputs.images).reshape(-1)

    def choose_image(self, inputs: "PolicyInputs") -> np.ndarray:
        return stable_sigmoid(self.logits(inputs).astype(np.float64)) > 0.5


@dataclass
class PolicyInputs:
    """Everything a policy of any kind may look at, row-aligned."""

    pairs: PredictionPairs | None = None
    title_ids: np.ndarray | None = None
    images: np.ndarray | None = None
    kind: str | None = None

    def __len__(self) -> int:
        for x in (self.pairs, self.title_ids, self.images):
            if x is not None:
                return len(x)
        return 0

    def cp(self, kind: str) -> np.ndarray:
        if self.pairs is None:
            raise ConfigError("class-probability policy needs prediction pairs")
        return cp_features(self.pairs, kind)

    def subset(self, idx) -> "PolicyInputs":
        idx = np.asarray(list(idx), dtype=np.int64)
        return PolicyInputs(
            None if self.pairs is None else self.pairs.subset(idx),
            None if self.title_ids is None else self.title_ids[idx],
            None if self.images is None else self.images[idx],
            self.kind,
        )


def fused_top1(pairs: PredictionPairs, choose_image) -> np.ndarray:
    return np.where(np.asarray(choose_image, bool), pairs.image_top1, pairs.text_top1)


def fused_predict(pair: PredictionPair, policy: Policy, kind: str | None = None) -> tuple[int, str]:
    """Route one product: image network's class if the policy fires, else text's."""
    if kind is not None and policy.constant is None and kind != policy.cfg.input_kind:
        raise ConfigError(f"policy trained on {policy.cfg.input_kind} cannot read {kind} features")
    if policy.constant is not None:
        use_image = bool(policy.constant)
    else:
        if policy.cfg.input_kind not in CP_KINDS:
            raise ConfigError("single-pair routing needs a class-probability policy")
        logit = policy.model(cp_features(pair, policy.cfg.input_kind)[None, :]).data.reshape(-1)[0]
        use_image = bool(stable_sigmoid(np.array([logit], np.float64))[0] > 0.5)
    return (pair.image_top1, "image") if use_image else (pair.text_top1, "text")


def fused_accuracy(pairs: PredictionPairs, choose_image) -> float:
    return float(np.mean(_hits(fused_top1(pairs, choose_image), pairs.shelves)))


def _policy_model(cfg: PolicyConfig, streams: Streams, num_classes: int,
                  text_cfg: TextNetConfig | None, image_cfg: ImageNetConfig | None):
    kind = cfg.input_kind
    if kind in CP_KINDS:
        rng = streams("init", "policy", kind, cfg.num_layers)
        return MLP(feature_dim(kind, num_classes), 1, cfg.num_layers, cfg.hidden_units, rng)
    sub = streams.child("policy", kind)
    if kind == "text-input":
        return TextCNN(text_cfg, sub, head_dim=1)
    if kind == "image-input":
        return VGGNet(image_cfg, sub, head_dim=1)
    return FeatureFusionNet(text_cfg, image_cfg, sub, head_layers=1, head_dim=1)


def _batch_logits(model, kind: str, inputs: PolicyInputs, idx, train: bool, rng):
    if kind in CP_KINDS:
        return model(inputs.cp(kind)[idx])
    if kind == "text-input":
        return model.forward(inputs.title_ids[idx], train, rng)[0]
    if kind == "image-input":
        return model.forward(inputs.images[idx], train, rng)[0]
    return model.forward(inputs.title_ids[idx], inputs.images[idx], train, rng)[0]


def train_policy(
    examples: PolicyExamples,
    inputs: PolicyInputs,
    cfg: PolicyConfig,
    opt: OptimizerSettings,
    streams: Streams,
    num_classes: int,
    dev: tuple[PolicyInputs, PolicyExamples] | None = None,
    text_cfg: TextNetConfig | None = None,
    image_cfg: ImageNetConfig | None = None,
) -> Policy:
    """Fit a one-logit policy with the weighted sigmoid loss (``q`` up-weights
    label-1 rows). With ``dev`` given, the epoch with the best fused top-1
    accuracy on it is kept (ties go to the earlier epoch)."""
    if len(examples) == 0:
        raise ValueError("no policy examples")
    if examples.kind != cfg.input_kind:
        raise ConfigError(f"examples built for {examples.kind}, policy wants {cfg.input_kind}")
    labels = examples.labels
    if labels.min() == labels.max():
        warnings.warn(f"policy labels are all {int(labels[0])}; returning a constant policy", RuntimeWarning)
        pol = Policy(cfg, constant=int(labels[0]))
        return pol
    model = _policy_model(cfg, streams, num_classes, text_cfg, image_cfg)
    policy = Policy(cfg, model)
    targets = labels.astype(np.float32)[:, None]
    kind = cfg.input_kind
    best = {"score": None, "params": None, "epoch": None}

    def batch_loss(idx, rng):
        logit = _batch_logits(model, kind, inputs, idx, True, rng)
        return weighted_sigmoid_ce(logit, targets[idx], cfg.q)

    def on_epoch_end(epoch, loss):
        policy.log.epoch_loss.append(loss)
        pred = policy.choose_image(inputs).astype(np.int64)
        policy.log.train_metric.append(float(np.mean(pred == labels)))
        if dev is not None:
            dev_inputs, dev_examples = dev
            choice = policy.choose_image(dev_inputs)
            score = fused_accuracy(dev_inputs.pairs, choice)
            policy.log.val_metric.append(score)
            if best["score"] is None or score > best["score"]:
                best.update(score=score, epoch=epoch, params={k: p.data.copy() for k, p in model.params.items()})

    run_epochs(
        model.params,
        len(examples),
        batch_loss,
        opt,
        shuffle_rng=lambda e: streams("shuffle", "policy", cfg.tag, e),
        dropout_rng=lambda e: streams("dropout", "policy", cfg.tag, e),
        on_epoch_end=on_epoch_end,
        frozen_rows=getattr(model, "frozen_rows", None),
    )
    if best["params"] is not None:
        for k, arr in best["params"].items():
            model.params[k].data = arr
        policy.selected_epoch = best["epoch"]
    return policy


# ---------------------------------------------------------------------------
# fixed rules

def fixed_mean(pair) -> np.ndarray | int:
    """Argmax of the averaged class probabilities."""
    avg = (np.asarray(pair.text_probs) + np.asarray(pair.image_probs)) / 2
    out = np.argmax(avg, axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def fixed_mean_logits(pair) -> np.ndarray | int:
    """Argmax of averaged logits. Falls back to log-probabilities, which
    differ from the logits by a per-row constant and so pick the same class."""
    if pair.text_logits is not None and pair.image_logits is not None:
        tl, il = pair.text_logits, pair.image_logits
    else:
        tl, il = np.log(pair.text_probs), np.log(pair.image_probs)
    out = np.argmax((np.asarray(tl, np.float64) + np.asarray(il, np.float64)) / 2, axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def fixed_max(pair):
    """Trust whichever network has the larger top probability; ties -> text.

    Returns ``(class, source)`` for one pair, ``(classes, use_image)`` arrays
    for a PredictionPairs.
    """
    use_image = np.max(pair.image_probs, axis=-1) > np.max(pair.text_probs, axis=-1)
    if np.ndim(use_image) == 0:
        return (int(pair.image_top1), "image") if use_image else (int(pair.text_top1), "text")
    return np.where(use_image, pair.image_top1, pair.text_top1), use_image


# ---------------------------------------------------------------------------
# feature-level fusion

class FeatureFusionNet:
    """Text and image towers whose hidden layers are concatenated and fed to a
    1- or 2-layer head. Tower parameters are prefixed ``text.``/``image.``."""

    def __init__(self, text_cfg: TextNetConfig, image_cfg: ImageNetConfig, streams: Streams,
                 head_layers: int = 1, head_hidden: int = 256, head_dim: int | None = None):
        if head_layers not in (1, 2):
            raise ConfigError("fusion head needs 1 or 2 layers")
        self.text = TextCNN(text_cfg, streams.child("fusion"))
        self.image = VGGNet(image_cfg, streams.child("fusion"))
        self.head_dim = text_cfg.num_classes if head_dim is None else head_dim
        self.in_dim = text_cfg.hidden_dim + image_cfg.hidden_dim
        self.head = MLP(self.in_dim, self.head_dim, head_layers, head_hidden,
                        streams("init", "fusion-head"), prefix="head.")
        self.dropout_rate = text_cfg.dropout_rate
        self.params: dict[str, T.Tensor] = {}
        for k, p in self.text.params.items():
            if not k.startswith("fc."):
                self.params["text." + k] = p
        for k, p in self.image.params.items():
            if not k.startswith("out."):
                self.params["image." + k] = p
        self.params.update(self.head.params)
        self.frozen_rows = {"text.embedding": 0}

    def init_from(self, text_model: TextCNN, image_model: VGGNet) -> None:
        """Copy tower weights from trained single-modality networks."""
        sources = {"text.": text_model.params, "image.": image_model.params}
        for name, p in self.params.items():
            prefix = name.split(".", 1)[0] + "."
            if prefix not in sources:
                continue
            src = sources[prefix].get(name[len(prefix):])
            if src is None:
                raise ConfigError(f"pretrained {prefix[:-1]} tower has no parameter {name[len(prefix):]}")
            if src.shape != p.shape:
                raise ConfigError(f"pretrained {name} has shape {src.shape}, fusion tower expects {p.shape}")
            p.data = src.data.copy()

    def joint_hidden(self, ids, images) -> T.Tensor:
        return T.concat([self.text.hidden(ids), self.image.hidden(images)], axis=-1)

    def forward(self, ids, images, train: bool = False, rng=None):
        hid = self.joint_hidden(ids, images)
        dropped = T.dropout(hid, self.dropout_rate, train, rng) if train else hid
        return self.head(dropped), hid

    def predict_logits(self, ids, images, batch_size: int = 128) -> np.ndarray:
        out = [self.forward(ids[i : i + batch_size], images[i : i + batch_size])[0].data
               for i in range(0, len(ids), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.head_dim), np.float32)


def feature_fusion_forward(ids, images, model: FeatureFusionNet, train: bool = False, rng=None) -> T.Tensor:
    return model.forward(ids, images, train, rng)[0]


def train_feature_fusion(
    title_ids: np.ndarray,
    images: np.ndarray,
    targets: np.ndarray,
    text_cfg: TextNetConfig,
    image_cfg: ImageNetConfig,
    opt: OptimizerSettings,
    streams: Streams,
    head_layers: int = 1,
    head_hidden: int = 256,
    init_from: tuple[TextCNN, VGGNet] | None = None,
    q: float = 30.0,
) -> FeatureFusionNet:
    """End-to-end training of towers and head together."""
    model = FeatureFusionNet(text_cfg, image_cfg, streams, head_layers, head_hidden)
    if init_from is not None:
        model.init_from(*init_from)
    model.log = TrainLog()

    def batch_loss(idx, rng):
        logits, _ = model.forward(title_ids[idx], images[idx], True, rng)
        return weighted_sigmoid_ce(logits, targets[idx], q)

    losses = run_epochs(
        model.params, len(title_ids), batch_loss, opt,
        shuffle_rng=lambda e: streams("shuffle", "fusion-e2e", e),
        dropout_rng=lambda e: streams("dropout", "fusion-e2e", e),
        frozen_rows=model.frozen_rows,
    )
    model.log.epoch_loss = losses
    return model


class HiddenClassifier:
    """New classifier over frozen concatenated hidden vectors."""

    def __init__(self, in_dim: int, num_classes: int, num_layers: int, hidden_units: int, streams: Streams):
        self.mlp = MLP(in_dim, num_classes, num_layers, hidden_units, streams("init", "multistep"))
        self.params = self.mlp.params
        self.num_layers = num_layers
        self.hidden_units = hidden_units
        self.log = TrainLog()

    def predict_logits(self, hidden: np.ndarray) -> np.ndarray:
        return self.mlp(np.asarray(hidden, np.float32)).data


def export_hiddens(text_model: TextCNN, image_model: VGGNet, title_ids, images) -> np.ndarray:
    """Concatenated last hidden layers, one row per product."""
    return np.concatenate([text_model.hidden_matrix(title_ids), image_model.hidden_matrix(images)], axis=1)


def multistep_fusion(
    hidden: np.ndarray,
    targets: np.ndarray,
    opt: OptimizerSettings,
    streams: Streams,
    num_layers: int = 1,
    hidden_units: int = 256,
    q: float = 30.0,
) -> HiddenClassifier:
    """Train only a new classifier on fixed (already exported) hidden vectors."""
    hidden = np.asarray(hidden, np.float32)
    clf = HiddenClassifier(hidden.shape[1], targets.shape[1], num_layers, hidden_units, streams)

    def batch_loss(idx, rng):
        return weighted_sigmoid_ce(clf.mlp(hidden[idx]), targets[idx], q)

    clf.log.epoch_loss = run_epochs(
        clf.params, len(hidden), batch_loss, opt,
        shuffle_rng=lambda e: streams("shuffle", "multistep", e),
        dropout_rng=lambda e: streams("dropout", "multistep", e),
    )
    return clf
