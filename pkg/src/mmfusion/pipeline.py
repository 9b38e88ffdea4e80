"""End-to-end experiment: towers on train, policies on validation, all
evaluation on test. Every phase reads and writes files in ``cfg.out``."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import checkpoint, datagen
from . import evalkit as ek
from .config import RunConfig
from .fusion import (
    CP_KINDS,
    FeatureFusionNet,
    HiddenClassifier,
    Policy,
    PolicyConfig,
    PolicyInputs,
    PredictionPairs,
    export_hiddens,
    feature_dim,
    fixed_max,
    fixed_mean,
    fixed_mean_logits,
    fused_accuracy,
    make_policy_dataset,
    multistep_fusion,
    train_feature_fusion,
    train_policy,
    _policy_model,
)
from .image_net import ImageNetConfig, ImagePreprocStats, VGGNet, compute_stats, preprocess_images, train_image
from .rng import Streams
from .text_net import TextCNN, TextNetConfig, Vocabulary, build_vocab, encode_titles, train_text

logger = logging.getLogger(__name__)


class MissingArtifact(FileNotFoundError):
    """A phase needs the output of an earlier phase that is not on disk."""


@dataclass
class Splits:
    train: datagen.Dataset
    val: datagen.Dataset
    test: datagen.Dataset
    num_classes: int


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"missing {what}: {path}")
    return path


@lru_cache(maxsize=4)
def _load_dataset_cached(path: str, mtime: float) -> datagen.Dataset:
    return datagen.load_dataset(path)


def load_splits(cfg: RunConfig) -> Splits:
    rec = cfg.data_path / datagen.RECORDS_FILE
    _require(rec, "dataset")
    ds = _load_dataset_cached(str(cfg.data_path), rec.stat().st_mtime)
    train, val, test = datagen.split(ds, cfg.split, cfg.seed)
    return Splits(train, val, test, ds.num_classes)


def _write_log(path: Path, lines) -> None:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def out_dir(cfg: RunConfig) -> Path:
    p = cfg.out_path
    p.mkdir(parents=True, exist_ok=True)
    return p


# ---------------------------------------------------------------------------
# towers

def text_config(cfg: RunConfig, num_classes: int, vocab_size: int) -> TextNetConfig:
    t = cfg.text
    return TextNetConfig(num_classes, vocab_size, t.embed_dim, t.max_len, t.filter_widths,
                         t.filters_per_width, t.dropout_rate, t.q)


def image_config(cfg: RunConfig, num_classes: int) -> ImageNetConfig:
    i = cfg.image
    return ImageNetConfig(num_classes, i.input_size, i.conv_blocks, i.fc_dims, i.q)


def train_text_phase(cfg: RunConfig) -> Path:
    s = load_splits(cfg)
    out = out_dir(cfg)
    vocab = build_vocab(s.train.titles)
    vocab.save(out / "vocab.txt")
    tcfg = text_config(cfg, s.num_classes, len(vocab))
    enc = lambda d: encode_titles(d.titles, vocab, tcfg.max_len)
    res = train_text(enc(s.train), s.train.targets(), tcfg, cfg.opt_text, Streams(cfg.seed),
                     val_ids=enc(s.val), val_shelves=s.val.shelves)
    checkpoint.save(out / "text.ckpt", res.model.params, checkpoint.fingerprint(tcfg.fingerprint_fields()))
    _write_log(out / "text.log", res.log.lines())
    return out / "text.ckpt"


def train_image_phase(cfg: RunConfig) -> Path:
    s = load_splits(cfg)
    out = out_dir(cfg)
    icfg = image_config(cfg, s.num_classes)
    stats = compute_stats(s.train.images, icfg.input_size)
    (out / "image_stats.json").write_text(json.dumps({"channel_mean": stats.to_list()}) + "\n", encoding="utf-8")
    prep = lambda d: preprocess_images(d.images, icfg.input_size, stats)
    res = train_image(prep(s.train), s.train.targets(), icfg, cfg.opt_image, Streams(cfg.seed),
                      val_images=prep(s.val), val_shelves=s.val.shelves)
    checkpoint.save(out / "image.ckpt", res.model.params, checkpoint.fingerprint(icfg.fingerprint_fields()))
    _write_log(out / "image.log", res.log.lines())
    return out / "image.ckpt"


def load_vocab(cfg: RunConfig) -> Vocabulary:
    return Vocabulary.load(_require(cfg.out_path / "vocab.txt", "text vocabulary"))


def load_stats(cfg: RunConfig) -> ImagePreprocStats:
    p = _require(cfg.out_path / "image_stats.json", "image statistics")
    return ImagePreprocStats(tuple(json.loads(p.read_text())["channel_mean"]))


def load_text(cfg: RunConfig, num_classes: int) -> tuple[TextCNN, Vocabulary]:
    ckpt = _require(cfg.out_path / "text.ckpt", "text checkpoint")
    vocab = load_vocab(cfg)
    tcfg = text_config(cfg, num_classes, len(vocab))
    model = TextCNN(tcfg, Streams(cfg.seed))
    checkpoint.load_into(model, ckpt, checkpoint.fingerprint(tcfg.fingerprint_fields()))
    return model, vocab


def load_image(cfg: RunConfig, num_classes: int) -> tuple[VGGNet, ImagePreprocStats]:
    ckpt = _require(cfg.out_path / "image.ckpt", "image checkpoint")
    stats = load_stats(cfg)
    icfg = image_config(cfg, num_classes)
    model = VGGNet(icfg, Streams(cfg.seed))
    checkpoint.load_into(model, ckpt, checkpoint.fingerprint(icfg.fingerprint_fields()))
    return model, stats


@dataclass
class Towers:
    text: TextCNN
    vocab: Vocabulary
    image: VGGNet
    stats: ImagePreprocStats

    def title_ids(self, ds: datagen.Dataset) -> np.ndarray:
        return encode_titles(ds.titles, self.vocab, self.text.cfg.max_len)

    def images(self, ds: datagen.Dataset) -> np.ndarray:
        return preprocess_images(ds.images, self.image.cfg.input_size, self.stats)

    def pairs(self, ds: datagen.Dataset) -> PredictionPairs:
        return PredictionPairs.from_logits(
            ds.ids, self.text.predict_logits(self.title_ids(ds)),
            self.image.predict_logits(self.images(ds)), ds.shelves,
        )

    def policy_inputs(self, ds: datagen.Dataset, kind: str, pairs: PredictionPairs) -> PolicyInputs:
        ids = self.title_ids(ds) if kind in ("text-input", "both-inputs") else None
        imgs = self.images(ds) if kind in ("image-input", "both-inputs") else None
        return PolicyInputs(pairs, ids, imgs, kind)


def load_towers(cfg: RunConfig, num_classes: int) -> Towers:
    text, vocab = load_text(cfg, num_classes)
    image, stats = load_image(cfg, num_classes)
    return Towers(text, vocab, image, stats)


# ---------------------------------------------------------------------------
# policies

def policy_fingerprint(cfg: RunConfig, pc: PolicyConfig, num_classes: int, vocab_size: int) -> str:
    fields = pc.fingerprint_fields(feature_dim(pc.input_kind, num_classes) if pc.input_kind in CP_KINDS else None)
    if pc.input_kind in ("text-input", "both-inputs"):
        fields["text"] = text_config(cfg, num_classes, vocab_size).fingerprint_fields()
    if pc.input_kind in ("image-input", "both-inputs"):
        fields["image"] = image_config(cfg, num_classes).fingerprint_fields()
    return checkpoint.fingerprint(fields)


def _dev_split(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = Streams(seed)("policy-dev").permutation(n)
    n_dev = int(round(fraction * n))
    return np.sort(order[n_dev:]), np.sort(order[:n_dev])


def train_policy_phase(cfg: RunConfig) -> list[Path]:
    s = load_splits(cfg)
    towers = load_towers(cfg, s.num_classes)
    out = out_dir(cfg)
    pairs = towers.pairs(s.val)
    pairs.save(out / "pairs_val.jsonl")
    fit_idx, dev_idx = _dev_split(len(pairs), cfg.policy_dev_fraction, cfg.seed)
    written = []
    for pc in cfg.policies():
        inputs = towers.policy_inputs(s.val, pc.input_kind, pairs)
        examples = make_policy_dataset(pairs, pc.input_kind, tower_train_ids=s.train.ids)
        fit_ex = _subset_examples(examples, fit_idx)
        dev = None
        if len(dev_idx):
            dev = (inputs.subset(dev_idx), _subset_examples(examples, dev_idx))
        policy = train_policy(
            fit_ex, inputs.subset(fit_idx), pc, cfg.opt_policy, Streams(cfg.seed), s.num_classes, dev,
            text_cfg=towers.text.cfg, image_cfg=towers.image.cfg,
        )
        path = out / f"policy_{pc.tag}.ckpt"
        params = policy.params if policy.constant is None else {"constant": np.array([policy.constant], np.float32)}
        checkpoint.save(path, params, policy_fingerprint(cfg, pc, s.num_classes, len(towers.vocab)))
        lines = policy.log.lines()
        if policy.selected_epoch is not None:
            lines.append(f"selected_epoch={policy.selected_epoch}")
        _write_log(out / f"policy_{pc.tag}.log", lines)
        written.append(path)
    return written


def _subset_examples(ex, idx):
    from .fusion import PolicyExamples

    idx = np.asarray(idx, dtype=np.int64)
    return PolicyExamples([ex.ids[i] for i in idx], None if ex.features is None else ex.features[idx], ex.labels[idx], ex.kind)


def load_policy(cfg: RunConfig, pc: PolicyConfig, towers: Towers, num_classes: int) -> Policy:
    path = _require(cfg.out_path / f"policy_{pc.tag}.ckpt", f"policy checkpoint {pc.tag}")
    fp = policy_fingerprint(cfg, pc, num_classes, len(towers.vocab))
    arrays, _ = checkpoint.load(path, fp)
    if set(arrays) == {"constant"}:
        return Policy(pc, constant=int(arrays["constant"][0]))
    model = _policy_model(pc, Streams(cfg.seed), num_classes, towers.text.cfg, towers.image.cfg)
    checkpoint.load_into(model, path, fp)
    return Policy(pc, model)


# ---------------------------------------------------------------------------
# feature-level fusion

def _fusion_fp(cfg: RunConfig, towers_cfgs, kind: str, extra: dict) -> str:
    tcfg, icfg = towers_cfgs
    return checkpoint.fingerprint({"kind": kind, "text": tcfg.fingerprint_fields(),
                                   "image": icfg.fingerprint_fields(), **extra})


def train_fusion_e2e_phase(cfg: RunConfig) -> Path:
    s = load_splits(cfg)
    out = out_dir(cfg)
    init = None
    if cfg.fusion.init_from_towers:
        towers = load_towers(cfg, s.num_classes)
        vocab, stats, init = towers.vocab, towers.stats, (towers.text, towers.image)
    else:
        vocab = build_vocab(s.train.titles)
        icfg0 = image_config(cfg, s.num_classes)
        stats = compute_stats(s.train.images, icfg0.input_size)
    tcfg = text_config(cfg, s.num_classes, len(vocab))
    icfg = image_config(cfg, s.num_classes)
    ids = encode_titles(s.train.titles, vocab, tcfg.max_len)
    imgs = preprocess_images(s.train.images, icfg.input_size, stats)
    model = train_feature_fusion(ids, imgs, s.train.targets(), tcfg, icfg, cfg.opt_fusion, Streams(cfg.seed),
                                 cfg.fusion.head_layers, cfg.fusion.head_hidden, init, cfg.fusion.q)
    fp = _fusion_fp(cfg, (tcfg, icfg), "fusion-e2e", {"head_layers": cfg.fusion.head_layers, "head_hidden": cfg.fusion.head_hidden})
    checkpoint.save(out / "fusion_e2e.ckpt", model.params, fp)
    _write_log(out / "fusion_e2e.log", [f"epoch={i} loss={l:.6f}" for i, l in enumerate(model.log.epoch_loss)])
    return out / "fusion_e2e.ckpt"


def train_fusion_multistep_phase(cfg: RunConfig) -> Path:
    s = load_splits(cfg)
    towers = load_towers(cfg, s.num_classes)
    out = out_dir(cfg)
    hidden = export_hiddens(towers.text, towers.image, towers.title_ids(s.train), towers.images(s.train))
    clf = multistep_fusion(hidden, s.train.targets(), cfg.opt_fusion, Streams(cfg.seed),
                           cfg.fusion.head_layers, cfg.fusion.head_hidden, cfg.fusion.q)
    fp = _fusion_fp(cfg, (towers.text.cfg, towers.image.cfg), "fusion-multistep",
                    {"head_layers": cfg.fusion.head_layers, "head_hidden": cfg.fusion.head_hidden})
    checkpoint.save(out / "fusion_multistep.ckpt", clf.params, fp)
    _write_log(out / "fusion_multistep.log", [f"epoch={i} loss={l:.6f}" for i, l in enumerate(clf.log.epoch_loss)])
    return out / "fusion_multistep.ckpt"


def evaluate_feature_fusion(cfg: RunConfig) -> dict:
    """Test top-1 of whichever feature-level fusion checkpoints exist."""
    s = load_splits(cfg)
    towers = load_towers(cfg, s.num_classes)
    out = cfg.out_path
    results = {}
    tcfg, icfg = towers.text.cfg, towers.image.cfg
    ids, imgs = towers.title_ids(s.test), towers.images(s.test)
    extra = {"head_layers": cfg.fusion.head_layers, "head_hidden": cfg.fusion.head_hidden}
    if (out / "fusion_e2e.ckpt").exists():
        model = FeatureFusionNet(tcfg, icfg, Streams(cfg.seed), cfg.fusion.head_layers, cfg.fusion.head_hidden)
        checkpoint.load_into(model, out / "fusion_e2e.ckpt", _fusion_fp(cfg, (tcfg, icfg), "fusion-e2e", extra))
        results["fusion-e2e"] = ek.top1_accuracy(np.argmax(model.predict_logits(ids, imgs), -1), s.test.shelves)
    if (out / "fusion_multistep.ckpt").exists():
        hidden = export_hiddens(towers.text, towers.image, ids, imgs)
        clf = HiddenClassifier(hidden.shape[1], s.num_classes, cfg.fusion.head_layers, cfg.fusion.head_hidden, Streams(cfg.seed))
        checkpoint.load_into(clf, out / "fusion_multistep.ckpt", _fusion_fp(cfg, (tcfg, icfg), "fusion-multistep", extra))
        results["fusion-multistep"] = ek.top1_accuracy(np.argmax(clf.predict_logits(hidden), -1), s.test.shelves)
    return results


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class Evaluation:
    rows: list
    quadrants: ek.QuadrantReport
    text_acc: float
    image_acc: float
    oracle_acc: float
    image_selections: dict  # policy tag -> number of products routed to the image network
    fused: dict             # policy tag -> fused accuracy (unrounded)


def evaluate(cfg: RunConfig) -> Evaluation:
    s = load_splits(cfg)
    towers = load_towers(cfg, s.num_classes)
    out = out_dir(cfg)
    pairs = towers.pairs(s.test)
    pairs.save(out / "pairs_test.jsonl")
    v = ek.CorrectnessVectors.from_pairs(pairs)
    text_acc = float(v.text_correct.mean())
    image_acc = float(v.image_correct.mean())
    oracle = ek.oracle_accuracy(v)
    labels = make_policy_dataset(pairs, "CP-3").labels
    rows, selections, fused = [], {}, {}
    for pc in cfg.policies():
        policy = load_policy(cfg, pc, towers, s.num_classes)
        choice = policy.choose_image(towers.policy_inputs(s.test, pc.input_kind, pairs))
        acc = fused_accuracy(pairs, choice)
        selections[pc.tag] = int(choice.sum())
        fused[pc.tag] = acc
        label = {"text-input": "Text", "image-input": "Image", "both-inputs": "Both"}.get(pc.input_kind, pc.input_kind)
        layers = pc.num_layers if pc.input_kind in CP_KINDS else None
        rows.append(ek.EvalReport(label, layers, pc.q, text_acc, image_acc, acc, oracle,
                                  ek.policy_binary_accuracy(choice, labels)))
    mean_acc = ek.top1_accuracy(fixed_mean(pairs), pairs.shelves)
    fused["Fixed-Mean"] = mean_acc
    rows.append(ek.EvalReport("Fixed-Mean", None, None, text_acc, image_acc, mean_acc, oracle, None))
    logit_acc = ek.top1_accuracy(fixed_mean_logits(pairs), pairs.shelves)
    fused["Fixed-Mean-Logits"] = logit_acc
    rows.append(ek.EvalReport("Fixed-Mean-Logits", None, None, text_acc, image_acc, logit_acc, oracle, None))
    max_pred, max_img = fixed_max(pairs)
    max_acc = ek.top1_accuracy(max_pred, pairs.shelves)
    fused["Fixed-Max"] = max_acc
    selections["Fixed-Max"] = int(max_img.sum())
    rows.append(ek.EvalReport("Fixed-Max", None, None, text_acc, image_acc, max_acc, oracle,
                              ek.policy_binary_accuracy(max_img, labels)))
    ek.emit_report(rows, out / "report.csv")
    quad = ek.quadrant_report(v)
    _write_log(out / "quadrants.txt", quad.lines())
    return Evaluation(rows, quad, text_acc, image_acc, oracle, selections, fused)


def export_activations_phase(cfg: RunConfig, which: str, split_name: str = "test") -> Path:
    s = load_splits(cfg)
    ds = {"train": s.train, "val": s.val, "validation": s.val, "test": s.test}[split_name]
    out = out_dir(cfg)
    path = out / f"activations_{which}_{split_name}.f32"
    if which == "text":
        model, vocab = load_text(cfg, s.num_classes)
        ek.export_activations(model, encode_titles(ds.titles, vocab, model.cfg.max_len), ds.ids, path)
    elif which == "image":
        model, stats = load_image(cfg, s.num_classes)
        ek.export_activations(model, preprocess_images(ds.images, model.cfg.input_size, stats), ds.ids, path)
    else:
        raise ValueError(f"unknown tower {which!r}")
    return path
