import itertools
import warnings

import numpy as np
import pytest

from mmfusion import fusion as F
from mmfusion.image_net import ImageNetConfig, VGGNet
from mmfusion.losses import weighted_sigmoid_ce
from mmfusion.optim import OptimizerSettings
from mmfusion.rng import Streams, stream
from mmfusion.tensor import ConfigError
from mmfusion.text_net import TextCNN, TextNetConfig


def _pairs_from_correctness(text_ok, image_ok, num_classes=4):
    """Pairs whose top-1 predictions are right exactly where requested."""
    n = len(text_ok)
    shelves = [frozenset({0}) for _ in range(n)]
    tl = np.zeros((n, num_classes))
    il = np.zeros((n, num_classes))
    tl[np.arange(n), np.where(text_ok, 0, 1)] = 3.0
    il[np.arange(n), np.where(image_ok, 0, 2)] = 3.0
    return F.PredictionPairs.from_logits([f"p{i}" for i in range(n)], tl, il, shelves)


def _random_pairs(n=200, c=6, seed=0):
    rng = stream(seed, "pairs")
    shelves = [frozenset(rng.choice(c, size=int(rng.integers(1, 3)), replace=False).tolist()) for _ in range(n)]
    return F.PredictionPairs.from_logits(
        [f"p{i}" for i in range(n)], 2 * rng.standard_normal((n, c)), 2 * rng.standard_normal((n, c)), shelves
    )


def test_truth_table_is_exhaustive():
    combos = list(itertools.product([True, False], repeat=2))
    text_ok = [t for t, _ in combos]
    image_ok = [i for _, i in combos]
    ex = F.make_policy_dataset(_pairs_from_correctness(text_ok, image_ok), "CP-3")
    expected = {(True, True): 0, (True, False): 0, (False, True): 1, (False, False): 0}
    assert ex.labels.tolist() == [expected[c] for c in combos]


def test_label_rate_equals_image_only_quadrant():
    pairs = _random_pairs()
    ex = F.make_policy_dataset(pairs, "CP-1")
    assert ex.labels.mean() == np.mean(pairs.image_correct() & ~pairs.text_correct())


def test_leakage_is_detected():
    pairs = _random_pairs(10)
    with pytest.raises(F.LeakageError):
        F.make_policy_dataset(pairs, "CP-3", tower_train_ids=["p3", "zz"])


def test_pair_invariants():
    pairs = _random_pairs()
    assert np.allclose(pairs.text_probs.sum(1), 1, atol=1e-6)
    assert np.array_equal(pairs.image_top1, np.argmax(pairs.image_logits, 1))
    tie = F.PredictionPairs.from_logits(["a"], [[1.0, 1.0, 0.0]], [[0.0, 2.0, 2.0]])
    assert tie.text_top1[0] == 0 and tie.image_top1[0] == 1


@pytest.mark.parametrize("kind,dim", [("CP-1", 2), ("CP-3", 6), ("CP-all", 12)])
def test_cp_features(kind, dim):
    pairs = _random_pairs(c=6)
    feats = F.cp_features(pairs, kind)
    assert feats.shape == (len(pairs), dim) == (len(pairs), F.feature_dim(kind, 6))
    assert np.all((feats >= 0) & (feats <= 1))
    if kind == "CP-3":
        assert np.all(np.diff(feats[:, :3], axis=1) <= 0) and np.all(np.diff(feats[:, 3:], axis=1) <= 0)
    assert np.array_equal(F.cp_features(pairs[3], kind), feats[3])


def test_pairs_file_round_trip(tmp_path):
    pairs = _random_pairs(20)
    pairs.save(tmp_path / "pairs.jsonl")
    back = F.PredictionPairs.load(tmp_path / "pairs.jsonl")
    assert back.ids == pairs.ids and back.shelves == pairs.shelves
    assert np.array_equal(back.text_probs, pairs.text_probs)
    assert np.array_equal(back.image_top1, pairs.image_top1)


def test_policy_config_parsing():
    pc = F.PolicyConfig.parse("CP-3/2/5")
    assert (pc.input_kind, pc.num_layers, pc.q, pc.hidden_units) == ("CP-3", 2, 5.0, 10)
    assert F.PolicyConfig.parse("both-inputs/-/7").tag == "both-inputs_q7"
    for bad in ("CP-9/2/5", "CP-3/3/5", "CP-3/2/0", "CP-3"):
        with pytest.raises(ConfigError):
            F.PolicyConfig.parse(bad)


def _toy_examples(features, labels):
    n = len(labels)
    pairs = F.PredictionPairs([f"p{i}" for i in range(n)], None, None, None, None)
    ex = F.PolicyExamples(pairs.ids, features.astype(np.float32), np.asarray(labels, np.int64), "CP-1")
    inputs = _FeatureInputs(features.astype(np.float32))
    return ex, inputs


class _FeatureInputs(F.PolicyInputs):
    """Policy inputs backed by a raw feature matrix instead of pairs."""

    def __init__(self, feats):
        super().__init__(kind="CP-1")
        self.feats = feats

    def __len__(self):
        return len(self.feats)

    def cp(self, kind):
        return self.feats


def _fit(features, labels, q=1.0, epochs=30, layers=2, lr=1e-2):
    ex, inputs = _toy_examples(features, labels)
    pol = F.train_policy(ex, inputs, F.PolicyConfig("CP-1", layers, 10, q),
                         OptimizerSettings(learning_rate=lr, epochs=epochs), Streams(0), num_classes=2)
    return pol, inputs


def test_policy_learns_planted_rule():
    x = stream(0, "toy").random((1000, 2))
    y = (x[:, 0] < x[:, 1]).astype(int)
    pol, inputs = _fit(x, y)
    assert np.mean(pol.choose_image(inputs) == y) >= 0.99


def test_larger_q_selects_more_images():
    rng = stream(1, "imbalanced")
    x = rng.random((2000, 2))
    # about 8% positives with a noisy boundary
    y = ((x[:, 0] - x[:, 1] + 0.25 * rng.standard_normal(2000)) > 0.68).astype(int)
    assert 0.05 < y.mean() < 0.11
    lo, inputs = _fit(x, y, q=1.0)
    hi, _ = _fit(x, y, q=5.0)
    assert hi.choose_image(inputs).sum() > lo.choose_image(inputs).sum()


def test_no_signal_gives_majority_rate():
    y = (stream(2, "y").random(500) < 0.2).astype(int)
    pol, inputs = _fit(np.zeros((500, 2)), y, epochs=10)
    assert np.mean(pol.choose_image(inputs) == y) == pytest.approx(max(y.mean(), 1 - y.mean()))


def test_single_label_gives_constant_policy():
    with pytest.warns(RuntimeWarning):
        pol, inputs = _fit(np.ones((20, 2)), np.zeros(20, int))
    assert pol.constant == 0 and not pol.choose_image(inputs).any()


def test_constant_and_oracle_policies():
    pairs = _random_pairs(300)
    inputs = F.PolicyInputs(pairs, kind="CP-3")
    zero, one = F.Policy.constant_policy(0), F.Policy.constant_policy(1)
    assert F.fused_accuracy(pairs, zero.choose_image(inputs)) == pairs.text_correct().mean()
    assert F.fused_accuracy(pairs, one.choose_image(inputs)) == pairs.image_correct().mean()
    labels = F.make_policy_dataset(pairs, "CP-3").labels
    assert F.fused_accuracy(pairs, labels) == np.mean(pairs.text_correct() | pairs.image_correct())
    assert F.fused_predict(pairs[0], zero) == (int(pairs.text_top1[0]), "text")
    assert F.fused_predict(pairs[0], one) == (int(pairs.image_top1[0]), "image")


def test_fused_predict_matches_batch_routing_and_checks_kind():
    pairs = _random_pairs(100)
    ex = F.make_policy_dataset(pairs, "CP-3")
    inputs = F.PolicyInputs(pairs, kind="CP-3")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pol = F.train_policy(ex, inputs, F.PolicyConfig("CP-3", 2, 10, 5), OptimizerSettings(epochs=3), Streams(0), 6)
    batch = F.fused_top1(pairs, pol.choose_image(inputs))
    assert [F.fused_predict(pairs[i], pol)[0] for i in range(len(pairs))] == batch.tolist()
    with pytest.raises(ConfigError):
        F.fused_predict(pairs[0], pol, kind="CP-1")


def test_fixed_rules():
    pair = F.PredictionPair("a", np.array([0.6, 0.4]), np.array([0.2, 0.8]), 0, 1)
    assert F.fixed_mean(pair) == 1
    swapped = F.PredictionPair("a", pair.image_probs, pair.text_probs, 1, 0)
    assert F.fixed_mean(swapped) == F.fixed_mean(pair)
    same = F.PredictionPair("a", np.array([0.1, 0.7, 0.2]), np.array([0.1, 0.7, 0.2]), 1, 1)
    assert F.fixed_mean(same) == 1
    assert F.fixed_max(F.PredictionPair("a", np.array([0.9, 0.1]), np.array([0.4, 0.6]), 0, 1)) == (0, "text")
    assert F.fixed_max(F.PredictionPair("a", np.array([0.6, 0.4]), np.array([0.4, 0.6]), 0, 1)) == (0, "text")
    assert F.fixed_max(F.PredictionPair("a", np.array([0.55, 0.45]), np.array([0.3, 0.7]), 0, 1)) == (1, "image")
    pairs = _random_pairs()
    classes, use_image = F.fixed_max(pairs)
    assert [F.fixed_max(pairs[i])[0] for i in range(len(pairs))] == classes.tolist()
    assert F.fixed_mean_logits(pairs).tolist() == [F.fixed_mean_logits(pairs[i]) for i in range(len(pairs))]


# ---------------------------------------------------------------------------
# feature-level fusion

TEXT = TextNetConfig(num_classes=5, vocab_size=40, embed_dim=8, filters_per_width=6)
IMAGE = ImageNetConfig(num_classes=5, input_size=8, conv_blocks=((1, 4),), fc_dims=(12,))


def _batch(n=6, seed=0):
    rng = stream(seed, "fusion-batch")
    ids = rng.integers(0, 40, size=(n, 40))
    images = rng.standard_normal((n, 8, 8, 3)).astype(np.float32)
    targets = (rng.random((n, 5)) < 0.3).astype(np.float32)
    return ids, images, targets


def test_default_fusion_input_dim():
    net = F.FeatureFusionNet(TextNetConfig(num_classes=20, vocab_size=10), ImageNetConfig(num_classes=20), Streams(0))
    assert net.in_dim == 384 + 256 == 640


def test_gradients_reach_both_towers():
    net = F.FeatureFusionNet(TEXT, IMAGE, Streams(0))
    ids, images, targets = _batch()
    weighted_sigmoid_ce(net.forward(ids, images, True, stream(0, "d"))[0], targets, 30).backward()
    for prefix in ("text.", "image.", "head."):
        assert any(p.grad is not None and np.any(p.grad) for k, p in net.params.items() if k.startswith(prefix))


def test_zero_head_from_pretrained_towers_starts_at_constant_logits():
    text, image = TextCNN(TEXT, Streams(1)), VGGNet(IMAGE, Streams(2))
    net = F.FeatureFusionNet(TEXT, IMAGE, Streams(0))
    net.init_from(text, image)
    for k, p in net.params.items():
        if k.startswith("head."):
            p.data = np.zeros_like(p.data)
    ids, images, targets = _batch()
    loss = weighted_sigmoid_ce(net.forward(ids, images)[0], targets, 30).item()
    const = weighted_sigmoid_ce(np.zeros_like(targets), targets, 30).item()
    assert loss == pytest.approx(const, rel=1e-6)
    assert np.array_equal(net.params["text.conv3.w"].data, text.params["conv3.w"].data)


def test_init_from_mismatched_towers():
    other = TextCNN(TextNetConfig(num_classes=5, vocab_size=40, embed_dim=8, filters_per_width=7), Streams(1))
    net = F.FeatureFusionNet(TEXT, IMAGE, Streams(0))
    with pytest.raises(ConfigError):
        net.init_from(other, VGGNet(IMAGE, Streams(2)))


def test_multistep_keeps_towers_frozen_and_separates():
    text, image = TextCNN(TEXT, Streams(1)), VGGNet(IMAGE, Streams(2))
    before = {k: p.data.copy() for k, p in {**text.params, **image.params}.items()}
    ids, images, _ = _batch(n=64)
    hidden = F.export_hiddens(text, image, ids, images)
    assert hidden.shape == (64, TEXT.hidden_dim + IMAGE.hidden_dim)
    # Targets a linear function of the hiddens can recover.
    w = stream(3, "w").standard_normal((hidden.shape[1], 5))
    labels = np.argmax(hidden @ w, 1)
    targets = np.eye(5, dtype=np.float32)[labels]
    clf = F.multistep_fusion(hidden, targets, OptimizerSettings(learning_rate=1e-2, epochs=200, batch_size=64),
                             Streams(0), num_layers=2, q=1.0)
    assert np.mean(np.argmax(clf.predict_logits(hidden), 1) == labels) >= 0.95
    for k, p in {**text.params, **image.params}.items():
        assert np.array_equal(p.data, before[k])
