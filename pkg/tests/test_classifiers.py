"""Classifier families: construction, forward/backward, decision rule."""

import numpy as np
import pytest

from cytodiff.classifiers import (
    ClassifierFamily,
    ClassifierSpec,
    ContrastivePromptClassifier,
    SmallCnn,
    build_classifier,
    contrastive_classify,
)
from cytodiff.errors import ConfigError

from oracles import central_difference_grad


def cnn_spec(**kw):
    base = dict(family=ClassifierFamily.CNN_HEAD, num_classes=3, resolution=32, seed=0)
    base.update(kw)
    return ClassifierSpec(**base)


def contrastive_spec(**kw):
    base = dict(family=ClassifierFamily.CONTRASTIVE_PROMPT, num_classes=3, resolution=32, seed=0)
    base.update(kw)
    return ClassifierSpec(**base)


PROMPTS = ["a basophil cell", "a monocyte cell", "an eosinophil cell"]


class TestSpec:
    def test_family_coerces_from_string(self):
        spec = ClassifierSpec(family="cnn_head", num_classes=2)
        assert spec.family is ClassifierFamily.CNN_HEAD

    def test_default_backbones(self):
        assert cnn_spec().backbone == "cnn8-16"
        assert contrastive_spec().backbone == "pixelproj64"

    def test_validation(self):
        with pytest.raises(ConfigError, match="2 classes"):
            cnn_spec(num_classes=1)
        with pytest.raises(ConfigError, match="resolution"):
            cnn_spec(resolution=2)
        with pytest.raises(ConfigError, match="temperature"):
            contrastive_spec(temperature=0.0)
        with pytest.raises(ValueError):
            ClassifierSpec(family="transformer", num_classes=2)


class TestBuild:
    def test_cnn_head(self):
        model = build_classifier(cnn_spec())
        assert isinstance(model, SmallCnn)
        assert model.num_classes == 3
        assert model.conv1.w.shape == (8, 3, 3, 3)
        assert model.conv2.w.shape == (16, 8, 3, 3)
        assert model.head.w.shape == (3, 16)

    def test_custom_cnn_backbone(self):
        model = build_classifier(cnn_spec(backbone="cnn4-8"))
        assert model.conv1.w.shape[0] == 4

    def test_bad_backbone_strings(self):
        with pytest.raises(ConfigError, match="cnn_head backbone"):
            build_classifier(cnn_spec(backbone="resnet50"))
        with pytest.raises(ConfigError, match="contrastive backbone"):
            build_classifier(contrastive_spec(backbone="clip"), prompt_texts=PROMPTS)

    def test_pretrained_not_bundled(self):
        with pytest.raises(ConfigError, match="pretrained"):
            build_classifier(cnn_spec(pretrained=True))

    def test_contrastive_needs_prompts(self):
        with pytest.raises(ConfigError, match="one prompt per class"):
            build_classifier(contrastive_spec())
        with pytest.raises(ConfigError, match="one prompt per class"):
            build_classifier(contrastive_spec(), prompt_texts=PROMPTS[:2])
        model = build_classifier(contrastive_spec(), prompt_texts=PROMPTS)
        assert isinstance(model, ContrastivePromptClassifier)
        assert model.prompts.shape == (3, 32)

    def test_resolution_must_pool_twice(self):
        with pytest.raises(ConfigError, match="divisible by 4"):
            build_classifier(cnn_spec(resolution=30))

    def test_same_seed_same_init(self):
        a = build_classifier(cnn_spec(seed=5))
        b = build_classifier(cnn_spec(seed=5))
        np.testing.assert_array_equal(a.conv1.w, b.conv1.w)
        c = build_classifier(cnn_spec(seed=6))
        assert not np.array_equal(a.conv1.w, c.conv1.w)


def batch(rng, n=4, res=32):
    return rng.integers(0, 256, size=(n, res, res, 3)).astype(np.uint8)


class TestSmallCnn:
    def test_forward_shape(self, rng):
        model = build_classifier(cnn_spec())
        logits = model.forward(model.prepare_batch(batch(rng)))
        assert logits.shape == (4, 3)
        assert logits.dtype == np.float32

    def test_prepare_batch_normalizes(self, rng):
        model = build_classifier(cnn_spec())
        x = model.prepare_batch(batch(rng))
        assert x.shape == (4, 3, 32, 32)
        assert x.min() >= -1.0 and x.max() <= 1.0

    def test_state_dict_round_trip(self, rng):
        a = build_classifier(cnn_spec(seed=1))
        b = build_classifier(cnn_spec(seed=2))
        b.load_state_dict(a.state_dict())
        x = a.prepare_batch(batch(rng))
        np.testing.assert_array_equal(a.forward(x), b.forward(x))

    def test_state_dict_is_a_copy(self):
        model = build_classifier(cnn_spec())
        state = model.state_dict()
        state["head.w"][...] = 0.0
        assert model.head.w.any()

    def test_load_rejects_wrong_keys_and_shapes(self):
        model = build_classifier(cnn_spec())
        with pytest.raises(ConfigError, match="state mismatch"):
            model.load_state_dict({"nope": np.zeros(1)})
        state = model.state_dict()
        state["head.w"] = np.zeros((4, 16), dtype=np.float32)
        with pytest.raises(ConfigError, match="shape"):
            model.load_state_dict(state)

    def test_end_to_end_gradient_matches_fd(self, rng):
        # float32 network, so FD agreement is necessarily coarse; the layer
        # suite covers each piece tightly in float64
        model = build_classifier(cnn_spec(backbone="cnn2-4", resolution=8))
        x = model.prepare_batch(batch(rng, n=2, res=8)).astype(np.float64)
        for layer in (model.conv1, model.conv2, model.head):
            layer.w = layer.w.astype(np.float64)
            layer.b = layer.b.astype(np.float64)
            layer.gw = np.zeros_like(layer.w)
            layer.gb = np.zeros_like(layer.b)
        c = rng.normal(size=(2, 3))
        model.forward(x)
        model.backward(c)
        fd = central_difference_grad(lambda _a: float(np.sum(model.forward(x) * c)), model.head.w)
        np.testing.assert_allclose(model.head.gw, fd, rtol=1e-6, atol=1e-9)


class TestContrastive:
    def test_forward_shape_and_cosine_range(self, rng):
        model = build_classifier(contrastive_spec(temperature=1.0), prompt_texts=PROMPTS)
        logits = model.forward(model.prepare_batch(batch(rng)))
        assert logits.shape == (4, 3)
        # with temperature 1 logits are plain cosine similarities
        assert np.abs(logits).max() <= 1.0 + 1e-5

    def test_temperature_scales_logits(self, rng):
        imgs = batch(rng)
        hot = build_classifier(contrastive_spec(temperature=0.07), prompt_texts=PROMPTS)
        cool = build_classifier(contrastive_spec(temperature=0.14), prompt_texts=PROMPTS)
        lh = hot.forward(hot.prepare_batch(imgs))
        lc = cool.forward(cool.prepare_batch(imgs))
        np.testing.assert_allclose(lh, 2.0 * lc, rtol=1e-4)

    def test_projection_gradient_matches_fd(self, rng):
        model = build_classifier(contrastive_spec(backbone="pixelproj16"), prompt_texts=PROMPTS)
        model.w = model.w.astype(np.float64)
        model.gw = np.zeros_like(model.w)
        feats = rng.normal(size=(3, 16))
        c = rng.normal(size=(3, 3))
        model.forward(feats)
        model.backward(c)

        # independent float64 route for the FD side: the production forward
        # casts logits to float32, whose rounding would swamp the quotient
        prompts = model.prompts.astype(np.float64)
        temp = model.spec.temperature

        def loss64(w):
            e = feats @ w.T
            unit = e / np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-12)
            return float(np.sum((unit @ prompts.T) / temp * c))

        fd = central_difference_grad(loss64, model.w.copy())
        np.testing.assert_allclose(model.gw, fd, rtol=1e-6, atol=1e-9)

    def test_only_projection_is_trainable(self):
        model = build_classifier(contrastive_spec(), prompt_texts=PROMPTS)
        assert [name for name, _, _ in model.params()] == ["proj.w"]

    def test_state_dict_round_trip(self, rng):
        a = build_classifier(contrastive_spec(seed=3), prompt_texts=PROMPTS)
        b = build_classifier(contrastive_spec(seed=4), prompt_texts=PROMPTS)
        b.load_state_dict(a.state_dict())
        feats = a.prepare_batch(batch(rng))
        np.testing.assert_array_equal(a.forward(feats), b.forward(feats))

    def test_prompt_matrix_row_count_checked(self):
        with pytest.raises(ConfigError, match="rows"):
            ContrastivePromptClassifier(contrastive_spec(), np.zeros((2, 32), np.float32), feat_dim=16)


class TestContrastiveDecision:
    def test_picks_most_similar(self):
        prompts = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])}
        decision = contrastive_classify(np.array([0.9, 0.1]), prompts)
        assert decision.label == "a"
        assert not decision.tied
        assert decision.similarities["a"] > decision.similarities["b"]

    def test_scale_invariance(self):
        prompts = {"a": np.array([1.0, 0.0]), "b": np.array([0.5, 0.5])}
        d1 = contrastive_classify(np.array([2.0, 1.0]), prompts)
        d2 = contrastive_classify(np.array([20.0, 10.0]), prompts)
        assert d1.label == d2.label
        assert d1.similarities == pytest.approx(d2.similarities)

    def test_exact_tie_flagged_and_goes_low(self):
        prompts = {"b": np.array([1.0, 0.0]), "a": np.array([0.0, 1.0])}
        decision = contrastive_classify(np.array([1.0, 1.0]), prompts)
        assert decision.tied
        assert decision.label == "a"

    def test_errors(self):
        with pytest.raises(ConfigError, match="empty"):
            contrastive_classify(np.array([1.0]), {})
        with pytest.raises(ConfigError, match="zero vector"):
            contrastive_classify(np.zeros(2), {"a": np.array([1.0, 0.0])})
        with pytest.raises(ConfigError, match="zero vector"):
            contrastive_classify(np.array([1.0, 0.0]), {"a": np.zeros(2)})
        with pytest.raises(ConfigError, match="dimension"):
            contrastive_classify(np.array([1.0, 0.0]), {"a": np.array([1.0, 0.0, 0.0])})
