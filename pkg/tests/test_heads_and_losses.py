"""
Tests for the classifier heads, the loss terms and the multitask model.

Tests cover:
- ArcFace logits (margin placement, linear continuation past pi, gradients)
- Type / augmentation losses against scalar oracles
- Stage-dependent loss totals and head freezing
"""

import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F
from torch.func import functional_call

from models.heads import ArcFaceHead, AugHead, HeadConfig, TypeHead, arcface_logits
from models.losses import LossWeights, arcface_loss, aug_loss, total_loss, type_loss
from models.multitask import MultitaskModel, parameter_snapshot, same_parameters
from utils.errors import CheckpointError, LossInputError


def _axis_head(k: int = 2, dim: int = 4, scale: float = 16.0, margin: float = 1.28) -> ArcFaceHead:
    """ArcFace head whose anchors are the first k unit axes."""
    head = ArcFaceHead(k, dim, scale, margin).double()
    with torch.no_grad():
        head.anchors.copy_(torch.eye(dim, dtype=torch.float64)[:k])
    return head


class TestArcFaceHead:
    """Tests for ArcFaceHead and arcface_logits."""

    def test_target_on_anchor(self):
        """theta = 0 puts s*cos(m) on the target logit."""
        logits = arcface_logits(np.array([1.0, 0.0, 0.0, 0.0]), _axis_head(), target=0)
        assert float(logits[0]) == pytest.approx(16 * math.cos(1.28), abs=1e-2)
        assert float(logits[0]) == pytest.approx(4.58, abs=1e-2)

    def test_orthogonal_embedding(self):
        logits = arcface_logits(np.array([0.0, 0.0, 1.0, 0.0]), _axis_head(), target=0)
        assert float(logits[0]) == pytest.approx(-16 * math.sin(1.28), abs=1e-6)
        assert float(logits[1]) == pytest.approx(0.0, abs=1e-6)

    def test_inference_logits_have_no_margin(self):
        logits = arcface_logits(np.array([1.0, 0.0, 0.0, 0.0]), _axis_head())
        assert float(logits[0]) == pytest.approx(16.0, abs=1e-4)
        assert float(logits[1]) == pytest.approx(0.0, abs=1e-6)

    def test_target_logit_monotone_and_continuous(self):
        """The target logit keeps falling as theta grows, also where theta + m passes pi."""
        head = _axis_head()
        thetas = np.linspace(0.01, math.pi - 0.01, 200)
        x = torch.tensor(np.stack([np.cos(thetas), np.sin(thetas), np.zeros_like(thetas), np.zeros_like(thetas)], 1))
        target = head(x, torch.zeros(len(thetas), dtype=torch.long))[:, 0].numpy()
        assert np.all(np.diff(target) < 0)

        crossing = math.pi - 1.28
        near = torch.tensor([[math.cos(crossing + d), math.sin(crossing + d), 0.0, 0.0] for d in (-1e-6, 1e-6)],
                            dtype=torch.float64)
        below, above = head(near, torch.zeros(2, dtype=torch.long))[:, 0]
        assert abs(float(below - above)) < 1e-3

    def test_loss_grows_with_target_angle(self):
        head = _axis_head()
        losses = []
        for theta in np.linspace(0.05, math.pi - 1.28 - 0.05, 10):
            x = torch.tensor([[math.cos(theta), 0.0, math.sin(theta), 0.0]], dtype=torch.float64)
            target = torch.tensor([0])
            losses.append(float(arcface_loss(head(x, target), target).value))
        assert np.all(np.diff(losses) > 0)

    def test_unit_scale_zero_margin_loss(self):
        """Logits (1, 0) for the target class give -log(e / (e + 1))."""
        head = _axis_head(scale=1.0, margin=0.0)
        x = torch.tensor([[1.0, 0.0, 0.0, 0.0]], dtype=torch.float64)
        target = torch.tensor([0])
        value = float(arcface_loss(head(x, target), target).value)
        assert value == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-4)
        assert value == pytest.approx(0.3133, abs=1e-4)

    def test_zero_margin_equals_cosine_softmax(self):
        torch.manual_seed(0)
        head = ArcFaceHead(5, 6, scale=16.0, margin=0.0).double()
        x = torch.randn(20, 6, dtype=torch.float64)
        targets = torch.randint(0, 5, (20,))
        cos = F.normalize(x, dim=1) @ F.normalize(head.anchors, dim=1).T
        expected = F.cross_entropy(16.0 * cos, targets)
        actual = arcface_loss(head(x, targets), targets, reduction="mean").value
        assert abs(float(expected - actual)) < 1e-9

    def test_gradients_match_finite_differences(self):
        """d loss / d x and d loss / d W on K = 3, dim = 5."""
        torch.manual_seed(1)
        head = ArcFaceHead(3, 5).double()
        x = torch.randn(4, 5, dtype=torch.float64, requires_grad=True)
        w = torch.randn(3, 5, dtype=torch.float64, requires_grad=True)
        targets = torch.tensor([0, 1, 2, 1])

        def loss(inp, anchors):
            logits = functional_call(head, {"anchors": anchors}, (inp, targets))
            return arcface_loss(logits, targets).value

        assert torch.autograd.gradcheck(loss, (x, w), eps=1e-6, atol=1e-6, rtol=1e-4)

    def test_anchors_unit_norm(self):
        torch.manual_seed(2)
        head = ArcFaceHead(4, 8)
        assert torch.allclose(head.anchors.norm(dim=1), torch.ones(4), atol=1e-6)
        with torch.no_grad():
            head.anchors.mul_(3.0)
        head.renormalize_()
        assert torch.allclose(head.anchors.norm(dim=1), torch.ones(4), atol=1e-6)

    def test_zero_embedding_rejected(self):
        with pytest.raises(LossInputError, match="Zero-norm"):
            arcface_logits(np.zeros(4), _axis_head())

    def test_non_finite_embedding_rejected(self):
        with pytest.raises(LossInputError, match="Non-finite"):
            arcface_logits(np.array([np.nan, 0.0, 0.0, 1.0]), _axis_head())

    def test_target_out_of_range(self):
        with pytest.raises(LossInputError, match="outside"):
            arcface_logits(np.ones(4), _axis_head(), target=2)

    def test_margin_must_stay_below_pi(self):
        with pytest.raises(ValueError, match="below pi"):
            HeadConfig(margin=3.2)

    def test_checkpoint_round_trip(self):
        head = _axis_head().float()
        restored = ArcFaceHead.from_checkpoint(head.to_checkpoint())
        assert torch.equal(head.anchors, restored.anchors)
        assert restored.margin == head.margin

        entry = TypeHead(8).to_checkpoint()
        entry["version"] = 0
        with pytest.raises(CheckpointError, match="version"):
            TypeHead.from_checkpoint(entry)


class TestTypeAndAugHeads:
    def test_probability_strictly_inside_unit_interval(self):
        head = TypeHead(4)
        with torch.no_grad():
            head.linear.weight.fill_(100.0)
        p = head.probability(torch.tensor([[1.0, 1.0, 1.0, 1.0], [-1.0, -1.0, -1.0, -1.0]]))
        assert ((p > 0) & (p < 1)).all()

    def test_aug_head_has_nine_classes(self):
        assert AugHead(8)(torch.zeros(2, 8)).shape == (2, 9)
        with pytest.raises(ValueError, match="9 classes"):
            AugHead(8, num_classes=5)


class TestLosses:
    """Scalar oracles for the three loss terms and their total."""

    def test_type_loss_examples(self):
        assert float(type_loss(torch.tensor([1 - 1e-7], dtype=torch.float64), torch.tensor([1.0]))) == \
            pytest.approx(0.0, abs=1e-6)
        assert float(type_loss(torch.tensor([0.5, 0.5], dtype=torch.float64), torch.tensor([1.0, 0.0]))) == \
            pytest.approx(2 * math.log(2), abs=1e-9)
        assert float(type_loss(torch.tensor([0.9, 0.2], dtype=torch.float64), torch.tensor([1.0, 0.0]))) == \
            pytest.approx(-math.log(0.9) - math.log(0.8), abs=1e-9)

    def test_type_loss_rejects_bad_inputs(self):
        with pytest.raises(LossInputError, match="strictly inside"):
            type_loss(torch.tensor([0.0]), torch.tensor([1.0]))
        with pytest.raises(LossInputError, match="0 or 1"):
            type_loss(torch.tensor([0.5]), torch.tensor([2.0]))

    def test_aug_loss_examples(self):
        uniform = aug_loss(torch.zeros(3, 9, dtype=torch.float64), torch.tensor([0, 4, 8]), reduction="mean")
        assert float(uniform) == pytest.approx(math.log(9), abs=1e-9)

        logits = torch.zeros(1, 9, dtype=torch.float64)
        logits[0, 0] = 2.0
        expected = -math.log(math.exp(2) / (math.exp(2) + 8))
        assert float(aug_loss(logits, torch.tensor([0]))) == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(0.0779, abs=1e-4)

    def test_aug_loss_rejects_wrong_width(self):
        with pytest.raises(LossInputError, match="9 classes"):
            aug_loss(torch.zeros(2, 4), torch.tensor([0, 1]))

    def test_sum_reduction_permutation_invariant_and_additive(self):
        rng = np.random.default_rng(3)
        probs = torch.tensor(rng.uniform(0.05, 0.95, 10))
        labels = torch.tensor(rng.integers(0, 2, 10), dtype=torch.float64)
        perm = torch.tensor(rng.permutation(10))
        assert float(type_loss(probs, labels)) == pytest.approx(float(type_loss(probs[perm], labels[perm])))
        assert float(type_loss(probs, labels)) == pytest.approx(
            float(type_loss(probs[:4], labels[:4]) + type_loss(probs[4:], labels[4:]))
        )

        logits = torch.tensor(rng.standard_normal((10, 9)))
        aug = torch.tensor(rng.integers(0, 9, 10))
        assert float(aug_loss(logits, aug)) == pytest.approx(float(aug_loss(logits[perm], aug[perm])))
        assert float(aug_loss(logits, aug)) == pytest.approx(
            float(aug_loss(logits[:6], aug[:6]) + aug_loss(logits[6:], aug[6:]))
        )

    def test_empty_id_batch(self):
        term = arcface_loss(torch.zeros(0, 3), torch.zeros(0, dtype=torch.long))
        assert term.empty
        assert float(term.value) == 0.0

    def test_total_loss(self):
        one, two, three = torch.tensor(1.0), torch.tensor(2.0), torch.tensor(3.0)
        assert float(total_loss(one, two, three, LossWeights(alpha=1, beta=1), stage=2)) == 6.0
        assert float(total_loss(one, two, three, LossWeights(alpha=1, beta=1), stage=1)) == 5.0
        assert float(total_loss(one, two, three, LossWeights(alpha=0, beta=0), stage=2)) == 1.0
        assert float(total_loss(one, two, three, stage=2, include_aug=False)) == 3.0
        with pytest.raises(LossInputError):
            total_loss(one, two, three, stage=3)


class TestMultitaskModel:
    """Tests for loss wiring and persistence of the full model."""

    @pytest.fixture
    def model(self, tiny_encoder_cfg, tiny_head_cfg):
        torch.manual_seed(0)
        return MultitaskModel("fan", [6, 0, 2], tiny_encoder_cfg, tiny_head_cfg)

    @staticmethod
    def _labels(batch: int, pseudo: int = 0):
        id_targets = torch.tensor([i % 3 for i in range(batch - pseudo)] + [-1] * pseudo)
        type_labels = torch.tensor([1.0] * (batch - pseudo) + [0.0] * pseudo)
        aug_labels = torch.tensor([i % 9 for i in range(batch)])
        return id_targets, type_labels, aug_labels

    def test_class_order(self, model):
        assert model.machine_ids == [0, 2, 6]
        assert model.class_index(6) == 2
        with pytest.raises(LossInputError, match="not a known ID"):
            model.class_index(4)

    def test_type_head_gradient_comes_from_type_loss_only(self, model, feature_batch):
        features = feature_batch(batch=6)
        losses = model.compute_losses(features, *self._labels(6, pseudo=3), stage=2)
        params = list(model.type_head.parameters())
        from_total = torch.autograd.grad(losses.total, params, retain_graph=True)
        from_type = torch.autograd.grad(losses.l_type, params)
        for a, b in zip(from_total, from_type):
            assert torch.allclose(a, b, atol=1e-6)

    def test_stage_one_ignores_type_loss(self, model, feature_batch):
        model.freeze_type_head()
        losses = model.compute_losses(feature_batch(batch=6), *self._labels(6), stage=1)
        assert not losses.l_type.requires_grad
        assert float(losses.total) == pytest.approx(float(losses.l_id + losses.l_aug), rel=1e-6)
        losses.total.backward()
        assert all(p.grad is None for p in model.type_head.parameters())

    @pytest.mark.parametrize("stage", [1, 2])
    def test_total_decomposes_into_weighted_terms(self, model, feature_batch, stage):
        """Each term matches a hand-built cross-entropy and the total is their weighted sum, in float64."""
        model.double().eval()
        features = feature_batch(batch=6).double()
        id_targets, type_labels, aug_labels = self._labels(6, pseudo=3)
        weights = LossWeights(alpha=0.7, beta=0.3)
        losses = model.compute_losses(features, id_targets, type_labels, aug_labels, stage=stage, weights=weights)

        with torch.no_grad():
            emb = model.encoder(features)
            known = id_targets >= 0
            id_logits = model.arcface_head(emb[known], id_targets[known])
            l_id = -id_logits.log_softmax(dim=1)[torch.arange(3), id_targets[known]].sum()
            p = model.type_head.probability(emb)
            l_type = -(type_labels.double() * p.log() + (1 - type_labels.double()) * (1 - p).log()).sum()
            l_aug = -model.aug_head(emb).log_softmax(dim=1)[torch.arange(6), aug_labels].sum()

        assert abs(float(losses.l_id) - float(l_id)) <= 1e-9
        assert abs(float(losses.l_type) - float(l_type)) <= 1e-9
        assert abs(float(losses.l_aug) - float(l_aug)) <= 1e-9
        expected = 0.7 * float(l_id) + 0.3 * float(l_aug) + (float(l_type) if stage == 2 else 0.0)
        assert abs(float(losses.total) - expected) <= 1e-9

    def test_pseudo_only_batch_flags_empty_id_loss(self, model, feature_batch):
        losses = model.compute_losses(feature_batch(batch=4), *self._labels(4, pseudo=4), stage=2)
        assert losses.id_empty
        assert float(losses.l_id) == 0.0

    def test_augmented_samples_can_be_kept_out_of_primary_losses(self, model, feature_batch):
        features = feature_batch(batch=4)
        id_targets = torch.tensor([0, 1, 2, 0])
        type_labels = torch.ones(4)
        aug_labels = torch.tensor([0, 3, 3, 3])
        model.eval()
        masked = model.compute_losses(features, id_targets, type_labels, aug_labels, stage=2,
                                      aug_feeds_primary=False)
        only_clean = model.compute_losses(features[:1], id_targets[:1], type_labels[:1], aug_labels[:1],
                                          stage=2)
        assert float(masked.l_id) == pytest.approx(float(only_clean.l_id), rel=1e-5)
        assert float(masked.l_type) == pytest.approx(float(only_clean.l_type), rel=1e-5)

    def test_checkpoint_round_trip(self, model, feature_batch):
        restored = MultitaskModel.from_checkpoint(model.to_checkpoint())
        x = feature_batch()
        first, second = model.inference(x), restored.inference(x)
        for key in ("embedding", "type_prob", "id_logits"):
            assert torch.equal(first[key], second[key])
        assert restored.machine_ids == model.machine_ids
        assert same_parameters(parameter_snapshot(model), parameter_snapshot(restored))

    def test_checkpoint_missing_section(self, model):
        sections = model.to_checkpoint()
        del sections["aug_head"]
        with pytest.raises(CheckpointError, match="aug_head"):
            MultitaskModel.from_checkpoint(sections)

    def test_mismatched_embedding_dim(self, tiny_encoder_cfg):
        with pytest.raises(ValueError, match="embedding_dim"):
            MultitaskModel("fan", [0, 1], tiny_encoder_cfg, HeadConfig(embedding_dim=64))
