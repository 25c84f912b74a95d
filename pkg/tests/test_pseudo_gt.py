import numpy as np
import pytest
import torch

from coordup.backbone import BackboneSpec, ToyBackbone
from coordup.geometry import CropBox, crop
from coordup.pseudo_gt import (
    PseudoGTConfig,
    make_mask_bicubic_target,
    mask_refine,
    teacher_target,
    two_x_feature_target,
)
from coordup.resample import downsample, resample_bicubic, resample_bilinear

from oracles import naive_mask_refine


def random_case(seed, channels=2, size=8, regions=3):
    gen = torch.Generator().manual_seed(seed)
    feats = torch.randn(channels, size, size, generator=gen, dtype=torch.float64)
    labels = torch.randint(0, regions + 1, (size, size), generator=gen)
    return feats, labels


class TestMaskRefine:
    def test_alpha_zero_is_identity(self):
        feats, labels = random_case(0)
        assert torch.equal(mask_refine(feats, labels, 0.0), feats)

    def test_alpha_one_is_piecewise_mean(self):
        feats, labels = random_case(1)
        out = mask_refine(feats, labels, 1.0)
        for region in range(1, int(labels.max()) + 1):
            sel = labels == region
            if not sel.any():
                continue
            for c in range(feats.shape[0]):
                vals = out[c][sel]
                assert torch.allclose(vals, torch.full_like(vals, feats[c][sel].mean()))

    def test_hand_case(self):
        # pixels {1, 3, 10}; regions m1={p0,p1}, m2={p2}; alpha=0.5
        feats = torch.tensor([[[1.0, 3.0, 10.0]]])
        labels = torch.tensor([[1, 1, 2]])
        out = mask_refine(feats, labels, 0.5)
        assert torch.allclose(out, torch.tensor([[[1.5, 2.5, 10.0]]]))

    def test_label_zero_untouched(self):
        feats, labels = random_case(2)
        labels[0] = 0
        out = mask_refine(feats, labels, 0.9)
        assert torch.equal(out[:, 0], feats[:, 0])

    def test_matches_naive_oracle(self):
        for seed in range(5):
            feats, labels = random_case(seed, channels=3)
            expected = naive_mask_refine(feats.numpy(), labels.numpy(), 0.7)
            out = mask_refine(feats, labels, 0.7)
            assert np.abs(out.numpy() - expected).max() < 1e-12

    def test_variance_contraction_and_mean_preservation(self):
        gen = torch.Generator().manual_seed(9)
        for _ in range(30):
            feats, labels = random_case(int(torch.randint(0, 10_000, (1,), generator=gen)))
            alpha = float(torch.rand(1, generator=gen))
            out = mask_refine(feats, labels, alpha)
            for region in range(1, int(labels.max()) + 1):
                sel = labels == region
                if sel.sum() < 2:
                    continue
                for c in range(feats.shape[0]):
                    v_in = feats[c][sel].var(unbiased=False)
                    v_out = out[c][sel].var(unbiased=False)
                    assert abs(v_out - (1 - alpha) ** 2 * v_in) <= 1e-10 * max(v_in, 1.0)
                    assert abs(out[c][sel].mean() - feats[c][sel].mean()) < 1e-12

    def test_idempotent_at_alpha_one(self):
        feats, labels = random_case(11)
        once = mask_refine(feats, labels, 1.0)
        twice = mask_refine(once, labels, 1.0)
        assert torch.allclose(once, twice, atol=1e-12)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            mask_refine(torch.zeros(1, 4, 4), torch.zeros(5, 5, dtype=torch.int64), 0.5)

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            mask_refine(torch.zeros(1, 2, 2), torch.zeros(2, 2, dtype=torch.int64), 1.5)

    def test_batched_matches_per_item(self):
        feats, labels = random_case(12)
        batch = torch.stack([feats, feats * 2])
        out = mask_refine(batch, labels, 0.6)
        assert torch.allclose(out[0], mask_refine(feats, labels, 0.6))
        assert torch.allclose(out[1], mask_refine(feats * 2, labels, 0.6))


class TestMaskBicubicTarget:
    def test_alpha_zero_is_pure_bicubic(self):
        gen = torch.Generator().manual_seed(0)
        lr = torch.randn(1, 2, 2, 2, generator=gen, dtype=torch.float64)
        labels = torch.randint(0, 3, (8, 8), generator=gen)
        out = make_mask_bicubic_target(lr, labels, 8, 8, 0.0)
        assert torch.equal(out, resample_bicubic(lr, 8, 8))

    def test_constant_input_ignores_masks(self):
        lr = torch.full((1, 3, 2, 2), 1.25, dtype=torch.float64)
        labels = torch.randint(0, 3, (8, 8), generator=torch.Generator().manual_seed(1))
        out = make_mask_bicubic_target(lr, labels, 8, 8, 0.8)
        assert torch.allclose(out, torch.full_like(out, 1.25), atol=1e-12)

    def test_matches_composition_oracle(self):
        gen = torch.Generator().manual_seed(2)
        lr = torch.randn(1, 2, 2, 2, generator=gen, dtype=torch.float64)
        labels = (torch.arange(8).view(8, 1).expand(8, 8) < 4).long() + 1
        out = make_mask_bicubic_target(lr, labels, 8, 8, 0.8)
        up = resample_bicubic(lr, 8, 8)
        expected = naive_mask_refine(up[0].numpy(), labels.numpy(), 0.8)
        assert np.abs(out[0].numpy() - expected).max() < 1e-12

    def test_label_size_must_match_target(self):
        with pytest.raises(ValueError):
            make_mask_bicubic_target(torch.zeros(1, 1, 2, 2),
                                     torch.zeros(4, 4, dtype=torch.int64), 8, 8, 0.5)


class TestTwoXTarget:
    def test_shapes(self):
        backbone = ToyBackbone(BackboneSpec(patch_size=14, channels=8))
        img = torch.rand(1, 3, 112, 112, generator=torch.Generator().manual_seed(0))
        assert backbone(img).shape == (1, 8, 8, 8)
        assert two_x_feature_target(backbone, img).shape == (1, 8, 16, 16)

    def test_constant_image(self):
        backbone = ToyBackbone(BackboneSpec(patch_size=8, channels=4))
        out = two_x_feature_target(backbone, torch.full((1, 3, 32, 32), 0.5))
        assert torch.allclose(out, out[:, :, :1, :1].expand_as(out), atol=1e-6)

    def test_deterministic(self):
        backbone = ToyBackbone(BackboneSpec(patch_size=8, channels=4))
        img = torch.rand(1, 3, 32, 32, generator=torch.Generator().manual_seed(1))
        assert torch.equal(two_x_feature_target(backbone, img),
                           two_x_feature_target(backbone, img))


class _IdentityUpsampler:
    """Stands in for a teacher: bilinear resize of the features."""

    def __call__(self, img, feats, out_h, out_w):
        return resample_bilinear(feats, out_h, out_w)


class TestTeacherTarget:
    def setup_method(self):
        self.backbone = ToyBackbone(BackboneSpec(patch_size=8, channels=4))
        gen = torch.Generator().manual_seed(3)
        self.img_hr = torch.rand(1, 3, 64, 64, generator=gen)
        self.masks_hr = torch.randint(0, 4, (64, 64), generator=gen)

    def test_degenerate_pipeline_t1_alpha0(self):
        cfg = PseudoGTConfig(alpha=0.0, t_min=1.0, t_max=1.0)
        box = CropBox(0, 0, 64, 64)
        out = teacher_target(_IdentityUpsampler(), self.backbone, self.img_hr, box,
                             self.masks_hr, cfg, out_size=(64, 64))
        expected = resample_bilinear(self.backbone(self.img_hr), 64, 64)
        assert torch.allclose(out, expected, atol=1e-6)

    def test_output_size_is_student_region(self):
        cfg = PseudoGTConfig(alpha=0.8)
        box = CropBox(16, 8, 32, 32)
        out = teacher_target(_IdentityUpsampler(), self.backbone, self.img_hr, box,
                             self.masks_hr, cfg, out_size=(16, 16))
        assert out.shape == (1, 4, 16, 16)

    def test_matches_manual_composition(self):
        cfg = PseudoGTConfig(alpha=0.8)
        box = CropBox(16, 8, 32, 32)
        teacher = _IdentityUpsampler()
        out = teacher_target(teacher, self.backbone, self.img_hr, box,
                             self.masks_hr, cfg, out_size=(16, 16))

        img_crop = crop(self.img_hr, box)
        feats = self.backbone(img_crop)
        t_out = teacher(img_crop, feats, 32, 32)
        refined_np = naive_mask_refine(t_out[0].numpy(), crop(self.masks_hr, box).numpy(), 0.8)
        expected = downsample(torch.from_numpy(refined_np).unsqueeze(0).float(), 16, 16)
        assert torch.allclose(out, expected, atol=1e-5)

    def test_no_gradient_through_teacher(self, tiny_cfg):
        from coordup.model import CrossAttentionUpsampler

        teacher = CrossAttentionUpsampler(tiny_cfg)
        backbone = ToyBackbone(BackboneSpec(patch_size=8, channels=8))
        cfg = PseudoGTConfig(alpha=0.5)
        out = teacher_target(teacher, backbone, self.img_hr, CropBox(0, 0, 32, 32),
                             self.masks_hr, cfg, out_size=(16, 16))
        assert not out.requires_grad


class TestConfig:
    def test_alpha_bounds(self):
        with pytest.raises(ValueError):
            PseudoGTConfig(alpha=1.2)

    def test_t_ordering(self):
        with pytest.raises(ValueError):
            PseudoGTConfig(t_min=3.0, t_max=2.0)

    def test_mode(self):
        with pytest.raises(ValueError):
            PseudoGTConfig(downsample_mode="area")
