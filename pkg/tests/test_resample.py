import numpy as np
import pytest
import torch
import torch.nn.functional as F

from coordup.resample import downsample, resample_bicubic, resample_bilinear

from oracles import naive_bicubic, naive_bilinear


class TestBilinear:
    def test_constant_map(self):
        x = torch.full((1, 2, 3, 3), 2.5)
        out = resample_bilinear(x, 7, 5)
        assert torch.allclose(out, torch.full((1, 2, 7, 5), 2.5), atol=1e-6)

    def test_1x1_replicates(self):
        x = torch.tensor([[[[3.0]]]])
        out = resample_bilinear(x, 4, 6)
        assert torch.equal(out, torch.full((1, 1, 4, 6), 3.0))

    def test_2x4_row_values(self):
        # hand-evaluated pixel-center weights
        x = torch.tensor([[0.0, 1.0], [0.0, 1.0]])
        out = resample_bilinear(x, 2, 4)
        expected = torch.tensor([0.0, 0.25, 0.75, 1.0])
        assert torch.allclose(out[0], expected, atol=1e-6)
        assert torch.allclose(out[1], expected, atol=1e-6)

    def test_matches_torch_interpolate(self):
        gen = torch.Generator().manual_seed(0)
        x = torch.rand(2, 3, 5, 7, generator=gen)
        ours = resample_bilinear(x, 13, 11)
        theirs = F.interpolate(x, size=(13, 11), mode="bilinear", align_corners=False)
        assert torch.allclose(ours, theirs, atol=1e-5)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        arr = rng.standard_normal((4, 6))
        ours = resample_bilinear(torch.from_numpy(arr), 9, 5).numpy()
        assert np.abs(ours - naive_bilinear(arr, 9, 5)).max() < 1e-10

    def test_identity_at_same_size(self):
        gen = torch.Generator().manual_seed(2)
        x = torch.rand(1, 2, 6, 6, generator=gen)
        assert torch.equal(resample_bilinear(x, 6, 6), x)


class TestBicubic:
    def test_constant_map(self):
        x = torch.full((3, 3), -1.25, dtype=torch.float64)
        out = resample_bicubic(x, 9, 9)
        assert torch.allclose(out, torch.full((9, 9), -1.25, dtype=torch.float64), atol=1e-12)

    def test_1x1_replicates(self):
        out = resample_bicubic(torch.tensor([[2.0]]), 5, 5)
        assert torch.allclose(out, torch.full((5, 5), 2.0), atol=1e-6)

    def test_matches_naive_oracle_3x3_to_9x9(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(50):
            arr = rng.standard_normal((3, 3))
            ours = resample_bicubic(torch.from_numpy(arr), 9, 9).numpy()
            worst = max(worst, np.abs(ours - naive_bicubic(arr, 9, 9)).max())
        assert worst < 1e-5

    def test_reproduces_affine_ramp_on_interior(self):
        ys, xs = torch.meshgrid(torch.arange(8.0), torch.arange(8.0), indexing="ij")
        ramp = (0.3 + 0.7 * xs + 1.1 * ys).double()
        out = resample_bicubic(ramp, 16, 16)
        oy = (torch.arange(16.0) + 0.5) * 0.5 - 0.5
        ox = (torch.arange(16.0) + 0.5) * 0.5 - 0.5
        expected = 0.3 + 0.7 * ox[None, :] + 1.1 * oy[:, None]
        interior = slice(4, 12)  # taps stay inside the source there
        assert torch.allclose(out[interior, interior].float(),
                              expected[interior, interior].float(), atol=1e-6)


class TestLinearity:
    @pytest.mark.parametrize("op", [resample_bilinear, resample_bicubic])
    def test_linear_operator(self, op):
        gen = torch.Generator().manual_seed(5)
        f = torch.rand(1, 2, 4, 4, generator=gen)
        g = torch.rand(1, 2, 4, 4, generator=gen)
        a, b = 1.7, -0.4
        lhs = op(a * f + b * g, 11, 6)
        rhs = a * op(f, 11, 6) + b * op(g, 11, 6)
        assert torch.allclose(lhs, rhs, atol=1e-6)


class TestDownsample:
    def test_constant(self):
        x = torch.full((1, 1, 8, 8), 4.0)
        assert torch.allclose(downsample(x, 3, 3), torch.full((1, 1, 3, 3), 4.0), atol=1e-6)

    def test_average_block_means(self):
        x = torch.arange(16.0).reshape(1, 1, 4, 4)
        out = downsample(x, 2, 2, mode="average")
        expected = torch.tensor([[[[2.5, 4.5], [10.5, 12.5]]]])
        assert torch.equal(out, expected)

    def test_identity_at_same_size(self):
        x = torch.rand(2, 3, 5, 5, generator=torch.Generator().manual_seed(0))
        assert torch.equal(downsample(x, 5, 5), x)

    def test_rejects_upsampling(self):
        with pytest.raises(ValueError):
            downsample(torch.zeros(1, 1, 4, 4), 8, 4)

    def test_average_requires_integer_ratio(self):
        with pytest.raises(ValueError):
            downsample(torch.zeros(1, 1, 4, 4), 3, 3, mode="average")

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            downsample(torch.zeros(1, 1, 4, 4), 2, 2, mode="nope")
