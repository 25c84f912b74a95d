import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from coordup.geometry import (
    CropBox,
    compose_crops,
    crop,
    label_map_from_binary_masks,
    make_coord_grid,
    map_crop_to_student,
    validate_image,
    validate_label_map,
)


class TestCoordGrid:
    def test_single_pixel_is_origin(self):
        g = make_coord_grid(1, 1)
        assert torch.equal(g, torch.zeros(1, 1, 2))

    def test_2x2_centers(self):
        g = make_coord_grid(2, 2)
        assert torch.allclose(g[0, 0], torch.tensor([-0.5, -0.5]))
        assert torch.allclose(g[0, 1], torch.tensor([0.5, -0.5]))
        assert torch.allclose(g[1, 0], torch.tensor([-0.5, 0.5]))

    def test_4x1_y_coords(self):
        g = make_coord_grid(4, 1)
        expected = torch.tensor([-0.75, -0.25, 0.25, 0.75])
        assert torch.allclose(g[:, 0, 1], expected)
        assert torch.all(g[:, 0, 0] == 0.0)

    @pytest.mark.parametrize("h,w", [(1, 1), (3, 7), (16, 16), (224, 224)])
    def test_values_strictly_inside_unit_square(self, h, w):
        g = make_coord_grid(h, w)
        assert g.min() > -1.0 and g.max() < 1.0

    def test_strictly_increasing(self):
        g = make_coord_grid(5, 9)
        assert torch.all(g[0, 1:, 0] > g[0, :-1, 0])
        assert torch.all(g[1:, 0, 1] > g[:-1, 0, 1])

    @pytest.mark.parametrize("h,w", [(0, 4), (4, 0), (-1, 2)])
    def test_invalid_dims(self, h, w):
        with pytest.raises(ValueError):
            make_coord_grid(h, w)


class TestMapCropToStudent:
    def test_paper_style_case(self):
        box = CropBox(x0=100, y0=60, size_h=224, size_w=224)
        assert map_crop_to_student(box, 2.0) == CropBox(50, 30, 112, 112)

    def test_identity_at_t1(self):
        box = CropBox(3, 5, 7, 11)
        assert map_crop_to_student(box, 1.0) == box

    def test_quarter_scale(self):
        box = CropBox(0, 0, 224, 224)
        assert map_crop_to_student(box, 4.0) == CropBox(0, 0, 56, 56)

    def test_degenerate_raises(self):
        with pytest.raises(ValueError):
            map_crop_to_student(CropBox(0, 0, 1, 1), 4.0)

    def test_invalid_t(self):
        with pytest.raises(ValueError):
            map_crop_to_student(CropBox(0, 0, 4, 4), 0.0)

    @pytest.mark.parametrize("t", [2.0, 4.0])
    def test_round_trip_within_one_pixel_exhaustive(self, t):
        # every box inside a 16x16 raster survives down-then-up scaling
        for y0 in range(16):
            for x0 in range(16):
                for sh in range(1, 17 - y0):
                    for sw in range(1, 17 - x0):
                        box = CropBox(x0, y0, sh, sw)
                        try:
                            down = map_crop_to_student(box, t)
                        except ValueError:
                            assert sh / t < 0.5 or sw / t < 0.5
                            continue
                        back = map_crop_to_student(down, 1.0 / t)
                        for a, b in zip((box.x0, box.y0, box.size_h, box.size_w),
                                        (back.x0, back.y0, back.size_h, back.size_w)):
                            assert abs(a - b) <= max(1, math.ceil(t / 2))

    @pytest.mark.parametrize("t", [2.0, 4.0])
    def test_scaled_fields_within_half_cell(self, t):
        for y0 in range(0, 16, 3):
            for sh in range(1, 17 - y0):
                box = CropBox(0, y0, sh, 8)
                if sh / t < 0.5:
                    with pytest.raises(ValueError):
                        map_crop_to_student(box, t)
                    continue
                down = map_crop_to_student(box, t)
                assert abs(down.y0 - box.y0 / t) <= 0.5
                assert abs(down.size_h - box.size_h / t) <= 0.5


class TestCrop:
    def test_full_extent_identity(self):
        x = torch.arange(16.0).reshape(4, 4)
        assert torch.equal(crop(x, CropBox(0, 0, 4, 4)), x)

    def test_central_block(self):
        x = torch.arange(16.0).reshape(4, 4)
        assert torch.equal(crop(x, CropBox(1, 1, 2, 2)), x[1:3, 1:3])

    def test_out_of_bounds(self):
        x = torch.zeros(4, 4)
        with pytest.raises(ValueError):
            crop(x, CropBox(2, 2, 3, 3))

    def test_composition_matches_nested_crops(self):
        gen = torch.Generator().manual_seed(0)
        x = torch.rand(3, 8, 8, generator=gen)
        for _ in range(50):
            a = CropBox(int(torch.randint(0, 3, (1,), generator=gen)),
                        int(torch.randint(0, 3, (1,), generator=gen)), 5, 5)
            b = CropBox(int(torch.randint(0, 2, (1,), generator=gen)),
                        int(torch.randint(0, 2, (1,), generator=gen)), 3, 3)
            nested = crop(crop(x, a), b)
            composed = crop(x, compose_crops(a, b))
            assert torch.equal(nested, composed)

    def test_returns_copy(self):
        x = torch.zeros(4, 4)
        c = crop(x, CropBox(0, 0, 2, 2))
        c += 1.0
        assert x.sum() == 0

    @given(st.integers(0, 5), st.integers(0, 5), st.integers(1, 3), st.integers(1, 3),
           st.sampled_from([torch.float32, torch.float64, torch.int64]))
    @settings(max_examples=40, deadline=None)
    def test_preserves_dtype_and_value_subset(self, x0, y0, sh, sw, dtype):
        base = torch.arange(64).reshape(8, 8).to(dtype)
        out = crop(base, CropBox(x0, y0, sh, sw))
        assert out.dtype == dtype
        assert set(out.flatten().tolist()) <= set(base.flatten().tolist())


class TestValidators:
    def test_image_range(self):
        with pytest.raises(ValueError):
            validate_image(torch.full((1, 3, 2, 2), 1.5))

    def test_image_shape(self):
        with pytest.raises(ValueError):
            validate_image(torch.zeros(3, 2, 2))

    def test_label_map_negative(self):
        with pytest.raises(ValueError):
            validate_label_map(torch.tensor([[-1, 0]]))

    def test_label_map_float_rejected(self):
        with pytest.raises(ValueError):
            validate_label_map(torch.zeros(2, 2))


class TestOverlapResolution:
    def test_smallest_region_wins(self):
        big = torch.zeros(4, 4, dtype=torch.bool)
        big[0:3, 0:3] = True
        small = torch.zeros(4, 4, dtype=torch.bool)
        small[1, 1] = True
        labels = label_map_from_binary_masks([big, small])
        assert labels[1, 1] == 2
        assert labels[0, 0] == 1
        assert labels[3, 3] == 0

    def test_partition_after_resolution(self):
        gen = torch.Generator().manual_seed(3)
        masks = [torch.rand(6, 6, generator=gen) > 0.5 for _ in range(4)]
        labels = label_map_from_binary_masks(masks)
        covered = torch.zeros(6, 6, dtype=torch.bool)
        for m in masks:
            covered |= m
        assert torch.equal(labels > 0, covered)
