"""Tests for augment.py"""
import numpy as np
import pytest
import torch

from semilsd import augment
from semilsd import geometry
from semilsd import losses
from semilsd.geometry import LineSegment

QUIET = augment.AugmentParams(jitter_prob=0.0, grayscale_prob=0.0, blur_prob=0.0)


def _image(seed, size=64):
    return np.random.default_rng(seed).random((size, size, 3)).astype(np.float32)


def _triples(count, size=64):
    rng = np.random.default_rng(10)
    return [augment.make_unlabeled_triple(_image(i, size), rng) for i in range(count)]


def test_labeled_augment_is_deterministic():
    lines = [LineSegment(5, 5, 50, 40)]
    first = augment.labeled_augment(_image(0), lines, np.random.default_rng(1))
    second = augment.labeled_augment(_image(0), lines, np.random.default_rng(1))
    assert np.array_equal(first[0], second[0])
    assert first[1] == second[1]


def test_labeled_augment_identity_draw():
    params = augment.AugmentParams(flip_prob=0.0, rotate=False, hue_shift=0.0,
                                   saturation_shift=0.0, value_shift=0.0, brightness_shift=0.0)
    image = _image(2)
    lines = [LineSegment(5, 5, 50, 40)]
    out_image, out_lines = augment.labeled_augment(image, lines, np.random.default_rng(0), params)
    assert np.array_equal(out_image, image)
    assert out_image is not image
    assert out_lines == lines


def test_labeled_augment_keeps_lines_on_their_pixels():
    params = augment.AugmentParams(hue_shift=0.0, saturation_shift=0.0, value_shift=0.0,
                                   brightness_shift=0.0)
    lines = [LineSegment(6, 10, 58, 30), LineSegment(20, 50, 40, 8)]
    stroke = geometry.rasterize(lines, (64, 64), thickness=3.0).astype(np.float32)
    image = np.repeat(stroke[..., None], 3, axis=2)
    rng = np.random.default_rng(3)
    for _ in range(20):
        out_image, out_lines = augment.labeled_augment(image, lines, rng, params)
        warped = out_image[..., 0] > 0.5
        redrawn = geometry.rasterize(out_lines, (64, 64), thickness=3.0).astype(bool)
        assert (warped & redrawn).sum() / float((warped | redrawn).sum()) > 0.95


def test_labeled_augment_photometric_leaves_lines():
    params = augment.AugmentParams(flip_prob=0.0, rotate=False)
    lines = [LineSegment(5, 5, 50, 40)]
    image = _image(4)
    out_image, out_lines = augment.labeled_augment(image, lines, np.random.default_rng(5), params)
    assert out_lines == lines
    assert out_image.shape == image.shape
    assert out_image.min() >= 0.0 and out_image.max() <= 1.0


def test_unlabeled_triple_is_deterministic():
    first = augment.make_unlabeled_triple(_image(6), np.random.default_rng(7))
    second = augment.make_unlabeled_triple(_image(6), np.random.default_rng(7))
    for a, b in zip(first[:3], second[:3]):
        assert np.array_equal(a, b)


def test_quiet_strong_views_equal_weak():
    triple = augment.make_unlabeled_triple(_image(8), np.random.default_rng(9), QUIET)
    assert np.array_equal(triple.strong1, triple.weak)
    assert np.array_equal(triple.strong2, triple.weak)


def test_strong_views_are_pixel_aligned():
    params = QUIET._replace(jitter_prob=1.0, jitter=(0.5, 0.0, 0.0, 0.0), grayscale_prob=1.0)
    image = np.zeros((64, 64, 3), dtype=np.float32)
    image[20:23, 40:43] = 0.5
    rng = np.random.default_rng(11)
    for _ in range(10):
        triple = augment.make_unlabeled_triple(image, rng, params)
        peak = np.unravel_index(np.argmax(triple.weak[..., 0]), (64, 64))
        for strong in (triple.strong1, triple.strong2):
            assert np.unravel_index(np.argmax(strong[..., 0]), (64, 64)) == peak


def test_weak_view_follows_its_geometry():
    image = _image(12)
    triple = augment.make_unlabeled_triple(image, np.random.default_rng(13), QUIET)
    assert np.array_equal(triple.weak, geometry.warp_image(triple.geom, image))
    assert triple.geom.dst_size == (64, 64)


def test_axis_cut_is_even_and_inside():
    rng = np.random.default_rng(14)
    masks = [augment.draw_mix_mask(128, 128, rng) for _ in range(10000)]
    x_share = sum(1 for mask in masks if mask.axis == 'x') / 10000.0
    assert abs(x_share - 0.5) <= 0.02
    for mask in masks[:500]:
        assert mask.cut % 4 == 0
        assert 32 <= mask.cut <= 96


def test_square_mode_and_unknown_mode():
    mask = augment.draw_mix_mask(64, 64, np.random.default_rng(15), mode='square')
    x0, y0, x1, y1 = mask.cut
    assert mask.axis == 'box'
    assert x1 - x0 == y1 - y0
    assert 0 <= x0 < x1 <= 64 and 0 <= y0 < y1 <= 64
    with pytest.raises(augment.AugmentError):
        augment.draw_mix_mask(64, 64, np.random.default_rng(0), mode='mosaic')


def test_mix_images_exact_halves():
    a, b = _image(16, 128), _image(17, 128)
    mixed = augment.mix_images(a, b, augment.MixMask('x', 64, 4))
    assert np.array_equal(mixed[:, :64], a[:, :64])
    assert np.array_equal(mixed[:, 64:], b[:, 64:])
    mixed = augment.mix_images(a, b, augment.MixMask('y', 32, 4))
    assert np.array_equal(mixed[:32], a[:32])
    assert np.array_equal(mixed[32:], b[32:])


def test_mix_maps():
    rng = np.random.default_rng(18)
    a, b = rng.normal(size=(16, 8, 8)), rng.normal(size=(16, 8, 8))
    assert np.array_equal(augment.mix_maps(a, b, augment.MixMask('x', 0, 4)), b)
    assert np.array_equal(augment.mix_maps(a, a, augment.MixMask('y', 12, 4)), a)
    mask = augment.MixMask('box', (8, 4, 24, 20), 4)
    mixed = augment.mix_maps(a, b, mask)
    for row in range(8):
        for col in range(8):
            inside = 1 <= row < 5 and 2 <= col < 6
            assert np.array_equal(mixed[:, row, col], (b if inside else a)[:, row, col])
    with pytest.raises(augment.MixShapeError):
        augment.mix_maps(a, b[:, :4], mask)


def test_cutmix_axis_pairs_cyclically():
    triples = _triples(3)
    mixed, masks = augment.cutmix_axis(triples, np.random.default_rng(19))
    assert len(masks) == 3
    for i, (triple, mask) in enumerate(zip(mixed, masks)):
        partner = triples[(i + 1) % 3]
        for view, own, other in ((triple.strong1, triples[i].strong1, partner.strong1),
                                 (triple.strong2, triples[i].strong2, partner.strong2)):
            assert np.array_equal(view, augment.mix_images(own, other, mask))
        assert np.array_equal(triple.weak, triples[i].weak)


def test_cutmix_small_batch_and_off():
    triples = _triples(2)
    assert augment.cutmix_axis(triples[:1], np.random.default_rng(0)) == (triples[:1], [])
    mixed, masks = augment.cutmix_axis(triples, np.random.default_rng(0), mode='off')
    assert masks == [] and mixed == triples


def test_gate_commutes_with_mixing():
    rng = np.random.default_rng(20)
    p_w = torch.from_numpy(rng.normal(size=(3, 16, 16, 16)))
    masks = [augment.draw_mix_mask(64, 64, rng) for _ in range(3)]
    gated_after = losses.confidence_gate(augment.mix_batch(p_w, masks), 0.6)
    gated_before = augment.mix_batch(losses.confidence_gate(p_w, 0.6), masks)
    assert torch.equal(gated_after, gated_before)
