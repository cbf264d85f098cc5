"""Augmentations for the labeled and the unlabeled streams, and CutMix"""
import math
import logging
from collections import namedtuple

import numpy as np
import torch
import torchvision.transforms.functional as TF

from . import geometry

logger = logging.getLogger(__name__)

CUTMIX_MODES = ('off', 'axis', 'square')


class AugmentError(Exception):
    """Superclass for all augmentation exceptions."""
    pass
class MixShapeError(AugmentError):
    """Raised when two images or maps to mix do not have the same shape"""
    pass


AugmentParams = namedtuple('AugmentParams', [
    'flip_prob', 'rotate', 'hue_shift', 'saturation_shift', 'value_shift',
    'brightness_shift', 'weak_flip_prob', 'crop_scale', 'jitter_prob', 'jitter',
    'grayscale_prob', 'blur_prob', 'blur_sigma', 'cut_range', 'min_line_length'])
AugmentParams.__new__.__defaults__ = (
    0.5, True, 0.05, 0.2, 0.2, 0.1, 0.5, (0.8, 1.0), 0.8, (0.5, 0.5, 0.5, 0.25),
    0.2, 0.5, (0.1, 2.0), (0.25, 0.75), 2.0)

UnlabeledTriple = namedtuple('UnlabeledTriple', ['weak', 'strong1', 'strong2', 'geom'])

# axis is 'x', 'y' or 'box'. cut is an image pixel index for the axis
# splits and an (x0, y0, x1, y1) box otherwise; the partner covers
# the columns (or rows) from cut onward, or the inside of the box.
MixMask = namedtuple('MixMask', ['axis', 'cut', 'downsample'])


def _to_tensor(image):
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))


def _to_image(tensor):
    return tensor.clamp(0.0, 1.0).numpy().transpose(1, 2, 0).astype(np.float32)


def labeled_augment(image, lines, rng, params=AugmentParams()):
    """
    Random flips, right-angle rotation and an HSV/brightness shift.

    :param image: (H, W, 3) float32 image with values in [0, 1]
    :param lines: LineSegments in image coordinates
    :param rng: numpy Generator
    :returns: (image, lines) in the augmented frame
    """
    height, width = image.shape[:2]
    transform = geometry.identity(width, height)
    if rng.random() < params.flip_prob:
        transform = geometry.compose(transform, geometry.hflip(width, height))
    if rng.random() < params.flip_prob:
        transform = geometry.compose(transform, geometry.vflip(width, height))
    k = int(rng.integers(4)) if params.rotate else 0
    if k:
        transform = geometry.compose(transform, geometry.rot90(k, *transform.dst_size))

    hue = rng.uniform(-params.hue_shift, params.hue_shift)
    saturation = rng.uniform(-params.saturation_shift, params.saturation_shift)
    value = rng.uniform(-params.value_shift, params.value_shift)
    brightness = rng.uniform(-params.brightness_shift, params.brightness_shift)

    if transform.is_identity():
        image, lines = image.copy(), list(lines)
    else:
        image, lines = geometry.apply_transform(transform, image, lines, params.min_line_length)
    if not any((hue, saturation, value, brightness)):
        return image, lines

    tensor = _to_tensor(image)
    if hue:
        tensor = TF.adjust_hue(tensor, hue)
    if saturation:
        tensor = TF.adjust_saturation(tensor, 1.0 + saturation)
    if value:
        tensor = TF.adjust_brightness(tensor, 1.0 + value)
    if brightness:
        tensor = tensor + brightness
    return _to_image(tensor), lines


def _weak_geometry(height, width, rng, params):
    transform = geometry.identity(width, height)
    if rng.random() < params.weak_flip_prob:
        transform = geometry.hflip(width, height)
    scale = math.sqrt(rng.uniform(*params.crop_scale))
    crop_w, crop_h = width * scale, height * scale
    x0 = rng.uniform(0.0, width - crop_w)
    y0 = rng.uniform(0.0, height - crop_h)
    if scale == 1.0:
        return transform
    window = (x0, y0, min(x0 + crop_w, float(width)), min(y0 + crop_h, float(height)))
    crop = geometry.crop_resize(window, (width, height), (width, height))
    return geometry.compose(transform, crop)


def _strong_view(weak, rng, params):
    brightness, contrast, saturation, hue = params.jitter
    jitter = rng.random() < params.jitter_prob
    factors = (rng.uniform(max(0.0, 1 - brightness), 1 + brightness),
               rng.uniform(max(0.0, 1 - contrast), 1 + contrast),
               rng.uniform(max(0.0, 1 - saturation), 1 + saturation),
               rng.uniform(-hue, hue))
    order = rng.permutation(4)
    grayscale = rng.random() < params.grayscale_prob
    blur = rng.random() < params.blur_prob
    sigma = rng.uniform(*params.blur_sigma)
    if not (jitter or grayscale or blur):
        return weak.copy()

    tensor = _to_tensor(weak)
    if jitter:
        for index in order:
            if index == 0:
                tensor = TF.adjust_brightness(tensor, factors[0])
            elif index == 1:
                tensor = TF.adjust_contrast(tensor, factors[1])
            elif index == 2:
                tensor = TF.adjust_saturation(tensor, factors[2])
            else:
                tensor = TF.adjust_hue(tensor, factors[3])
    if grayscale:
        tensor = TF.rgb_to_grayscale(tensor, num_output_channels=3)
    if blur:
        kernel = 2 * int(math.ceil(3 * sigma)) + 1
        tensor = TF.gaussian_blur(tensor, [kernel, kernel], [sigma, sigma])
    return _to_image(tensor)


def make_unlabeled_triple(image, rng, params=AugmentParams()):
    """
    The weak view of an unlabeled image and two strong views of it.

    The weak view is a flip and a random resized crop; each strong view
    adds its own colour jitter, grayscale and blur on top of the weak view,
    so all three stay pixel-aligned.
    """
    height, width = image.shape[:2]
    geom = _weak_geometry(height, width, rng, params)
    weak = geometry.warp_image(geom, image)
    strong1 = _strong_view(weak, rng, params)
    strong2 = _strong_view(weak, rng, params)
    return UnlabeledTriple(weak, strong1, strong2, geom)


def _cut_index(extent, rng, params, downsample):
    lo = int(math.ceil(params.cut_range[0] * extent / downsample))
    hi = int(math.floor(params.cut_range[1] * extent / downsample))
    lo, hi = max(lo, 1), min(hi, extent // downsample - 1)
    return int(rng.integers(lo, max(lo, hi) + 1)) * downsample


def draw_mix_mask(height, width, rng, params=AugmentParams(), mode='axis', downsample=4):
    """Draws one MixMask for an image of the given size"""
    if mode == 'axis':
        if rng.random() < 0.5:
            return MixMask('x', _cut_index(width, rng, params, downsample), downsample)
        return MixMask('y', _cut_index(height, rng, params, downsample), downsample)
    if mode == 'square':
        side = _cut_index(min(height, width), rng, params, downsample)
        x0 = int(rng.integers(0, (width - side) // downsample + 1)) * downsample
        y0 = int(rng.integers(0, (height - side) // downsample + 1)) * downsample
        return MixMask('box', (x0, y0, x0 + side, y0 + side), downsample)
    raise AugmentError('Unknown CutMix mode %s' % mode)


def _partner_region(mask, scale):
    """Row and column slices of the partner side, at 1/scale of image resolution"""
    if mask.axis == 'x':
        return slice(None), slice(mask.cut // scale, None)
    if mask.axis == 'y':
        return slice(mask.cut // scale, None), slice(None)
    x0, y0, x1, y1 = [v // scale for v in mask.cut]
    return slice(y0, y1), slice(x0, x1)


def _copy(array):
    return array.clone() if torch.is_tensor(array) else array.copy()


def mix_images(image_a, image_b, mask):
    """Pastes the partner side of (H, W, C) image_b into image_a"""
    if image_a.shape != image_b.shape:
        raise MixShapeError('Cannot mix images of shape %s and %s' %
                            (image_a.shape, image_b.shape))
    rows, cols = _partner_region(mask, 1)
    mixed = _copy(image_a)
    mixed[rows, cols] = image_b[rows, cols]
    return mixed


def mix_maps(map_a, map_b, mask):
    """Pastes the partner side of map_b into map_a at map scale (last two dims)"""
    if tuple(map_a.shape) != tuple(map_b.shape):
        raise MixShapeError('Cannot mix maps of shape %s and %s' %
                            (tuple(map_a.shape), tuple(map_b.shape)))
    rows, cols = _partner_region(mask, mask.downsample)
    mixed = _copy(map_a)
    mixed[..., rows, cols] = map_b[..., rows, cols]
    return mixed


def mix_batch(maps, masks):
    """Mixes each (C, h, w) map in a batch with its cyclic partner"""
    size = maps.shape[0]
    mixed = [maps[i] if masks[i] is None else mix_maps(maps[i], maps[(i + 1) % size], masks[i])
             for i in range(size)]
    return torch.stack(mixed) if torch.is_tensor(maps) else np.stack(mixed)


def cutmix_axis(triples, rng, params=AugmentParams(), mode='axis', downsample=4):
    """
    CutMix over a batch of UnlabeledTriples.

    Sample i is paired with sample i + 1 (cyclically). Both strong views of
    sample i receive the partner's strong views beyond one cut, drawn along
    x or y with equal probability ('axis') or as a square box ('square').
    Returns the mixed triples and one MixMask per sample; batches smaller
    than two, or mode 'off', are returned untouched with no masks.
    """
    if mode == 'off' or len(triples) < 2:
        return list(triples), []
    size = len(triples)
    mixed, masks = [], []
    for i, triple in enumerate(triples):
        partner = triples[(i + 1) % size]
        height, width = triple.weak.shape[:2]
        mask = draw_mix_mask(height, width, rng, params, mode, downsample)
        mixed.append(triple._replace(strong1=mix_images(triple.strong1, partner.strong1, mask),
                                     strong2=mix_images(triple.strong2, partner.strong2, mask)))
        masks.append(mask)
    logger.debug('CutMix masks: %s', masks)
    return mixed, masks
