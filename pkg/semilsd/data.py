"""Dataset manifests, splits, mask-derived labels and synthetic line scenes"""
import os
import json
import math
import logging
from collections import namedtuple
from fractions import Fraction

import cv2
import numpy as np

from . import geometry

logger = logging.getLogger(__name__)

ROLES = ('train', 'val', 'test')
FRACTIONS = (Fraction(1, 16), Fraction(1, 8), Fraction(1, 4), Fraction(1, 2), Fraction(1))
IMAGE_EXTENSIONS = ('.png', '.jpg', '.jpeg', '.bmp', '.tif', '.tiff')


class DataError(Exception):
    """Superclass for all data exceptions."""
    pass
class ManifestNotFoundError(DataError):
    """Raised when the manifest file does not exist"""
    pass
class MalformedManifestError(DataError):
    """Raised when the manifest is not a valid manifest document"""
    pass
class DuplicateImageIdError(DataError):
    """Raised when an image id occurs twice in one manifest"""
    pass
class InvalidFractionError(DataError):
    """Raised when a split fraction is not one of the supported fractions"""
    pass
class UnlabeledSampleError(DataError):
    """Raised when labels are required but a sample has none"""
    pass
class ImageNotFoundError(DataError):
    """Raised when an image cannot be read"""
    pass


Sample = namedtuple('Sample', ['image_id', 'image_path', 'lines', 'width', 'height'])

SynthParams = namedtuple('SynthParams', [
    'min_lines', 'max_lines', 'min_length', 'max_length', 'min_separation',
    'line_width', 'max_blobs'])
SynthParams.__new__.__defaults__ = (2, 8, 0.2, 0.8, 16.0, 1.5, 3)


def _validate_lines(raw, width, height, image_id, counts, scores=None):
    if scores is not None and (not isinstance(scores, list) or len(scores) != len(raw)):
        raise MalformedManifestError('Sample %s needs one score per line' % image_id)
    lines = []
    for index, entry in enumerate(raw):
        if not isinstance(entry, (list, tuple)) or len(entry) != 4:
            raise MalformedManifestError('Line %r of %s is not [x1, y1, x2, y2]' % (entry, image_id))
        score = None if scores is None else scores[index]
        try:
            seg = geometry.LineSegment(*entry, score=score)
        except (TypeError, ValueError):
            raise MalformedManifestError('Line %r of %s is not numeric' % (entry, image_id))
        if seg.score is not None and not 0.0 <= seg.score <= 1.0:
            raise MalformedManifestError('Score %r of %s is outside [0, 1]' % (score, image_id))
        if not seg.is_finite() or seg.length == 0:
            counts['dropped'] += 1
            continue
        clipped = geometry.clip_segment(seg, 0.0, 0.0, float(width), float(height))
        if clipped is not seg:
            counts['clipped'] += 1
            if clipped is None or clipped.length == 0:
                counts['dropped'] += 1
                continue
        lines.append(clipped)
    return lines


class DatasetManifest(object):
    """A named list of samples with their line labels"""
    def __init__(self, name, role, samples, root='.'):
        self.name, self.role = name, role
        self.samples = list(samples)
        self.root = root
        self.dropped = self.clipped = 0

    @classmethod
    def load(cls, path):
        """Loads and validates a manifest file"""
        if not os.path.isfile(path):
            raise ManifestNotFoundError('Manifest %s does not exist' % path)
        try:
            with open(path, 'r') as open_file:
                loaded = json.load(open_file)
        except ValueError as error:
            raise MalformedManifestError('Could not parse %s: %s' % (path, error))
        if not isinstance(loaded, dict):
            raise MalformedManifestError('Manifest %s is not a JSON object' % path)
        try:
            name, role, raw_samples = loaded['name'], loaded['role'], loaded['samples']
        except KeyError as error:
            raise MalformedManifestError('Manifest %s lacks the %s field' % (path, error))
        if role not in ROLES:
            raise MalformedManifestError('Unknown role %r in %s' % (role, path))

        counts = {'dropped': 0, 'clipped': 0}
        samples, seen = [], set()
        for raw in raw_samples:
            try:
                image_id, image_path = str(raw['image_id']), str(raw['image_path'])
                width, height = int(raw['width']), int(raw['height'])
                raw_lines = raw['lines']
            except (KeyError, TypeError, ValueError) as error:
                raise MalformedManifestError('Malformed sample %r in %s: %s' % (raw, path, error))
            if image_id in seen:
                raise DuplicateImageIdError('Image id %s occurs more than once in %s' %
                                            (image_id, path))
            seen.add(image_id)
            lines = None
            if raw_lines is not None:
                lines = _validate_lines(raw_lines, width, height, image_id, counts,
                                        raw.get('scores'))
            samples.append(Sample(image_id, image_path, lines, width, height))

        manifest = cls(name, role, samples, os.path.dirname(os.path.abspath(path)))
        manifest.dropped, manifest.clipped = counts['dropped'], counts['clipped']
        if manifest.dropped:
            logger.warning('Dropped %s malformed lines from %s', manifest.dropped, path)
        if manifest.clipped:
            logger.warning('Clipped %s out-of-bounds lines in %s', manifest.clipped, path)
        logger.debug('Loaded %s samples from %s', len(samples), path)
        return manifest

    def to_dict(self, with_scores=False):
        """The manifest document; with_scores adds the line scores of detection output"""
        samples = []
        for sample in self.samples:
            entry = {'image_id': sample.image_id, 'image_path': sample.image_path,
                     'width': sample.width, 'height': sample.height,
                     'lines': None if sample.lines is None else
                              [[seg.x1, seg.y1, seg.x2, seg.y2] for seg in sample.lines]}
            if with_scores and sample.lines and all(seg.score is not None for seg in sample.lines):
                entry['scores'] = [seg.score for seg in sample.lines]
            samples.append(entry)
        return {'name': self.name, 'role': self.role, 'samples': samples}

    def save(self, path, with_scores=False):
        """Writes the manifest as JSON"""
        with open(path, 'w') as open_file:
            open_file.write(json.dumps(self.to_dict(with_scores), indent=4, sort_keys=True))
        logger.debug('Wrote %s samples to %s', len(self.samples), path)

    @property
    def ids(self):
        return [sample.image_id for sample in self.samples]

    @property
    def labeled(self):
        return all(sample.lines is not None for sample in self.samples)

    def image_path(self, sample):
        """The path of a sample's image, resolved against the manifest folder"""
        if os.path.isabs(sample.image_path):
            return sample.image_path
        return os.path.join(self.root, sample.image_path)

    def subset(self, ids, name=None, role=None, strip_lines=False):
        """A manifest with the samples whose ids are listed, in manifest order"""
        wanted = set(ids)
        unknown = wanted - set(self.ids)
        if unknown:
            raise DataError('Unknown image ids: %s' % ', '.join(sorted(unknown)))
        samples = [sample._replace(lines=None) if strip_lines else sample
                   for sample in self.samples if sample.image_id in wanted]
        return DatasetManifest(name or self.name, role or self.role, samples, self.root)

    def require_labels(self):
        for sample in self.samples:
            if sample.lines is None:
                raise UnlabeledSampleError('Sample %s of %s has no lines' %
                                           (sample.image_id, self.name))


def load_manifest(path):
    """Loads a validated DatasetManifest"""
    return DatasetManifest.load(path)


def load_image(path):
    """Reads an image as an (H, W, 3) float32 RGB array in [0, 1]"""
    image = cv2.imread(path, cv2.IMREAD_COLOR)
    if image is None:
        raise ImageNotFoundError('Could not read image %s' % path)
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB).astype(np.float32) / 255.0


def save_image(path, image):
    """Writes an (H, W, 3) float RGB image in [0, 1] as 8 bit"""
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    cv2.imwrite(path, cv2.cvtColor(pixels, cv2.COLOR_RGB2BGR))


def load_sample(manifest, sample, input_size):
    """The sample's image and lines rescaled to input_size x input_size"""
    image = load_image(manifest.image_path(sample))
    height, width = image.shape[:2]
    lines = sample.lines or []
    if (width, height) != (sample.width, sample.height):
        logger.warning('Image %s is %sx%s, the manifest says %sx%s', sample.image_id,
                       width, height, sample.width, sample.height)
        lines = [seg.scaled(width / float(sample.width), height / float(sample.height))
                 for seg in lines]
    if (width, height) == (input_size, input_size):
        return image, list(lines)
    transform = geometry.crop_resize((0, 0, width, height), (width, height),
                                     (input_size, input_size))
    return geometry.apply_transform(transform, image, lines)


# Splits

def parse_fraction(value):
    """Parses '1/8', 0.125 or Fraction(1, 8) into one of the supported fractions"""
    try:
        fraction = Fraction(value).limit_denominator(64)
    except (TypeError, ValueError, ZeroDivisionError):
        raise InvalidFractionError('%r is not a fraction' % (value,))
    if fraction not in FRACTIONS:
        raise InvalidFractionError('Fraction %s is not one of %s' %
                                   (fraction, ', '.join(str(f) for f in FRACTIONS)))
    return fraction


class SplitSpec(namedtuple('SplitSpec', ['fraction', 'seed', 'labeled_ids', 'unlabeled_ids'])):
    """A labeled/unlabeled partition of a training manifest"""
    __slots__ = ()

    @property
    def filename(self):
        fraction = Fraction(self.fraction)
        return 'split_%s-%s.json' % (fraction.numerator, fraction.denominator)

    def save(self, path):
        with open(path, 'w') as open_file:
            open_file.write(json.dumps(self._asdict(), indent=4, sort_keys=True))

    @classmethod
    def load(cls, path):
        if not os.path.isfile(path):
            raise ManifestNotFoundError('Split file %s does not exist' % path)
        try:
            with open(path, 'r') as open_file:
                loaded = json.load(open_file)
            return cls(str(parse_fraction(loaded['fraction'])), int(loaded['seed']),
                       list(loaded['labeled_ids']), list(loaded['unlabeled_ids']))
        except (ValueError, KeyError, TypeError) as error:
            raise MalformedManifestError('Could not parse split %s: %s' % (path, error))


def make_split(manifest, fraction, seed):
    """
    Deterministically splits a manifest into labeled and unlabeled ids.

    The sorted ids are shuffled with the seed; the first
    round(fraction * N) become the labeled part.
    """
    fraction = parse_fraction(fraction)
    ids = sorted(manifest.ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    n_labeled = int(math.floor(fraction * len(ids) + Fraction(1, 2)))
    labeled = sorted(ids[i] for i in order[:n_labeled])
    unlabeled = sorted(ids[i] for i in order[n_labeled:])
    logger.info('Split %s: %s labeled, %s unlabeled', fraction, len(labeled), len(unlabeled))
    return SplitSpec(str(fraction), int(seed), labeled, unlabeled)


def apply_split(manifest, split):
    """The labeled manifest and the (label-free) unlabeled manifest of a split"""
    labeled = manifest.subset(split.labeled_ids, name='%s-labeled' % manifest.name)
    unlabeled = manifest.subset(split.unlabeled_ids, name='%s-unlabeled' % manifest.name,
                                strip_lines=True)
    return labeled, unlabeled


def carve_validation(manifest, n_val, seed):
    """Splits n_val samples off a manifest as a validation manifest"""
    if not 0 < n_val < len(manifest.samples):
        raise DataError('Cannot carve %s validation samples out of %s' %
                        (n_val, len(manifest.samples)))
    ids = sorted(manifest.ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    val_ids = set(ids[i] for i in order[:n_val])
    train = manifest.subset([i for i in ids if i not in val_ids])
    val = manifest.subset(val_ids, name='%s-val' % manifest.name, role='val')
    return train, val


# Silhouette lines from segmentation masks

def _on_same_border(seg, width, height, tol=0.5):
    for bound, a, b in ((0, seg.x1, seg.x2), (width - 1, seg.x1, seg.x2),
                        (0, seg.y1, seg.y2), (height - 1, seg.y1, seg.y2)):
        if abs(a - bound) <= tol and abs(b - bound) <= tol:
            return True
    return False


def extract_lines_from_mask(mask, epsilon=2.0, min_length=10.0):
    """
    Silhouette lines of the foreground of a binary mask.

    Each boundary contour is simplified to a closed polygon with maximum
    deviation epsilon; polygon edges of at least min_length that do not
    run along the image border become lines.
    """
    binary = (np.asarray(mask) > 0).astype(np.uint8)
    height, width = binary.shape[:2]
    contours = cv2.findContours(binary, cv2.RETR_LIST, cv2.CHAIN_APPROX_NONE)[-2]
    lines = []
    for contour in contours:
        polygon = cv2.approxPolyDP(contour, epsilon, True).reshape(-1, 2)
        if len(polygon) < 2:
            continue
        for start, end in zip(polygon, np.roll(polygon, -1, axis=0)):
            seg = geometry.LineSegment(start[0], start[1], end[0], end[1])
            if seg.length < min_length or _on_same_border(seg, width, height):
                continue
            lines.append(seg)
    return lines


def extract_manifest(mask_dir, epsilon=2.0, min_length=10.0, image_dir=None, name='masks'):
    """A labeled manifest with the silhouette lines of every mask in a folder"""
    if not os.path.isdir(mask_dir):
        raise DataError('Mask folder %s does not exist' % mask_dir)
    filenames = sorted(f for f in os.listdir(mask_dir)
                       if os.path.splitext(f)[1].lower() in IMAGE_EXTENSIONS)
    if not filenames:
        logger.warning('No masks found in %s', mask_dir)
    samples = []
    for filename in filenames:
        mask = cv2.imread(os.path.join(mask_dir, filename), cv2.IMREAD_GRAYSCALE)
        if mask is None:
            raise ImageNotFoundError('Could not read mask %s' % filename)
        height, width = mask.shape
        lines = extract_lines_from_mask(mask, epsilon, min_length)
        image_path = os.path.abspath(os.path.join(image_dir or mask_dir, filename))
        samples.append(Sample(os.path.splitext(filename)[0], image_path, lines, width, height))
        logger.debug('Extracted %s lines from %s', len(lines), filename)
    return DatasetManifest(name, 'train', samples)


# Synthetic line scenes

def _background(size, rng, params):
    coarse = rng.random((max(size // 8, 2), max(size // 8, 2))).astype(np.float32)
    texture = cv2.resize(coarse, (size, size), interpolation=cv2.INTER_LINEAR)
    texture = 0.7 * texture + 0.3 * rng.random((size, size)).astype(np.float32)
    image = 0.1 + 0.45 * texture
    for _ in range(int(rng.integers(0, params.max_blobs + 1))):
        center = (int(rng.integers(0, size)), int(rng.integers(0, size)))
        axes = (int(rng.integers(size // 16 + 1, size // 4 + 2)),
                int(rng.integers(size // 16 + 1, size // 4 + 2)))
        angle = float(rng.uniform(0, 180))
        cv2.ellipse(image, center, axes, angle, 0, 360, float(rng.uniform(0.3, 0.6)), -1)
    return image


def _place_lines(size, rng, params):
    diagonal = math.hypot(size, size)
    target = int(rng.integers(params.min_lines, params.max_lines + 1))
    lines = []
    for _ in range(200 * target):
        if len(lines) == target:
            break
        length = rng.uniform(params.min_length, params.max_length) * diagonal
        angle = rng.uniform(0, math.pi)
        cx, cy = rng.uniform(0, size - 1, size=2)
        dx, dy = math.cos(angle) * length / 2, math.sin(angle) * length / 2
        seg = geometry.LineSegment(cx - dx, cy - dy, cx + dx, cy + dy)
        if min(seg.x1, seg.x2, seg.y1, seg.y2) < 1 or max(seg.x1, seg.x2, seg.y1, seg.y2) > size - 2:
            continue
        if any(math.hypot(cx - o.midpoint[0], cy - o.midpoint[1]) < params.min_separation
               for o in lines):
            continue
        lines.append(seg)
    return lines


def render_synthetic_sample(size, rng, params=SynthParams()):
    """One synthetic (H, W, 3) image with bright line segments and its lines"""
    image = _background(size, rng, params)
    lines = _place_lines(size, rng, params)
    for seg in lines:
        stroke = geometry.rasterize([seg], (size, size), thickness=params.line_width) > 0
        image[stroke] = rng.uniform(0.8, 1.0)
    tint = rng.uniform(0.95, 1.0, size=3).astype(np.float32)
    return np.clip(image[..., None] * tint, 0.0, 1.0).astype(np.float32), lines


def synth_line_dataset(n_samples, image_size, seed, out_dir, params=SynthParams(),
                       name='synth', role='train'):
    """
    Renders n_samples synthetic images into out_dir/images and writes
    out_dir/manifest.json. Deterministic given the seed.
    """
    if n_samples < 1:
        raise DataError('Need at least one sample, got %s' % n_samples)
    image_dir = os.path.join(out_dir, 'images')
    if not os.path.isdir(image_dir):
        os.makedirs(image_dir)
    rng = np.random.default_rng(seed)
    samples = []
    for index in range(n_samples):
        image, lines = render_synthetic_sample(image_size, rng, params)
        image_id = '%s_%05d' % (name, index)
        relative = os.path.join('images', '%s.png' % image_id)
        save_image(os.path.join(out_dir, relative), image)
        samples.append(Sample(image_id, relative, lines, image_size, image_size))
    manifest = DatasetManifest(name, role, samples, os.path.abspath(out_dir))
    manifest.save(os.path.join(out_dir, 'manifest.json'))
    logger.info('Rendered %s synthetic images into %s', n_samples, out_dir)
    return manifest
