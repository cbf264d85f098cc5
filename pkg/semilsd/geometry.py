"""Line segment primitives, the tri-point codec, segment-of-line splitting,
geometric transforms with exact label mapping, and rasterization.

Coordinates are continuous pixel coordinates. Raster and image pixel
(row r, col c) sits at the point (x=c, y=r), which is also the lattice
OpenCV warps sample on.
"""
import math
import logging
from collections import namedtuple

import cv2
import numpy as np

logger = logging.getLogger(__name__)

HFLIP, VFLIP, ROT90, CROP_RESIZE = 'hflip', 'vflip', 'rot90k', 'crop-resize'


class GeometryError(Exception):
    """Superclass for all geometry exceptions."""
    pass
class DegenerateSegmentError(GeometryError):
    """Raised when a segment has zero length or non-finite coordinates"""
    pass
class InvalidTransformError(GeometryError):
    """Raised when a transform cannot be built, e.g. a crop outside the image"""
    pass
class GeometryConfigError(GeometryError):
    """Raised when a geometric parameter is out of range"""
    pass


class LineSegment(namedtuple('LineSegment', ['x1', 'y1', 'x2', 'y2', 'score'])):
    """A line segment between two points, optionally with a confidence score"""
    __slots__ = ()

    def __new__(cls, x1, y1, x2, y2, score=None):
        return super(LineSegment, cls).__new__(
            cls, float(x1), float(y1), float(x2), float(y2),
            None if score is None else float(score))

    @property
    def start(self):
        return (self.x1, self.y1)

    @property
    def end(self):
        return (self.x2, self.y2)

    @property
    def length(self):
        return math.hypot(self.x2 - self.x1, self.y2 - self.y1)

    @property
    def midpoint(self):
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def is_finite(self):
        """True when every coordinate (and the score, if any) is finite"""
        values = [self.x1, self.y1, self.x2, self.y2]
        if self.score is not None:
            values.append(self.score)
        return all(math.isfinite(value) for value in values)

    def swapped(self):
        """The same segment with start and end exchanged"""
        return LineSegment(self.x2, self.y2, self.x1, self.y1, self.score)

    def with_score(self, score):
        return LineSegment(self.x1, self.y1, self.x2, self.y2, score)

    def scaled(self, sx, sy):
        """The segment with x multiplied by sx and y by sy"""
        return LineSegment(self.x1 * sx, self.y1 * sy, self.x2 * sx, self.y2 * sy, self.score)

    def as_list(self):
        return [self.x1, self.y1, self.x2, self.y2]


TriPoint = namedtuple('TriPoint', ['cx', 'cy', 'dxs', 'dys', 'dxe', 'dye'])
SoLChain = namedtuple('SoLChain', ['parent', 'segments', 'intervals'])


def to_tripoint(seg):
    """Codes a segment as its center point and the displacements to both ends"""
    if not seg.is_finite():
        raise DegenerateSegmentError('Segment %s has non-finite coordinates' % (seg,))
    if seg.length <= 0:
        raise DegenerateSegmentError('Segment %s has zero length' % (seg,))
    cx, cy = seg.midpoint
    return TriPoint(cx, cy, seg.x1 - cx, seg.y1 - cy, seg.x2 - cx, seg.y2 - cy)


def from_tripoint(tp, score=None):
    """Rebuilds the segment coded by a tri-point"""
    seg = LineSegment(tp.cx + tp.dxs, tp.cy + tp.dys, tp.cx + tp.dxe, tp.cy + tp.dye, score)
    if seg.length <= 0:
        raise DegenerateSegmentError('Tri-point %s decodes to a zero-length segment' % (tp,))
    return seg


def point_at(seg, t):
    """The point at parameter t along the segment (0 is start, 1 is end)"""
    return (seg.x1 + t * (seg.x2 - seg.x1), seg.y1 + t * (seg.y2 - seg.y1))


def sol_split(seg, sol_length=32.0, overlap_ratio=0.5):
    """Splits a segment into overlapping sub-segments of sol_length"""
    if not 0.0 <= overlap_ratio <= 0.9:
        raise GeometryConfigError('overlap_ratio must be in [0, 0.9], got %s' % overlap_ratio)
    if sol_length <= 0:
        raise GeometryConfigError('sol_length must be positive, got %s' % sol_length)
    length = seg.length
    if length <= 0:
        raise DegenerateSegmentError('Segment %s has zero length' % (seg,))

    if length <= sol_length:
        return SoLChain(seg, [to_tripoint(seg)], [(0.0, 1.0)])

    stride = sol_length * (1.0 - overlap_ratio)
    count = int(math.ceil((length - sol_length) / stride - 1e-9)) + 1
    starts = [i * stride for i in range(count - 1)] + [length - sol_length]

    segments, intervals = [], []
    for start in starts:
        t0, t1 = start / length, (start + sol_length) / length
        if t1 > 1.0:
            t1 = 1.0
        (x1, y1), (x2, y2) = point_at(seg, t0), point_at(seg, t1)
        segments.append(to_tripoint(LineSegment(x1, y1, x2, y2)))
        intervals.append((t0, t1))
    return SoLChain(seg, segments, intervals)


def point_segment_distance(px, py, seg):
    """Euclidean distance from the points (px, py) to the segment, vectorized"""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    vx, vy = seg.x2 - seg.x1, seg.y2 - seg.y1
    norm2 = vx * vx + vy * vy
    if norm2 == 0:
        return np.hypot(px - seg.x1, py - seg.y1)
    t = ((px - seg.x1) * vx + (py - seg.y1) * vy) / norm2
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (seg.x1 + t * vx), py - (seg.y1 + t * vy))


def rasterize(lines, size, thickness=1.0):
    """Binary map of every pixel within thickness/2 of any of the segments"""
    height, width = size
    raster = np.zeros((height, width), dtype=np.uint8)
    radius = thickness / 2.0
    for seg in lines:
        x0 = max(int(math.floor(min(seg.x1, seg.x2) - radius)), 0)
        x1 = min(int(math.ceil(max(seg.x1, seg.x2) + radius)), width - 1)
        y0 = max(int(math.floor(min(seg.y1, seg.y2) - radius)), 0)
        y1 = min(int(math.ceil(max(seg.y1, seg.y2) + radius)), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
        hit = point_segment_distance(xs, ys, seg) <= radius + 1e-9
        raster[y0:y1 + 1, x0:x1 + 1] |= hit.astype(np.uint8)
    return raster


def clip_segment(seg, xmin, ymin, xmax, ymax):
    """Clips a segment to a rectangle (Liang-Barsky). Returns None when outside"""
    dx, dy = seg.x2 - seg.x1, seg.y2 - seg.y1
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, seg.x1 - xmin), (dx, xmax - seg.x1),
                 (-dy, seg.y1 - ymin), (dy, ymax - seg.y1)):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            if r > t1:
                return None
            t0 = max(t0, r)
        else:
            if r < t0:
                return None
            t1 = min(t1, r)
    if t0 == 0.0 and t1 == 1.0:
        return seg
    (x1, y1), (x2, y2) = point_at(seg, t0), point_at(seg, t1)
    return LineSegment(x1, y1, x2, y2, seg.score)


class GeomTransform(namedtuple('GeomTransform', ['kind', 'matrix', 'src_size', 'dst_size'])):
    """
    An affine geometric transform between two image frames.

    matrix is the 2x3 forward map from source to target coordinates,
    src_size and dst_size are (width, height).
    """
    __slots__ = ()

    def map_points(self, points):
        """Maps an (N, 2) array of source points to the target frame"""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        return points @ self.matrix[:, :2].T + self.matrix[:, 2]

    def map_segment(self, seg):
        (x1, y1), (x2, y2) = self.map_points([seg.start, seg.end])
        return LineSegment(x1, y1, x2, y2, seg.score)

    def is_identity(self):
        return (self.src_size == self.dst_size and
                np.array_equal(self.matrix, np.array([[1., 0., 0.], [0., 1., 0.]])))


def _homogeneous(matrix):
    return np.vstack([matrix, [0.0, 0.0, 1.0]])


def identity(width, height):
    return GeomTransform('identity', np.array([[1., 0., 0.], [0., 1., 0.]]),
                         (width, height), (width, height))


def hflip(width, height):
    """Horizontal reflection x' = W - x"""
    return GeomTransform(HFLIP, np.array([[-1., 0., float(width)], [0., 1., 0.]]),
                         (width, height), (width, height))


def vflip(width, height):
    """Vertical reflection y' = H - y"""
    return GeomTransform(VFLIP, np.array([[1., 0., 0.], [0., -1., float(height)]]),
                         (width, height), (width, height))


def rot90(k, width, height):
    """Counter-clockwise rotation by k right angles"""
    k = k % 4
    if k == 0:
        return identity(width, height)
    if k == 1:
        matrix = np.array([[0., 1., 0.], [-1., 0., float(width)]])
        return GeomTransform(ROT90, matrix, (width, height), (height, width))
    if k == 2:
        matrix = np.array([[-1., 0., float(width)], [0., -1., float(height)]])
        return GeomTransform(ROT90, matrix, (width, height), (width, height))
    matrix = np.array([[0., -1., float(height)], [1., 0., 0.]])
    return GeomTransform(ROT90, matrix, (width, height), (height, width))


def crop_resize(window, src_size, dst_size):
    """Crops window = (x0, y0, x1, y1) out of the source and resizes it to dst_size"""
    x0, y0, x1, y1 = [float(v) for v in window]
    width, height = src_size
    if x0 < 0 or y0 < 0 or x1 > width or y1 > height or x1 <= x0 or y1 <= y0:
        raise InvalidTransformError('Crop window %s is outside the %sx%s image' %
                                    (window, width, height))
    sx, sy = dst_size[0] / (x1 - x0), dst_size[1] / (y1 - y0)
    matrix = np.array([[sx, 0., -sx * x0], [0., sy, -sy * y0]])
    return GeomTransform(CROP_RESIZE, matrix, tuple(src_size), tuple(dst_size))


def compose(first, second):
    """The transform applying first, then second"""
    if first.dst_size != second.src_size:
        raise InvalidTransformError('Cannot compose %s onto a %s frame' %
                                    (second.kind, first.dst_size))
    if first.kind == 'identity':
        return second
    if second.kind == 'identity':
        return first
    matrix = (_homogeneous(second.matrix) @ _homogeneous(first.matrix))[:2]
    return GeomTransform('%s+%s' % (first.kind, second.kind), matrix,
                         first.src_size, second.dst_size)


def inverse(transform):
    """The transform mapping the target frame back to the source frame"""
    matrix = np.linalg.inv(_homogeneous(transform.matrix))[:2]
    return GeomTransform('inverse(%s)' % transform.kind, matrix,
                         transform.dst_size, transform.src_size)


def warp_image(transform, image):
    """Resamples an (H, W[, C]) image into the target frame"""
    if transform.is_identity():
        return image.copy()
    return cv2.warpAffine(image, transform.matrix, tuple(int(v) for v in transform.dst_size),
                          flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)


def map_lines(transform, lines, min_length=2.0):
    """
    Maps segments into the target frame.

    Segments are first clipped to the part of the source frame that lands
    inside the target image. Clipped remnants shorter than min_length
    (measured in the target frame) are dropped, as are segments lying
    completely outside.
    """
    corners = inverse(transform).map_points(
        [(0, 0), (transform.dst_size[0], transform.dst_size[1])])
    xmin, ymin = corners.min(axis=0)
    xmax, ymax = corners.max(axis=0)
    mapped = []
    for seg in lines:
        clipped = clip_segment(seg, xmin, ymin, xmax, ymax)
        if clipped is None:
            logger.debug('Dropping segment %s outside the transform window', seg)
            continue
        result = transform.map_segment(clipped)
        if clipped is not seg and result.length < min_length:
            logger.debug('Dropping clipped remnant %s', result)
            continue
        mapped.append(result)
    return mapped


def apply_transform(transform, image, lines, min_length=2.0):
    """Applies a transform to an image and its segments together"""
    new_image = None if image is None else warp_image(transform, image)
    return new_image, map_lines(transform, lines, min_length)
