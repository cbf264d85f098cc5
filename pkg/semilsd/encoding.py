"""Converts line labels to 16-channel target maps and predictions back to lines"""
import math
import logging
from collections import namedtuple

import numpy as np
from scipy.ndimage import maximum_filter
from scipy.special import expit

from . import geometry

logger = logging.getLogger(__name__)


class EncodingError(Exception):
    """Superclass for all encoding exceptions."""
    pass
class LineOutOfBoundsError(EncodingError):
    """Raised when a line to encode lies outside the map"""
    pass


ChannelLayout = namedtuple('ChannelLayout', [
    'tp_center', 'tp_disp', 'tp_length', 'tp_degree',
    'sol_center', 'sol_disp', 'sol_length', 'sol_degree',
    'seg_line', 'seg_junction'])

# center and displacements come first: the first five layers are all
# inference needs
LAYOUT = ChannelLayout(tp_center=0, tp_disp=(1, 2, 3, 4), tp_length=5, tp_degree=6,
                       sol_center=7, sol_disp=(8, 9, 10, 11), sol_length=12, sol_degree=13,
                       seg_line=14, seg_junction=15)
NUM_CHANNELS = 16
INFERENCE_CHANNELS = 5
CLASSIFICATION_CHANNELS = (LAYOUT.tp_center, LAYOUT.sol_center, LAYOUT.seg_line,
                           LAYOUT.seg_junction)
REGRESSION_CHANNELS = tuple(c for c in range(NUM_CHANNELS) if c not in CLASSIFICATION_CHANNELS)
TP_REGRESSION = LAYOUT.tp_disp + (LAYOUT.tp_length, LAYOUT.tp_degree)
SOL_REGRESSION = LAYOUT.sol_disp + (LAYOUT.sol_length, LAYOUT.sol_degree)

_yy, _xx = np.mgrid[-1:2, -1:2]
CENTER_KERNEL = np.exp(-(_xx ** 2 + _yy ** 2) / 2.0)

GroundTruthMaps = namedtuple('GroundTruthMaps', ['maps', 'regression_mask', 'sol_regression_mask'])


def nearest_pixel(x, y, size):
    """The (row, col) of the lattice pixel closest to (x, y), clamped to the map"""
    height, width = size
    col = min(max(int(math.floor(x + 0.5)), 0), width - 1)
    row = min(max(int(math.floor(y + 0.5)), 0), height - 1)
    return row, col


def _check_bounds(seg, size):
    height, width = size
    tol = 1e-6
    for x, y in (seg.start, seg.end):
        if not (-tol <= x <= width + tol and -tol <= y <= height + tol):
            raise LineOutOfBoundsError('Line %s is outside the %sx%s map' %
                                       (seg.as_list(), width, height))


def _stamp_center(center_map, row, col):
    height, width = center_map.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            r, c = row + dy, col + dx
            if 0 <= r < height and 0 <= c < width:
                center_map[r, c] = max(center_map[r, c], CENTER_KERNEL[dy + 1, dx + 1])


def _encode_tripoint(maps, mask, tp, size, center_ch, disp_ch, length_ch, degree_ch):
    row, col = nearest_pixel(tp.cx, tp.cy, size)
    _stamp_center(maps[center_ch], row, col)
    x1, y1 = tp.cx + tp.dxs, tp.cy + tp.dys
    x2, y2 = tp.cx + tp.dxe, tp.cy + tp.dye
    # displacements are relative to the pixel, so decoding is exact
    for channel, value in zip(disp_ch, (x1 - col, y1 - row, x2 - col, y2 - row)):
        maps[channel, row, col] = value
    height, width = size
    maps[length_ch, row, col] = math.hypot(x2 - x1, y2 - y1) / math.hypot(height, width)
    angle = math.atan2(y2 - y1, x2 - x1) % math.pi
    maps[degree_ch, row, col] = angle / math.pi
    mask[row, col] = 1.0


def encode_ground_truth(lines, out_size, sol_length=8.0, sol_overlap=0.5):
    """
    Encodes lines, given in map coordinates, as a GroundTruthMaps.

    :param lines: LineSegments in output-map coordinates
    :param out_size: (height, width) of the output maps
    :param sol_length: segment-of-line length in map pixels
    :param sol_overlap: overlap ratio between consecutive segments-of-line
    """
    height, width = out_size
    maps = np.zeros((NUM_CHANNELS, height, width), dtype=np.float64)
    mask = np.zeros((height, width), dtype=np.float64)
    sol_mask = np.zeros((height, width), dtype=np.float64)

    for seg in lines:
        _check_bounds(seg, out_size)
        _encode_tripoint(maps, mask, geometry.to_tripoint(seg), out_size, LAYOUT.tp_center,
                         LAYOUT.tp_disp, LAYOUT.tp_length, LAYOUT.tp_degree)
        chain = geometry.sol_split(seg, sol_length, sol_overlap)
        for tp in chain.segments:
            _encode_tripoint(maps, sol_mask, tp, out_size, LAYOUT.sol_center,
                             LAYOUT.sol_disp, LAYOUT.sol_length, LAYOUT.sol_degree)
        for x, y in (seg.start, seg.end):
            row, col = nearest_pixel(x, y, out_size)
            maps[LAYOUT.seg_junction, row, col] = 1.0

    maps[LAYOUT.seg_line] = geometry.rasterize(lines, out_size, thickness=1.0)
    return GroundTruthMaps(maps.astype(np.float32), mask.astype(np.float32),
                           sol_mask.astype(np.float32))


def ideal_logits(gt, saturation=20.0):
    """
    The feature maps a perfect predictor would output for a GroundTruthMaps:
    logits of the classification targets, regression targets as they are.
    """
    maps = gt.maps.astype(np.float64).copy()
    lo, hi = expit(-saturation), expit(saturation)
    for channel in CLASSIFICATION_CHANNELS:
        target = np.clip(maps[channel], lo, hi)
        maps[channel] = np.log(target) - np.log1p(-target)
    return maps


def _to_numpy(maps):
    if hasattr(maps, 'detach'):
        maps = maps.detach().cpu().numpy()
    return np.asarray(maps, dtype=np.float64)


def find_peaks(center_logits, disp, score_threshold, topk, min_length):
    """
    Finds line centers in one center map.

    Returns (rows, cols, scores) of the 3x3 local maxima whose activation
    reaches score_threshold and whose decoded line is at least min_length
    long, best first (ties in row-major order), at most topk of them.
    """
    heat = expit(center_logits)
    local_max = heat == maximum_filter(heat, size=3, mode='constant', cval=-np.inf)
    flat = np.flatnonzero(local_max & (heat >= score_threshold))
    rows, cols = np.unravel_index(flat, heat.shape)
    lengths = np.hypot(disp[2, rows, cols] - disp[0, rows, cols],
                       disp[3, rows, cols] - disp[1, rows, cols])
    keep = lengths >= max(min_length, 1e-12)
    rows, cols = rows[keep], cols[keep]
    scores = heat[rows, cols]
    order = np.argsort(-scores, kind='stable')[:topk]
    return rows[order], cols[order], scores[order]


def decode_lines(maps, score_threshold=0.2, topk=200, min_length=1.0,
                 center_channel=LAYOUT.tp_center, disp_channels=LAYOUT.tp_disp):
    """Decodes (16, H, W) feature maps into scored LineSegments, best first"""
    maps = _to_numpy(maps)
    disp = maps[list(disp_channels)]
    rows, cols, scores = find_peaks(maps[center_channel], disp, score_threshold, topk, min_length)
    lines = []
    for row, col, score in zip(rows, cols, scores):
        dxs, dys, dxe, dye = disp[:, row, col]
        lines.append(geometry.LineSegment(col + dxs, row + dys, col + dxe, row + dye, score))
    return lines


def line_distance(a, b):
    """Sum of endpoint distances, minimised over the two endpoint orderings"""
    direct = math.hypot(a.x1 - b.x1, a.y1 - b.y1) + math.hypot(a.x2 - b.x2, a.y2 - b.y2)
    crossed = math.hypot(a.x1 - b.x2, a.y1 - b.y2) + math.hypot(a.x2 - b.x1, a.y2 - b.y1)
    return min(direct, crossed)


def match_lines(pred, gt, max_dist=5.0):
    """
    One-to-one matching of predicted to ground truth lines.

    Pairs are accepted greedily in increasing order of line_distance;
    pairs further apart than max_dist are never matched. Returns a list of
    (pred_index, gt_index) tuples sorted by pred_index.
    """
    candidates = []
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            dist = line_distance(p, g)
            if dist <= max_dist:
                candidates.append((dist, i, j))
    candidates.sort()
    used_pred, used_gt, matches = set(), set(), []
    for _, i, j in candidates:
        if i in used_pred or j in used_gt:
            continue
        used_pred.add(i)
        used_gt.add(j)
        matches.append((i, j))
    return sorted(matches)
