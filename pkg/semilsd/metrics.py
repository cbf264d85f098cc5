"""Structural average precision and the heatmap F-score"""
import json
import logging
from collections import namedtuple

import numpy as np

from . import geometry

logger = logging.getLogger(__name__)


class MetricError(Exception):
    """Superclass for all metric exceptions."""
    pass
class UnscoredPredictionError(MetricError):
    """Raised when a prediction handed to a ranking metric carries no score"""
    pass


MetricParams = namedtuple('MetricParams', [
    'sap_thresholds', 'eval_size', 'tolerance_px', 'n_thresholds',
    'score_threshold', 'topk', 'min_length'])
MetricParams.__new__.__defaults__ = ((5, 10, 15), 128, 1.5, 33, 0.01, 200, 1.0)


class EvalReport(namedtuple('EvalReport', ['sap', 'f_h', 'pr_points', 'n_pred', 'n_gt',
                                           'n_images'])):
    """Evaluation results of one prediction set"""
    __slots__ = ()

    def to_dict(self):
        return {'sap': dict((str(k), v) for k, v in sorted(self.sap.items())),
                'f_h': self.f_h,
                'pr_points': [list(point) for point in self.pr_points],
                'n_pred': self.n_pred, 'n_gt': self.n_gt, 'n_images': self.n_images}

    def save(self, path):
        with open(path, 'w') as open_file:
            open_file.write(json.dumps(self.to_dict(), indent=4, sort_keys=True))


def _rescale(lines_per_image, sizes, eval_size):
    if sizes is None:
        return [list(lines) for lines in lines_per_image]
    rescaled = []
    for lines, (width, height) in zip(lines_per_image, sizes):
        sx, sy = eval_size / float(width), eval_size / float(height)
        rescaled.append([seg.scaled(sx, sy) for seg in lines])
    return rescaled


def _as_array(lines):
    return np.array([[s.x1, s.y1, s.x2, s.y2] for s in lines], dtype=np.float64).reshape(-1, 4)


def _squared_distances(pred, gt):
    """Sum of squared endpoint distances, minimised over the endpoint orderings"""
    p, g = _as_array(pred)[:, None], _as_array(gt)[None]
    direct = ((p[..., 0] - g[..., 0]) ** 2 + (p[..., 1] - g[..., 1]) ** 2 +
              (p[..., 2] - g[..., 2]) ** 2 + (p[..., 3] - g[..., 3]) ** 2)
    crossed = ((p[..., 0] - g[..., 2]) ** 2 + (p[..., 1] - g[..., 3]) ** 2 +
               (p[..., 2] - g[..., 0]) ** 2 + (p[..., 3] - g[..., 1]) ** 2)
    return np.minimum(direct, crossed)


def _true_positives(pred, gt, k):
    """Per-prediction hit flags; predictions must already be sorted by score"""
    hits = np.zeros(len(pred), dtype=bool)
    if not pred or not gt:
        return hits
    dist = _squared_distances(pred, gt)
    taken = np.zeros(len(gt), dtype=bool)
    for i in range(len(pred)):
        candidates = np.where(taken, np.inf, dist[i])
        choice = int(np.argmin(candidates))
        if candidates[choice] <= k:
            taken[choice] = True
            hits[i] = True
    return hits


def _scored(lines):
    for seg in lines:
        if seg.score is None:
            raise UnscoredPredictionError('Prediction %s has no score' % (seg.as_list(),))
    return sorted(lines, key=lambda seg: -seg.score)


def pr_curve(predictions, ground_truth, k=10, eval_size=128, sizes=None):
    """
    The precision-recall curve behind structural_ap.

    Returns (precision, recall, score) points, one per distinct score, in
    decreasing score order.
    """
    predictions = _rescale(predictions, sizes, eval_size)
    ground_truth = _rescale(ground_truth, sizes, eval_size)
    scores, hits = [], []
    for pred, gt in zip(predictions, ground_truth):
        pred = _scored(pred)
        scores.extend(seg.score for seg in pred)
        hits.extend(_true_positives(pred, gt, k))
    n_gt = sum(len(gt) for gt in ground_truth)
    if not scores:
        return []
    scores, hits = np.asarray(scores), np.asarray(hits)
    order = np.argsort(-scores, kind='stable')
    scores, hits = scores[order], hits[order]
    tp = np.cumsum(hits)
    fp = np.cumsum(~hits)
    # one point at the end of each run of equal scores
    last = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    points = []
    for i in last:
        precision = tp[i] / float(tp[i] + fp[i])
        recall = tp[i] / float(n_gt) if n_gt else 0.0
        points.append((float(precision), float(recall), float(scores[i])))
    return points


def average_precision(points):
    """Area under the precision envelope of a pr_curve"""
    if not points:
        return 0.0
    precision = np.array([p for p, _, _ in points])
    recall = np.array([r for _, r, _ in points])
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(steps * envelope))


def structural_ap(predictions, ground_truth, k=10, eval_size=128, sizes=None):
    """
    Structural average precision sAP^k.

    A prediction hits the nearest still-unmatched ground truth line of its
    image when their squared endpoint distance is at most k, at the
    eval_size scale; images are given per element of the two lists and
    sizes, when given, holds each image's (width, height).
    """
    return average_precision(pr_curve(predictions, ground_truth, k, eval_size, sizes))


def _matched_pixels(pred_map, gt_map, offsets):
    height, width = pred_map.shape
    pred_free = pred_map.astype(bool)
    gt_free = gt_map.astype(bool)
    matched = 0
    for dy, dx in offsets:
        # pred pixel (r, c) pairs with gt pixel (r + dy, c + dx)
        ps = (slice(max(0, -dy), min(height, height - dy)), slice(max(0, -dx), min(width, width - dx)))
        gs = (slice(max(0, dy), min(height, height + dy)), slice(max(0, dx), min(width, width + dx)))
        pairs = pred_free[ps] & gt_free[gs]
        matched += int(pairs.sum())
        pred_free[ps] &= ~pairs
        gt_free[gs] &= ~pairs
    return matched


def _offsets(tolerance):
    radius = int(np.floor(tolerance))
    offsets = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)
               if dy * dy + dx * dx <= tolerance * tolerance + 1e-9]
    return sorted(offsets, key=lambda o: (o[0] ** 2 + o[1] ** 2, o))


def heatmap_f(predictions, ground_truth, eval_size=128, tolerance_px=1.5, n_thresholds=33,
              sizes=None):
    """
    Heatmap F-score F^H: the best pixel F-measure over a sweep of score
    thresholds, with predicted and ground truth pixels matched one to one
    within tolerance_px, nearest offsets first.
    """
    predictions = _rescale(predictions, sizes, eval_size)
    ground_truth = _rescale(ground_truth, sizes, eval_size)
    size = (eval_size, eval_size)
    gt_maps = [geometry.rasterize(gt, size, thickness=1.0) for gt in ground_truth]
    n_gt = sum(int(m.sum()) for m in gt_maps)
    if n_gt == 0:
        return 0.0
    offsets = _offsets(tolerance_px)

    best = 0.0
    for threshold in np.linspace(0.0, 1.0, n_thresholds):
        matched = n_pred = 0
        for pred, gt_map in zip(predictions, gt_maps):
            kept = [seg for seg in pred if seg.score is None or seg.score >= threshold]
            pred_map = geometry.rasterize(kept, size, thickness=1.0)
            n_pred += int(pred_map.sum())
            matched += _matched_pixels(pred_map, gt_map, offsets)
        precision = matched / float(n_pred) if n_pred else 1.0
        recall = matched / float(n_gt)
        if precision + recall > 0:
            best = max(best, 2 * precision * recall / (precision + recall))
    return float(best)


def evaluate_lines(predictions, ground_truth, sizes=None, params=MetricParams()):
    """sAP at every configured threshold, F^H and the sAP^10 curve as an EvalReport"""
    sap = dict((k, structural_ap(predictions, ground_truth, k, params.eval_size, sizes))
               for k in params.sap_thresholds)
    f_h = heatmap_f(predictions, ground_truth, params.eval_size, params.tolerance_px,
                    params.n_thresholds, sizes)
    points = pr_curve(predictions, ground_truth, 10, params.eval_size, sizes)
    report = EvalReport(sap, f_h, points, sum(len(p) for p in predictions),
                        sum(len(g) for g in ground_truth), len(ground_truth))
    logger.info('Evaluated %s images: %s, F^H %.4f', report.n_images,
                ', '.join('sAP%s %.4f' % (k, v) for k, v in sorted(sap.items())), f_h)
    return report
