"""Training objectives: the labeled line loss and the unlabeled consistency loss"""
import logging
from collections import namedtuple

import numpy as np
import torch
import torch.nn.functional as F

from . import augment
from . import encoding
from . import geometry
from .encoding import LAYOUT

logger = logging.getLogger(__name__)


class LossError(Exception):
    """Superclass for all loss exceptions."""
    pass
class ShapeMismatchError(LossError):
    """Raised when predictions and targets do not have the same shape"""
    pass


LABELED_PARTS = ('center', 'disp', 'match', 'sol_center', 'sol_disp', 'sol_match',
                 'seg_line', 'seg_junction', 'reg_length', 'reg_degree')

LabeledLossBreakdown = namedtuple('LabeledLossBreakdown', LABELED_PARTS + ('total',))
ConsistencyLossBreakdown = namedtuple('ConsistencyLossBreakdown',
                                      ['classification', 'regression', 'mask_fraction', 'total'])

LossParams = namedtuple('LossParams', [
    'weights', 'pos_weight_center', 'pos_weight_junction', 'pos_weight_line',
    'match_max_dist', 'match_score_threshold', 'match_topk', 'match_min_length',
    'sol_length', 'sol_overlap'])
LossParams.__new__.__defaults__ = (None, 30.0, 30.0, 1.0, 5.0, 0.2, 200, 1.0, 8.0, 0.5)


def _check_shapes(pred, target):
    if tuple(pred.shape) != tuple(target.shape):
        raise ShapeMismatchError('Prediction shape %s does not match target shape %s' %
                                 (tuple(pred.shape), tuple(target.shape)))


def _like(value, reference):
    if torch.is_tensor(value):
        return value.to(dtype=reference.dtype, device=reference.device)
    return torch.as_tensor(np.asarray(value), dtype=reference.dtype, device=reference.device)


def wbce(pred, target, positive_weight=1.0):
    """
    Weighted binary cross-entropy on pre-activation maps, averaged over pixels.

    Pixels with a positive target are weighted by positive_weight. The
    target's own entropy is subtracted, so predicting a soft target exactly
    costs nothing; for hard targets this is plain weighted BCE.
    """
    target = _like(target, pred)
    _check_shapes(pred, target)
    bce = F.binary_cross_entropy_with_logits(pred, target, reduction='none')
    entropy = -(torch.special.xlogy(target, target) + torch.special.xlogy(1 - target, 1 - target))
    weight = torch.where(target > 0, torch.full_like(target, positive_weight),
                         torch.ones_like(target))
    return (weight * (bce - entropy).clamp_min(0)).mean()


def masked_l1(pred, target, mask):
    """Mean absolute error over the mask-positive pixels, 0 for an empty mask"""
    target = _like(target, pred)
    _check_shapes(pred, target)
    mask = _like(mask, pred).expand_as(pred)
    count = mask.sum()
    if count == 0:
        return (pred * 0).sum()
    return ((pred - target).abs() * mask).sum() / count


def _as_batch(maps):
    return maps.unsqueeze(0) if maps.dim() == 3 else maps


def _as_batched_lines(gt_lines, batch_size):
    if batch_size == 1 and (not gt_lines or isinstance(gt_lines[0], geometry.LineSegment)):
        return [list(gt_lines)]
    return [list(lines) for lines in gt_lines]


def matching_loss(pred_maps, gt_lines, params=LossParams(),
                  center_channel=LAYOUT.tp_center, disp_channels=LAYOUT.tp_disp):
    """
    Endpoint and center L1 over the predicted lines matched to ground truth.

    Peak locations are found on detached maps and treated as constants;
    gradients flow through the displacements read at those peaks.
    """
    pred_maps = _as_batch(pred_maps)
    batches = _as_batched_lines(gt_lines, pred_maps.shape[0])
    detached = pred_maps.detach().cpu().numpy().astype(np.float64)
    terms = []
    for b, gt in enumerate(batches):
        if not gt:
            continue
        disp_np = detached[b, list(disp_channels)]
        rows, cols, _ = encoding.find_peaks(detached[b, center_channel], disp_np,
                                            params.match_score_threshold, params.match_topk,
                                            params.match_min_length)
        pred = [geometry.LineSegment(c + disp_np[0, r, c], r + disp_np[1, r, c],
                                     c + disp_np[2, r, c], r + disp_np[3, r, c])
                for r, c in zip(rows, cols)]
        for i, j in encoding.match_lines(pred, gt, params.match_max_dist):
            row, col, target = int(rows[i]), int(cols[i]), gt[j]
            disp = pred_maps[b, list(disp_channels), row, col]
            start = torch.stack([col + disp[0], row + disp[1]])
            end = torch.stack([col + disp[2], row + disp[3]])
            direct = (abs(pred[i].x1 - target.x1) + abs(pred[i].y1 - target.y1) +
                      abs(pred[i].x2 - target.x2) + abs(pred[i].y2 - target.y2))
            crossed = (abs(pred[i].x1 - target.x2) + abs(pred[i].y1 - target.y2) +
                       abs(pred[i].x2 - target.x1) + abs(pred[i].y2 - target.y1))
            if crossed < direct:
                target = target.swapped()
            endpoints = ((start - _like(target.start, start)).abs().sum() +
                         (end - _like(target.end, end)).abs().sum())
            mx, my = target.midpoint
            center = abs(col - mx) + abs(row - my)
            terms.append(endpoints + center)
    if not terms:
        return (pred_maps * 0).sum()
    return torch.stack(terms).sum() / len(terms)


def stack_ground_truth(targets):
    """Stacks a list of GroundTruthMaps into one batched GroundTruthMaps"""
    return encoding.GroundTruthMaps(np.stack([t.maps for t in targets]),
                                    np.stack([t.regression_mask for t in targets]),
                                    np.stack([t.sol_regression_mask for t in targets]))


def _sol_lines(lines, params):
    sol = []
    for seg in lines:
        chain = geometry.sol_split(seg, params.sol_length, params.sol_overlap)
        sol.extend(geometry.from_tripoint(tp) for tp in chain.segments)
    return sol


def labeled_loss(pred, gt, gt_lines, params=LossParams()):
    """
    The full labeled loss: TP, SoL and geometric terms.

    :param pred: (B, 16, H, W) or (16, H, W) pre-activation feature maps
    :param gt: GroundTruthMaps, batched like pred
    :param gt_lines: ground truth lines in map coordinates, one list per image
    :returns: LabeledLossBreakdown of scalar tensors
    """
    pred = _as_batch(pred)
    maps = _as_batch(_like(gt.maps, pred))
    _check_shapes(pred, maps)
    mask = _like(gt.regression_mask, pred).reshape(pred.shape[0], 1, *pred.shape[2:])
    sol_mask = _like(gt.sol_regression_mask, pred).reshape(pred.shape[0], 1, *pred.shape[2:])
    weights = dict.fromkeys(LABELED_PARTS, 1.0)
    weights.update(params.weights or {})
    batches = _as_batched_lines(gt_lines, pred.shape[0])

    def channels(idx):
        return list(idx) if isinstance(idx, tuple) else [idx]

    def l1(channel, channel_mask):
        idx = channels(channel)
        return masked_l1(pred[:, idx], maps[:, idx], channel_mask)

    zero = (pred * 0).sum()
    parts = {
        'center': wbce(pred[:, LAYOUT.tp_center], maps[:, LAYOUT.tp_center],
                       params.pos_weight_center),
        'disp': l1(LAYOUT.tp_disp, mask),
        'sol_center': wbce(pred[:, LAYOUT.sol_center], maps[:, LAYOUT.sol_center],
                           params.pos_weight_center),
        'sol_disp': l1(LAYOUT.sol_disp, sol_mask),
        'seg_line': wbce(pred[:, LAYOUT.seg_line], maps[:, LAYOUT.seg_line],
                         params.pos_weight_line),
        'seg_junction': wbce(pred[:, LAYOUT.seg_junction], maps[:, LAYOUT.seg_junction],
                             params.pos_weight_junction),
        'reg_length': l1(LAYOUT.tp_length, mask) + l1(LAYOUT.sol_length, sol_mask),
        'reg_degree': l1(LAYOUT.tp_degree, mask) + l1(LAYOUT.sol_degree, sol_mask),
    }
    parts['match'] = (matching_loss(pred, batches, params) if weights['match'] else zero)
    parts['sol_match'] = (matching_loss(pred, [_sol_lines(lines, params) for lines in batches],
                                        params, LAYOUT.sol_center, LAYOUT.sol_disp)
                          if weights['sol_match'] else zero)
    total = sum(weights[name] * parts[name] for name in LABELED_PARTS)
    return LabeledLossBreakdown(total=total, **parts)


def confidence_gate(weak, tau):
    """Positions where the weak view's center activation reaches tau"""
    return torch.sigmoid(_as_batch(weak)[:, LAYOUT.tp_center]) >= tau


def consistency_loss(p_w, p_s1, p_s2, tau, mix_masks=None):
    """
    Confidence-gated consistency between the weak view and the strong views.

    The weak maps are a fixed target. The gate comes from the weak center
    channel; classification channels take BCE against hard pseudo-labels,
    regression channels L1 against the weak values. Gated terms are summed
    and divided by the number of positions, and summed over the strong
    views. Pass p_s2=None for a single strong view.
    """
    p_w = _as_batch(p_w.detach())
    views = [_as_batch(view) for view in (p_s1, p_s2) if view is not None]
    for view in views:
        _check_shapes(view, p_w)
    if mix_masks:
        p_w = augment.mix_batch(p_w, mix_masks)

    gate = confidence_gate(p_w, tau).unsqueeze(1).to(p_w.dtype)
    positions = gate.numel()
    mask_fraction = float(gate.sum().item()) / positions
    if mask_fraction == 0:
        zero = sum((view * 0).sum() for view in views)
        return ConsistencyLossBreakdown(zero, zero, 0.0, zero)

    cls = list(encoding.CLASSIFICATION_CHANNELS)
    reg = list(encoding.REGRESSION_CHANNELS)
    pseudo = (torch.sigmoid(p_w[:, cls]) >= 0.5).to(p_w.dtype)
    classification = regression = 0
    for view in views:
        bce = F.binary_cross_entropy_with_logits(view[:, cls], pseudo, reduction='none')
        classification = classification + (bce * gate).sum() / (positions * len(cls))
        l1 = (view[:, reg] - p_w[:, reg]).abs()
        regression = regression + (l1 * gate).sum() / (positions * len(reg))
    return ConsistencyLossBreakdown(classification, regression, mask_fraction,
                                    classification + regression)
