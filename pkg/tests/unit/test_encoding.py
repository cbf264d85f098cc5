"""Tests for encoding.py"""
import math
import itertools

import numpy as np
import pytest

from semilsd import encoding
from semilsd import geometry
from semilsd.encoding import LAYOUT
from semilsd.geometry import LineSegment


def _separated_lines(rng, count, size=32, min_center_gap=3.0):
    """Random segments inside the map whose centers are at least min_center_gap apart"""
    lines = []
    attempts = 0
    while len(lines) < count and attempts < 2000:
        attempts += 1
        x1, y1, x2, y2 = rng.uniform(1, size - 1, 4)
        seg = LineSegment(x1, y1, x2, y2)
        if seg.length < 3:
            continue
        row, col = encoding.nearest_pixel(seg.midpoint[0], seg.midpoint[1], (size, size))
        if all(math.hypot(row - r, col - c) >= min_center_gap for r, c in
               (encoding.nearest_pixel(l.midpoint[0], l.midpoint[1], (size, size))
                for l in lines)):
            lines.append(seg)
    return lines


def test_layout():
    assert encoding.NUM_CHANNELS == 16
    assert LAYOUT.tp_center == 0
    assert LAYOUT.tp_disp == (1, 2, 3, 4)
    assert encoding.INFERENCE_CHANNELS == 5
    assert sorted(encoding.CLASSIFICATION_CHANNELS + encoding.REGRESSION_CHANNELS) == \
        list(range(16))


def test_encode_empty():
    gt = encoding.encode_ground_truth([], (32, 32))
    assert gt.maps.shape == (16, 32, 32)
    assert not gt.maps.any()
    assert not gt.regression_mask.any()
    assert not gt.sol_regression_mask.any()


def test_encode_single_segment():
    gt = encoding.encode_ground_truth([LineSegment(8, 8, 24, 8)], (32, 32), sol_length=8.0)
    maps = gt.maps
    assert maps[LAYOUT.tp_center, 8, 16] == 1.0
    assert list(maps[list(LAYOUT.tp_disp), 8, 16]) == [-8.0, 0.0, 8.0, 0.0]
    assert maps[LAYOUT.tp_length, 8, 16] == pytest.approx(16.0 / (32 * math.sqrt(2)))
    assert maps[LAYOUT.tp_degree, 8, 16] == 0.0
    assert gt.regression_mask.sum() == 1.0
    # the smoothed neighbourhood stays below the peak
    assert 0 < maps[LAYOUT.tp_center, 8, 15] < 1.0
    assert maps[LAYOUT.seg_junction, 8, 8] == 1.0 and maps[LAYOUT.seg_junction, 8, 24] == 1.0


def test_encode_crossing_segments():
    lines = [LineSegment(4, 4, 28, 28), LineSegment(4, 28, 28, 4)]
    gt = encoding.encode_ground_truth(lines, (32, 32))
    assert gt.maps[LAYOUT.seg_junction].sum() == 4
    assert np.array_equal(gt.maps[LAYOUT.seg_line], geometry.rasterize(lines, (32, 32)))


def test_regression_is_zero_off_mask():
    rng = np.random.default_rng(3)
    gt = encoding.encode_ground_truth(_separated_lines(rng, 10), (32, 32))
    for channel in encoding.TP_REGRESSION:
        assert not gt.maps[channel][gt.regression_mask == 0].any()
    for channel in encoding.SOL_REGRESSION:
        assert not gt.maps[channel][gt.sol_regression_mask == 0].any()
    for channel in encoding.CLASSIFICATION_CHANNELS:
        assert gt.maps[channel].min() >= 0 and gt.maps[channel].max() <= 1


def test_encode_out_of_bounds():
    with pytest.raises(encoding.LineOutOfBoundsError) as error:
        encoding.encode_ground_truth([LineSegment(4, 4, 40, 4)], (32, 32))
    assert '40' in str(error.value)


def test_decode_all_zero_maps():
    assert encoding.decode_lines(np.zeros((16, 32, 32))) == []


def test_decode_tie_keeps_scan_order():
    maps = np.full((16, 32, 32), -20.0)
    maps[list(LAYOUT.tp_disp)] = 0.0
    for row, col in ((20, 5), (4, 10)):
        maps[LAYOUT.tp_center, row, col] = 3.0
        maps[list(LAYOUT.tp_disp), row, col] = [-2.0, 0.0, 2.0, 0.0]
    lines = encoding.decode_lines(maps, topk=1)
    assert len(lines) == 1
    assert lines[0].as_list() == [8.0, 4.0, 12.0, 4.0]


def test_decode_encode_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(200):
        lines = _separated_lines(rng, int(rng.integers(1, 12)))
        decoded = encoding.decode_lines(encoding.ideal_logits(
            encoding.encode_ground_truth(lines, (32, 32))))
        assert len(decoded) == len(lines)
        matches = encoding.match_lines(decoded, lines, max_dist=2.0)
        assert len(matches) == len(lines)
        for i, j in matches:
            assert encoding.line_distance(decoded[i], lines[j]) <= 2.0


def test_decode_properties():
    rng = np.random.default_rng(1)
    maps = rng.normal(size=(16, 32, 32))
    lines = encoding.decode_lines(maps, score_threshold=0.0, topk=7, min_length=0.5)
    assert len(lines) <= 7
    scores = [seg.score for seg in lines]
    assert scores == sorted(scores, reverse=True)
    assert all(seg.length >= 0.5 for seg in lines)


def test_decode_accepts_tensors():
    torch = pytest.importorskip('torch')
    rng = np.random.default_rng(2)
    maps = rng.normal(size=(16, 16, 16))
    from_numpy = encoding.decode_lines(maps, score_threshold=0.3)
    from_tensor = encoding.decode_lines(torch.from_numpy(maps), score_threshold=0.3)
    assert [s.as_list() for s in from_numpy] == [s.as_list() for s in from_tensor]


def test_match_identical_and_disjoint():
    lines = [LineSegment(0, 0, 10, 0), LineSegment(0, 5, 10, 5), LineSegment(3, 3, 3, 20)]
    assert encoding.match_lines(lines, lines) == [(0, 0), (1, 1), (2, 2)]
    far = [LineSegment(seg.x1 + 100, seg.y1, seg.x2 + 100, seg.y2) for seg in lines]
    assert encoding.match_lines(lines, far, max_dist=5.0) == []


def test_match_ignores_endpoint_order():
    a = [LineSegment(0, 0, 10, 10)]
    b = [LineSegment(10, 10, 0, 0)]
    assert encoding.line_distance(a[0], b[0]) == 0.0
    assert encoding.match_lines(a, b) == [(0, 0)]


def test_match_agrees_with_exhaustive_assignment():
    rng = np.random.default_rng(4)
    for _ in range(50):
        gt = _separated_lines(rng, 5, size=64, min_center_gap=12.0)
        if len(gt) < 5:
            continue
        pred = [LineSegment(*(np.array(seg.as_list()) + rng.normal(scale=0.3, size=4)))
                for seg in gt]
        pred[2] = pred[2].swapped()
        order = rng.permutation(5)
        pred = [pred[i] for i in order]
        matches = encoding.match_lines(pred, gt, max_dist=5.0)
        best = min(itertools.permutations(range(5)), key=lambda perm: sum(
            encoding.line_distance(pred[i], gt[perm[i]]) for i in range(5)))
        assert matches == [(i, best[i]) for i in range(5)]
