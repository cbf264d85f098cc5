"""The line detector network: RGB image in, 16 feature maps at 1/4 scale out"""
import math
import logging
from collections import namedtuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import encoding

logger = logging.getLogger(__name__)

DOWNSAMPLE = 4
CENTER_PRIOR = 0.1


class ModelError(Exception):
    """Superclass for all model exceptions."""
    pass
class ModelConfigError(ModelError):
    """Raised when the model configuration cannot be built"""
    pass


ModelParams = namedtuple('ModelParams', ['input_size', 'widths', 'decoder_width', 'seed'])
ModelParams.__new__.__defaults__ = (128, (16, 32, 64, 96), 48, 0)


def _conv_bn(in_channels, out_channels, kernel_size=1, stride=1, groups=1):
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels, kernel_size, stride=stride,
                  padding=kernel_size // 2, groups=groups, bias=False),
        nn.BatchNorm2d(out_channels),
        nn.ReLU(inplace=True))


class SeparableBlock(nn.Module):
    """Depthwise 3x3 followed by a pointwise 1x1, residual when shapes allow"""
    def __init__(self, in_channels, out_channels, stride=1):
        super(SeparableBlock, self).__init__()
        self.depthwise = _conv_bn(in_channels, in_channels, 3, stride, groups=in_channels)
        self.pointwise = _conv_bn(in_channels, out_channels)
        self.residual = stride == 1 and in_channels == out_channels

    def forward(self, x):
        out = self.pointwise(self.depthwise(x))
        return out + x if self.residual else out


class FuseBlock(nn.Module):
    """Upsamples coarse features to the skip features' size and merges them"""
    def __init__(self, coarse_channels, skip_channels, out_channels):
        super(FuseBlock, self).__init__()
        self.merge = SeparableBlock(coarse_channels + skip_channels, out_channels)
        self.refine = SeparableBlock(out_channels, out_channels)

    def forward(self, coarse, skip):
        coarse = F.interpolate(coarse, size=skip.shape[-2:], mode='bilinear', align_corners=False)
        return self.refine(self.merge(torch.cat([coarse, skip], dim=1)))


class LineDetector(nn.Module):
    """
    Small encoder-decoder. The encoder halves the resolution four times,
    the decoder fuses back up to 1/4 of the input, where a 1x1 head emits
    the 16 line maps: logits for the classification channels, raw values
    for the regression channels.
    """
    def __init__(self, widths=(16, 32, 64, 96), decoder_width=48):
        super(LineDetector, self).__init__()
        w0, w1, w2, w3 = widths
        self.stem = _conv_bn(3, w0, 3, stride=2)
        self.stage1 = nn.Sequential(SeparableBlock(w0, w1, 2), SeparableBlock(w1, w1))
        self.stage2 = nn.Sequential(SeparableBlock(w1, w2, 2), SeparableBlock(w2, w2))
        self.stage3 = nn.Sequential(SeparableBlock(w2, w3, 2), SeparableBlock(w3, w3))
        self.fuse2 = FuseBlock(w3, w2, decoder_width)
        self.fuse1 = FuseBlock(decoder_width, w1, decoder_width)
        self.head = nn.Sequential(
            SeparableBlock(decoder_width, decoder_width),
            nn.Conv2d(decoder_width, encoding.NUM_CHANNELS, 1))
        self._init_head()

    def _init_head(self):
        final = self.head[-1]
        nn.init.normal_(final.weight, std=0.01)
        nn.init.zeros_(final.bias)
        prior = -math.log((1 - CENTER_PRIOR) / CENTER_PRIOR)
        with torch.no_grad():
            for channel in encoding.CLASSIFICATION_CHANNELS:
                final.bias[channel] = prior

    def forward(self, x):
        x = (x - 0.5) / 0.25
        s1 = self.stage1(self.stem(x))
        s2 = self.stage2(s1)
        s3 = self.stage3(s2)
        return self.head(self.fuse1(self.fuse2(s3, s2), s1))


def count_params(model):
    return sum(p.numel() for p in model.parameters())


def build_model(params=ModelParams()):
    """Builds a LineDetector, initialised deterministically from params.seed"""
    if params.input_size <= 0 or params.input_size % DOWNSAMPLE:
        raise ModelConfigError('Input size %s is not a positive multiple of %s' %
                               (params.input_size, DOWNSAMPLE))
    if len(params.widths) != 4 or min(params.widths) <= 0 or params.decoder_width <= 0:
        raise ModelConfigError('Need four positive stage widths and a positive decoder width')
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(params.seed)
        model = LineDetector(tuple(params.widths), params.decoder_width)
    logger.info('Built a line detector with %s parameters', count_params(model))
    return model


def images_to_tensor(images):
    """Stacks (H, W, 3) float images into a (B, 3, H, W) tensor"""
    return torch.stack([torch.from_numpy(image.transpose(2, 0, 1).copy()) for image in images])
