"""Supervised warm-up, semi-supervised training, evaluation and checkpoints"""
import os
import copy
import json
import math
import logging
from collections import namedtuple

import numpy as np
import torch

from . import augment
from . import config
from . import data
from . import encoding
from . import losses
from . import metrics
from . import model as model_module
from .model import DOWNSAMPLE

logger = logging.getLogger(__name__)

SUPERVISED, SEMI = 'supervised', 'semi'
TRAIN_LOG = 'train_log.jsonl'


class TrainError(Exception):
    """Superclass for all training exceptions."""
    pass
class EmptyDatasetError(TrainError):
    """Raised when a stage has no samples to train on"""
    pass
class CheckpointNotFoundError(TrainError):
    """Raised when a checkpoint file does not exist"""
    pass
class MissingWarmCheckpointError(CheckpointNotFoundError):
    """Raised when the semi-supervised stage has no supervised weights to start from"""
    pass
class IncompatibleCheckpointError(TrainError):
    """Raised when a checkpoint was trained with another model configuration"""
    pass


Checkpoint = namedtuple('Checkpoint', ['state_dict', 'config', 'stage', 'epoch', 'metrics',
                                       'history', 'rng_state'])


def save_checkpoint(checkpoint, path):
    """Writes a checkpoint with torch.save"""
    torch.save(checkpoint._asdict(), path)
    logger.info('Saved %s checkpoint of epoch %s to %s', checkpoint.stage, checkpoint.epoch, path)


def load_checkpoint(path):
    """Loads a checkpoint written by save_checkpoint"""
    if not path or not os.path.isfile(path):
        raise CheckpointNotFoundError('Checkpoint %s does not exist' % path)
    loaded = torch.load(path, map_location='cpu', weights_only=False)
    return Checkpoint(**loaded)


def model_params(configuration):
    return model_module.ModelParams(input_size=configuration.model.input_size,
                                    widths=tuple(configuration.model.widths),
                                    decoder_width=configuration.model.decoder_width,
                                    seed=configuration.train.seed)


def loss_params(configuration):
    """LossParams of a RunConfig; segment-of-line geometry moves to map scale"""
    loss = configuration.loss
    return losses.LossParams(
        weights=dict(loss.weights), pos_weight_center=loss.pos_weight_center,
        pos_weight_junction=loss.pos_weight_junction, pos_weight_line=loss.pos_weight_line,
        match_max_dist=loss.match_max_dist, match_score_threshold=loss.match_score_threshold,
        match_topk=loss.match_topk, match_min_length=loss.match_min_length,
        sol_length=configuration.encoding.sol_length / DOWNSAMPLE,
        sol_overlap=configuration.encoding.sol_overlap)


def model_from_checkpoint(checkpoint):
    """Rebuilds the network stored in a checkpoint"""
    configuration = config.parse_document(checkpoint.config)
    model = model_module.build_model(model_params(configuration))
    model.load_state_dict(checkpoint.state_dict)
    return model, configuration


def set_determinism(single_threaded):
    if single_threaded:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)


class SampleSource(object):
    """Loads the images of a manifest at the network input size, once"""
    def __init__(self, manifest, input_size):
        self.manifest = manifest
        self.input_size = input_size
        self._cache = {}

    def __len__(self):
        return len(self.manifest.samples)

    def get(self, index):
        if index not in self._cache:
            sample = self.manifest.samples[index]
            self._cache[index] = data.load_sample(self.manifest, sample, self.input_size)
        image, lines = self._cache[index]
        return image, list(lines)


def index_batches(size, batch_size, rng):
    """Endless batches of indices, reshuffled at every pass over the data"""
    pending = []
    while True:
        while len(pending) < batch_size:
            pending.extend(int(i) for i in rng.permutation(size))
        batch, pending = pending[:batch_size], pending[batch_size:]
        yield batch


def _to_map_lines(lines):
    scale = 1.0 / DOWNSAMPLE
    return [seg.scaled(scale, scale) for seg in lines if seg.length * scale > 1e-6]


def labeled_batch(source, indices, rng, configuration):
    """Images, encoded targets and map-scale lines of one labeled batch"""
    size = configuration.model.input_size
    out_size = (size // DOWNSAMPLE, size // DOWNSAMPLE)
    images, targets, map_lines = [], [], []
    for index in indices:
        image, lines = source.get(index)
        if configuration.train.augment_labeled:
            image, lines = augment.labeled_augment(image, lines, rng, configuration.augment)
        lines = _to_map_lines(lines)
        images.append(image)
        targets.append(encoding.encode_ground_truth(
            lines, out_size, configuration.encoding.sol_length / DOWNSAMPLE,
            configuration.encoding.sol_overlap))
        map_lines.append(lines)
    return model_module.images_to_tensor(images), losses.stack_ground_truth(targets), map_lines


def unlabeled_batch(source, indices, rng, configuration):
    """The weak and strong views of one unlabeled batch, CutMixed as configured"""
    triples = [augment.make_unlabeled_triple(source.get(index)[0], rng, configuration.augment)
               for index in indices]
    triples, masks = augment.cutmix_axis(triples, rng, configuration.augment,
                                         configuration.train.cutmix, DOWNSAMPLE)
    weak = model_module.images_to_tensor([t.weak for t in triples])
    strong1 = model_module.images_to_tensor([t.strong1 for t in triples])
    strong2 = model_module.images_to_tensor([t.strong2 for t in triples])
    return weak, strong1, strong2, masks


def predict_lines(model, manifest, configuration):
    """Detected lines of every image of a manifest, in original image coordinates"""
    params = configuration.metrics
    size = configuration.model.input_size
    source = SampleSource(manifest, size)
    model.eval()
    predictions = []
    with torch.no_grad():
        for index, sample in enumerate(manifest.samples):
            image, _ = source.get(index)
            maps = model(model_module.images_to_tensor([image]))[0]
            lines = encoding.decode_lines(maps, params.score_threshold, params.topk,
                                          params.min_length)
            sx = DOWNSAMPLE * sample.width / float(size)
            sy = DOWNSAMPLE * sample.height / float(size)
            predictions.append([seg.scaled(sx, sy) for seg in lines])
    return predictions


def score_predictions(predictions, manifest, configuration):
    """EvalReport of predictions against a labeled manifest"""
    manifest.require_labels()
    thresholds = tuple(sorted(set(configuration.metrics.sap_thresholds) | {10}))
    params = configuration.metrics._replace(sap_thresholds=thresholds)
    return metrics.evaluate_lines(predictions, [s.lines for s in manifest.samples],
                                  [(s.width, s.height) for s in manifest.samples], params)


def evaluate(model, manifest, configuration):
    """Decodes every image of a labeled manifest and scores the detections"""
    manifest.require_labels()
    return score_predictions(predict_lines(model, manifest, configuration), manifest,
                             configuration)


class _Meter(object):
    """Running means of named losses"""
    def __init__(self):
        self.sums, self.count = {}, 0

    def update(self, values):
        self.count += 1
        for name, value in values.items():
            self.sums[name] = self.sums.get(name, 0.0) + value

    def means(self):
        return dict((name, total / self.count) for name, total in self.sums.items())


def _breakdown(prefix, breakdown):
    return dict(('%s%s' % (prefix, name), float(value))
                for name, value in breakdown._asdict().items())


def _steps_per_epoch(configuration, n_labeled):
    if configuration.train.steps_per_epoch:
        return configuration.train.steps_per_epoch
    return int(math.ceil(n_labeled / float(configuration.train.batch_labeled)))


def _write_log(out_dir, record):
    if out_dir:
        with open(os.path.join(out_dir, TRAIN_LOG), 'a') as log_file:
            log_file.write(json.dumps(record, sort_keys=True) + '\n')


def _rng_state(rngs):
    return {'numpy': [rng.bit_generator.state for rng in rngs],
            'torch': torch.get_rng_state()}


def _run(stage, model, labeled, unlabeled, val, configuration, callback, out_dir):
    """The training loop shared by both stages"""
    train_cfg = configuration.train
    set_determinism(train_cfg.single_threaded)
    labeled.require_labels()
    if not labeled.samples:
        raise EmptyDatasetError('The labeled manifest %s has no samples' % labeled.name)

    lr = train_cfg.lr_supervised if stage == SUPERVISED else train_cfg.lr_semi
    epochs = train_cfg.epochs_supervised if stage == SUPERVISED else train_cfg.epochs_semi
    optimizer = torch.optim.Adam(model.parameters(), lr=lr, weight_decay=train_cfg.weight_decay)
    params = loss_params(configuration)

    labeled_source = SampleSource(labeled, configuration.model.input_size)
    labeled_rng = np.random.default_rng([train_cfg.seed, 0])
    unlabeled_rng = np.random.default_rng([train_cfg.seed, 1])
    labeled_stream = index_batches(len(labeled_source), train_cfg.batch_labeled, labeled_rng)
    if stage == SEMI:
        unlabeled_source = SampleSource(unlabeled, configuration.model.input_size)
        unlabeled_stream = index_batches(len(unlabeled_source), train_cfg.batch_unlabeled,
                                         unlabeled_rng)
    if val is None:
        logger.warning('No validation data, the last epoch will be kept')

    if out_dir:
        open(os.path.join(out_dir, TRAIN_LOG), 'w').close()
    steps = _steps_per_epoch(configuration, len(labeled_source))
    best, best_score, history, step = None, None, [], 0
    for epoch in range(1, epochs + 1):
        model.train()
        meter = _Meter()
        for _ in range(steps):
            images, targets, map_lines = labeled_batch(labeled_source, next(labeled_stream),
                                                       labeled_rng, configuration)
            breakdown = losses.labeled_loss(model(images), targets, map_lines, params)
            total = breakdown.total
            values = _breakdown('labeled_', breakdown)

            if stage == SEMI:
                consistency = _consistency(model, unlabeled_source, next(unlabeled_stream),
                                           unlabeled_rng, configuration)
                if consistency is not None:
                    total = total + train_cfg.lambda_unlabeled * consistency.total
                    values.update(_breakdown('consistency_', consistency))
                else:
                    values.update({'consistency_total': 0.0, 'consistency_mask_fraction': 0.0})

            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            step += 1
            values['total'] = float(total.detach())
            meter.update(values)
            if callback is not None:
                callback(stage, step, model, values)

        record = {'epoch': epoch, 'stage': stage, 'losses': meter.means(),
                  'val_sap10': None, 'val_fh': None,
                  'mask_fraction': meter.means().get('consistency_mask_fraction')}
        if val is not None:
            report = evaluate(model, val, configuration)
            record['val_sap10'], record['val_fh'] = report.sap[10], report.f_h
        history.append(record)
        _write_log(out_dir, record)
        logger.info('%s epoch %s: loss %.4f, val sAP10 %s, val F^H %s', stage, epoch,
                    record['losses']['total'], record['val_sap10'], record['val_fh'])

        score = record['val_sap10'] if val is not None else epoch
        if best_score is None or score > best_score:
            best_score = score
            best = (epoch, copy.deepcopy(model.state_dict()),
                    {'val_sap10': record['val_sap10'], 'val_fh': record['val_fh']},
                    _rng_state([labeled_rng, unlabeled_rng]))

    if best is None:
        best = (0, copy.deepcopy(model.state_dict()), {'val_sap10': None, 'val_fh': None},
                _rng_state([labeled_rng, unlabeled_rng]))
    epoch, state, scores, rng_state = best
    return Checkpoint(state_dict=state, config=config.to_document(configuration), stage=stage,
                      epoch=epoch, metrics=scores, history=history, rng_state=rng_state)


def _consistency(model, source, indices, rng, configuration):
    """
    The consistency loss of one unlabeled batch, or None when it cannot
    contribute: a zero weight or a confidence gate that is closed everywhere.
    """
    train_cfg = configuration.train
    weak, strong1, strong2, masks = unlabeled_batch(source, indices, rng, configuration)
    if train_cfg.lambda_unlabeled == 0:
        return None
    with torch.no_grad():
        p_w = model(weak)
    # mixed once; the loss takes the mixed maps as its target
    targets = augment.mix_batch(p_w, masks) if masks else p_w
    if not bool(losses.confidence_gate(targets, train_cfg.tau).any()):
        return None
    if train_cfg.dual_strong:
        p_s1, p_s2 = model(torch.cat([strong1, strong2])).chunk(2)
    else:
        p_s1, p_s2 = model(strong1), None
    return losses.consistency_loss(targets, p_s1, p_s2, train_cfg.tau)


def train_supervised(model, labeled, val, configuration, callback=None, out_dir=None):
    """
    Trains on labeled data with the labeled loss.

    Returns the Checkpoint of the epoch with the best validation sAP10.
    """
    logger.info('Supervised training on %s labeled samples', len(labeled.samples))
    return _run(SUPERVISED, model, labeled, None, val, configuration, callback, out_dir)


def train_semi(model, labeled, unlabeled, val, configuration, callback=None, out_dir=None):
    """
    Semi-supervised training: the labeled loss plus the weighted
    consistency loss on unlabeled data.

    model is a network already warmed up by train_supervised, or a
    Checkpoint (or checkpoint path) of such a run.
    """
    if model is None:
        raise MissingWarmCheckpointError('The semi-supervised stage needs supervised weights, '
                                         'run the supervised stage first')
    if isinstance(model, str):
        if not os.path.isfile(model):
            raise MissingWarmCheckpointError('Warm checkpoint %s does not exist' % model)
        model = load_checkpoint(model)
    if isinstance(model, Checkpoint):
        if model.config['model'] != config.to_document(configuration)['model']:
            raise IncompatibleCheckpointError('The warm checkpoint was trained with model '
                                              'settings %s' % model.config['model'])
        model, _ = model_from_checkpoint(model)

    pool = list(unlabeled.samples) if unlabeled is not None else []
    if configuration.train.reuse_labeled:
        pool.extend(sample._replace(lines=None) for sample in labeled.samples)
    if not pool:
        raise EmptyDatasetError('No unlabeled samples, use train_supervised instead')
    pool = _absolute(pool, unlabeled, labeled)
    unlabeled = data.DatasetManifest('unlabeled', 'train', pool)
    logger.info('Semi-supervised training on %s labeled and %s unlabeled samples',
                len(labeled.samples), len(pool))
    return _run(SEMI, model, labeled, unlabeled, val, configuration, callback, out_dir)


def _absolute(samples, *manifests):
    """Samples with image paths resolved against the manifest they came from"""
    owners = {}
    for manifest in manifests:
        if manifest is None:
            continue
        for sample in manifest.samples:
            owners.setdefault(sample.image_id, manifest)
    resolved = []
    for sample in samples:
        owner = owners.get(sample.image_id)
        path = owner.image_path(sample) if owner is not None else sample.image_path
        resolved.append(sample._replace(image_path=os.path.abspath(path)))
    return resolved
