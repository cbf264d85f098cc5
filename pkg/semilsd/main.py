"""The main program"""
import os
import sys
import errno
import argparse
import logging
import logging.config

import cv2
import numpy as np

from . import config
from . import data
from . import model as model_module
from . import train as training
from . import version

# pylint: disable=W0613

logger = logging.getLogger(__name__)

EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 1, 2, 3
CHECKPOINT_FILE = 'checkpoint.pt'
DETECTIONS_FILE = 'detections.json'


class ArgumentParser(argparse.ArgumentParser):
    """An ArgumentParser that reports usage errors with exit code 1"""
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, '%s: error: %s\n' % (self.prog, message))


def _fraction(value):
    try:
        return data.parse_fraction(value)
    except data.InvalidFractionError as error:
        raise argparse.ArgumentTypeError(str(error))


def _positive_int(value):
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError('%s is not a positive integer' % value)
    return number


def build_parser():
    """The command line parser with all the commands"""
    parser = ArgumentParser(description='Semi-supervised line segment detection')
    parser.add_argument('--log-config', default=None,
                        help="logging config to use. Defaults to %s if it exists"
                        % config.LOG_CONFIG_FILE)
    parser.add_argument('--debug', action='store_true',
                        help="log at DEBUG when no logging config is used")
    subparsers = parser.add_subparsers(help="The operation you want to do:", dest="operation")
    subparsers.required = True

    common = ArgumentParser(add_help=False)
    common.add_argument('--config', default=None,
                        help="run config to use. Defaults to %s if it exists" % config.CONFIG_FILE)
    common.add_argument('--seed', type=int, default=None, help="overrides train.seed")
    common.add_argument('--profile', choices=config.PROFILES, default=None,
                        help="the default values to start from")

    parser_config = subparsers.add_parser(
        "config", help="generate a folder with a default run config and logging config")
    parser_config.add_argument("-debug", help="Create logging config with DEBUG for semilsd",
                               action='store_true')
    parser_config.add_argument('--profile', choices=config.PROFILES, default='desk')
    parser_config.set_defaults(func=new_config)

    parser_synth = subparsers.add_parser(
        "synth", parents=[common], help="render a synthetic line dataset")
    parser_synth.add_argument('-n', type=_positive_int, required=True, help="number of images")
    parser_synth.add_argument('--size', type=_positive_int, default=128, help="image size")
    parser_synth.add_argument('--name', default='synth', help="dataset name and id prefix")
    parser_synth.add_argument('--role', choices=data.ROLES, default='train')
    parser_synth.add_argument('--out', required=True, help="output folder")
    parser_synth.set_defaults(func=synth)

    parser_splits = subparsers.add_parser(
        "make-splits", parents=[common], help="write labeled/unlabeled split files")
    parser_splits.add_argument('manifest', help="the training manifest")
    parser_splits.add_argument('--fractions', type=lambda v: [_fraction(f) for f in v.split(',')],
                               default='1/16,1/8,1/4,1/2',
                               help="comma separated fractions, e.g. 1/16,1/8")
    parser_splits.add_argument('--out', required=True, help="output folder")
    parser_splits.set_defaults(func=make_splits)

    parser_train = subparsers.add_parser(
        "train", parents=[common], help="run the supervised or the semi-supervised stage")
    parser_train.add_argument('--stage', choices=(training.SUPERVISED, training.SEMI),
                              default=training.SUPERVISED)
    parser_train.add_argument('--warm', default=None,
                              help="supervised checkpoint to start the semi stage from")
    parser_train.add_argument('--out', required=True, help="output folder")
    parser_train.set_defaults(func=train)

    parser_eval = subparsers.add_parser(
        "eval", parents=[common], help="evaluate a checkpoint on a labeled manifest")
    parser_eval.add_argument('checkpoint')
    parser_eval.add_argument('manifest')
    parser_eval.add_argument('--out', default='eval_report.json', help="report file")
    parser_eval.set_defaults(func=evaluate)

    parser_detect = subparsers.add_parser(
        "detect", parents=[common], help="detect lines in an image or a folder of images")
    parser_detect.add_argument('checkpoint')
    parser_detect.add_argument('images', help="an image file or a folder of images")
    parser_detect.add_argument('--out', required=True, help="output folder")
    parser_detect.add_argument('--no-overlay', action='store_true',
                               help="do not draw the detections on the images")
    parser_detect.set_defaults(func=detect)

    parser_extract = subparsers.add_parser(
        "extract-lines", parents=[common], help="turn segmentation masks into a line manifest")
    parser_extract.add_argument('mask_dir')
    parser_extract.add_argument('--images', default=None,
                                help="folder with the images belonging to the masks")
    parser_extract.add_argument('--epsilon', type=float, default=None,
                                help="polygon simplification tolerance in pixels")
    parser_extract.add_argument('--min-length', type=float, default=None,
                                help="shortest line to keep in pixels")
    parser_extract.add_argument('--name', default='masks')
    parser_extract.add_argument('--out', required=True, help="manifest file to write")
    parser_extract.set_defaults(func=extract_lines)

    parser_version = subparsers.add_parser("version", help="show the version number and exit")
    parser_version.set_defaults(func=print_version)
    return parser


def _setup_logging(args):
    log_config = args.log_config
    if log_config is None and os.path.isfile(config.LOG_CONFIG_FILE):
        log_config = config.LOG_CONFIG_FILE
    if log_config:
        logging.config.fileConfig(log_config, disable_existing_loggers=False)
    else:
        logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if args.debug else logging.INFO,
                            format='%(asctime)s - %(levelname)s - %(message)s')


def _read_config(args):
    path = args.config
    if path is None and os.path.isfile(config.CONFIG_FILE):
        path = config.CONFIG_FILE
    overrides = {}
    if args.seed is not None:
        overrides['train.seed'] = args.seed
    return config.read_configfile(path, args.profile, overrides)


def _fail(message, code):
    sys.stderr.write(message + '\n')
    sys.exit(code)


def main(argv=None):
    """Parses the parameters and calls the right function"""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.operation not in ('config', 'version') and args.log_config and \
            not os.path.isfile(args.log_config):
        parser.error('Could not find the logging config %s' % args.log_config)
    _setup_logging(args)

    try:
        the_config = _read_config(args) if args.operation not in ('config', 'version') else None
        args.func(args, the_config)
    except (config.ConfigError, training.CheckpointNotFoundError) as error:
        logger.error('%s', error)
        _fail('Configuration error: %s' % error, EXIT_USAGE)
    except data.DataError as error:
        logger.error('%s', error)
        _fail('Data error: %s' % error, EXIT_DATA)
    except Exception: # pylint: disable=W0703
        logger.exception('An exception occured:')
        _fail("An unexpected error occured. Check the log for the details", EXIT_RUNTIME)


def _makedirs(folder):
    try:
        os.makedirs(folder)
    except OSError as error:
        if not (error.errno == errno.EEXIST and os.path.isdir(folder)):
            raise


def new_config(args, configuration):
    """Creates the config folder with a run config and a logging config"""
    _makedirs(config.CONFIG_DIR)
    if not os.path.exists(config.CONFIG_FILE):
        config.create_configfile(config.CONFIG_FILE, args.profile)
    else:
        print("The config file already exists. Not touching it")

    if not os.path.exists(config.LOG_CONFIG_FILE):
        config.create_logconfigfile(args.debug)
    else:
        print("The logging config file already exists. Not touching it")

    print("Done! Adjust the configuration files as needed")


def synth(args, configuration):
    """Renders a synthetic dataset"""
    seed = configuration.train.seed
    manifest = data.synth_line_dataset(args.n, args.size, seed, args.out, configuration.synth,
                                       name=args.name, role=args.role)
    print("Wrote %s images and %s" % (len(manifest.samples),
                                      os.path.join(args.out, 'manifest.json')))


def make_splits(args, configuration):
    """Writes one split file per fraction"""
    manifest = data.load_manifest(args.manifest)
    _makedirs(args.out)
    for fraction in args.fractions:
        split = data.make_split(manifest, fraction, configuration.train.seed)
        split.save(os.path.join(args.out, split.filename))
        print("%s: %s labeled, %s unlabeled" % (split.filename, len(split.labeled_ids),
                                                len(split.unlabeled_ids)))


def _training_data(configuration):
    """The labeled, unlabeled and validation manifests named by the data section"""
    data_cfg = configuration.data
    if not data_cfg.train_manifest:
        raise config.InvalidValueError('data.train_manifest is not set')
    manifest = data.load_manifest(data_cfg.train_manifest)

    val = None
    if data_cfg.val_manifest:
        val = data.load_manifest(data_cfg.val_manifest)
    elif data_cfg.n_val:
        manifest, val = data.carve_validation(manifest, data_cfg.n_val, configuration.train.seed)

    unlabeled = None
    if data_cfg.split:
        split = data.SplitSpec.load(data_cfg.split)
        present = set(manifest.ids)
        labeled_ids = [i for i in split.labeled_ids if i in present]
        unlabeled_ids = [i for i in split.unlabeled_ids if i in present]
        skipped = len(split.labeled_ids) + len(split.unlabeled_ids) - len(labeled_ids) - \
            len(unlabeled_ids)
        if skipped:
            logger.warning('%s ids of split %s are not in the training data', skipped,
                           data_cfg.split)
        labeled, unlabeled = data.apply_split(manifest, split._replace(
            labeled_ids=labeled_ids, unlabeled_ids=unlabeled_ids))
    else:
        labeled = manifest

    if data_cfg.unlabeled_manifest:
        extra = data.load_manifest(data_cfg.unlabeled_manifest)
        samples = [s._replace(image_path=os.path.abspath(extra.image_path(s)), lines=None)
                   for s in extra.samples]
        if unlabeled is not None:
            samples = [s._replace(image_path=os.path.abspath(unlabeled.image_path(s)))
                       for s in unlabeled.samples] + samples
        unlabeled = data.DatasetManifest('unlabeled', 'train', samples)
    return labeled, unlabeled, val


def train(args, configuration):
    """Runs one training stage and writes the checkpoint, log and effective config"""
    _makedirs(args.out)
    config.write_effective_config(configuration, args.out)
    labeled, unlabeled, val = _training_data(configuration)
    if args.stage == training.SUPERVISED:
        model = model_module.build_model(training.model_params(configuration))
        checkpoint = training.train_supervised(model, labeled, val, configuration,
                                               out_dir=args.out)
    else:
        warm = args.warm or configuration.train.warm_checkpoint
        if not warm or not os.path.isfile(warm):
            raise training.MissingWarmCheckpointError(
                'The semi stage needs a supervised checkpoint (--warm or train.warm_checkpoint)')
        checkpoint = training.train_semi(warm, labeled, unlabeled, val, configuration,
                                         out_dir=args.out)
    training.save_checkpoint(checkpoint, os.path.join(args.out, CHECKPOINT_FILE))
    print("Best epoch %s, val sAP10 %s" % (checkpoint.epoch, checkpoint.metrics['val_sap10']))


def _checkpoint_config(args, checkpoint_path, configuration):
    checkpoint = training.load_checkpoint(checkpoint_path)
    model, stored = training.model_from_checkpoint(checkpoint)
    if args.config or os.path.isfile(config.CONFIG_FILE):
        stored = stored._replace(metrics=configuration.metrics)
    return model, stored


def evaluate(args, configuration):
    """Evaluates a checkpoint and writes the EvalReport"""
    model, stored = _checkpoint_config(args, args.checkpoint, configuration)
    manifest = data.load_manifest(args.manifest)
    report = training.evaluate(model, manifest, stored)
    report.save(args.out)
    print(', '.join('sAP%s %.4f' % (k, v) for k, v in sorted(report.sap.items())) +
          ', F^H %.4f' % report.f_h)


def _image_files(path):
    if os.path.isfile(path):
        return [os.path.abspath(path)]
    if not os.path.isdir(path):
        raise data.ImageNotFoundError('%s is neither an image nor a folder' % path)
    return [os.path.abspath(os.path.join(path, f)) for f in sorted(os.listdir(path))
            if os.path.splitext(f)[1].lower() in data.IMAGE_EXTENSIONS]


def draw_overlay(image, lines):
    """The image with the lines drawn on it, as 8 bit BGR"""
    canvas = cv2.cvtColor(np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8),
                          cv2.COLOR_RGB2BGR)
    for seg in lines:
        cv2.line(canvas, (int(round(seg.x1)), int(round(seg.y1))),
                 (int(round(seg.x2)), int(round(seg.y2))), (0, 0, 255), 1, cv2.LINE_AA)
    return canvas


def detect(args, configuration):
    """Detects lines and writes them as a manifest, with overlay images"""
    model, stored = _checkpoint_config(args, args.checkpoint, configuration)
    samples, images = [], []
    for path in _image_files(args.images):
        image = data.load_image(path)
        height, width = image.shape[:2]
        samples.append(data.Sample(os.path.splitext(os.path.basename(path))[0], path, None,
                                   width, height))
        images.append(image)
    manifest = data.DatasetManifest('detections', 'test', samples)
    predictions = training.predict_lines(model, manifest, stored)

    _makedirs(args.out)
    if not args.no_overlay:
        _makedirs(os.path.join(args.out, 'overlays'))
    for sample, image, lines in zip(samples, images, predictions):
        if not lines:
            logger.warning('No lines detected in %s', sample.image_path)
        if not args.no_overlay:
            cv2.imwrite(os.path.join(args.out, 'overlays', '%s.png' % sample.image_id),
                        draw_overlay(image, lines))
    detected = data.DatasetManifest('detections', 'test',
                                    [s._replace(lines=l) for s, l in zip(samples, predictions)])
    detected.save(os.path.join(args.out, DETECTIONS_FILE), with_scores=True)
    print("Detected %s lines in %s images" % (sum(len(l) for l in predictions), len(samples)))


def extract_lines(args, configuration):
    """Extracts silhouette lines from a folder of masks"""
    epsilon = configuration.data.mask_epsilon if args.epsilon is None else args.epsilon
    min_length = configuration.data.mask_min_length if args.min_length is None \
        else args.min_length
    manifest = data.extract_manifest(args.mask_dir, epsilon, min_length, args.images, args.name)
    folder = os.path.dirname(os.path.abspath(args.out))
    _makedirs(folder)
    manifest.save(args.out)
    print("Wrote %s samples with %s lines to %s" % (
        len(manifest.samples), sum(len(s.lines) for s in manifest.samples), args.out))


def print_version(args, configuration):
    """Prints the version number and exits"""
    print(version.__version__)
