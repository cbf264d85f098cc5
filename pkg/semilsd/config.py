"""Handles the configuration"""
import os
import copy
import json
import logging
import configparser
from collections import namedtuple

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CONFIG_DIR = 'config'
CONFIG_FILE = 'config/config.json'
LOG_CONFIG_FILE = 'config/logging.ini'
LOG_FILE = './semilsd.log'
EFFECTIVE_CONFIG = 'effective_config.json'
PROFILES = ('desk', 'reference')
CUTMIX_MODES = ('off', 'axis', 'square')


class ConfigError(Exception):
    """Superclass for all config exceptions."""
    pass
class UnknownKeyError(ConfigError):
    """Raised when the config file contains a key that does not exist"""
    pass
class InvalidValueError(ConfigError):
    """Raised when a config value has the wrong type or is out of range"""
    pass
class SchemaVersionError(ConfigError):
    """Raised when the config file was written for another schema version"""
    pass


_DESK = {
    'model': {
        'input_size': 128,
        'widths': [16, 32, 64, 96],
        'decoder_width': 48,
    },
    'train': {
        'seed': 0,
        'lr_supervised': 0.001,
        'lr_semi': 0.0001,
        'weight_decay': 0.0,
        'epochs_supervised': 10,
        'epochs_semi': 5,
        'steps_per_epoch': 25,
        'batch_labeled': 4,
        'batch_unlabeled': 4,
        'tau': 0.7,
        'lambda_unlabeled': 1.0,
        'dual_strong': True,
        'cutmix': 'axis',
        'reuse_labeled': False,
        'augment_labeled': True,
        'single_threaded': True,
        'warm_checkpoint': '',
    },
    'loss': {
        'weights': {'center': 1.0, 'disp': 1.0, 'match': 1.0, 'sol_center': 1.0,
                    'sol_disp': 1.0, 'sol_match': 1.0, 'seg_line': 1.0,
                    'seg_junction': 1.0, 'reg_length': 1.0, 'reg_degree': 1.0},
        'pos_weight_center': 30.0,
        'pos_weight_junction': 30.0,
        'pos_weight_line': 1.0,
        'match_max_dist': 5.0,
        'match_score_threshold': 0.2,
        'match_topk': 200,
        'match_min_length': 1.0,
    },
    'encoding': {
        'sol_length': 32.0,
        'sol_overlap': 0.5,
    },
    'augment': {
        'flip_prob': 0.5,
        'rotate': True,
        'hue_shift': 0.05,
        'saturation_shift': 0.2,
        'value_shift': 0.2,
        'brightness_shift': 0.1,
        'weak_flip_prob': 0.5,
        'crop_scale': [0.8, 1.0],
        'jitter_prob': 0.8,
        'jitter': [0.5, 0.5, 0.5, 0.25],
        'grayscale_prob': 0.2,
        'blur_prob': 0.5,
        'blur_sigma': [0.1, 2.0],
        'cut_range': [0.25, 0.75],
        'min_line_length': 2.0,
    },
    'metrics': {
        'sap_thresholds': [5, 10, 15],
        'eval_size': 128,
        'tolerance_px': 1.5,
        'n_thresholds': 33,
        'score_threshold': 0.01,
        'topk': 200,
        'min_length': 1.0,
    },
    'data': {
        'train_manifest': '',
        'val_manifest': '',
        'test_manifest': '',
        'unlabeled_manifest': '',
        'split': '',
        'n_val': 0,
        'mask_epsilon': 2.0,
        'mask_min_length': 10.0,
    },
    'synth': {
        'min_lines': 2,
        'max_lines': 8,
        'min_length': 0.2,
        'max_length': 0.8,
        'min_separation': 16.0,
        'line_width': 1.5,
        'max_blobs': 3,
    },
}

_REFERENCE_CHANGES = {
    'model': {'input_size': 512, 'widths': [32, 96, 192, 448], 'decoder_width': 128},
    'train': {'epochs_supervised': 300, 'epochs_semi': 100, 'steps_per_epoch': 0,
              'batch_labeled': 8, 'batch_unlabeled': 8, 'single_threaded': False},
    'data': {'n_val': 300},
    'synth': {'min_separation': 64.0, 'line_width': 3.0},
}

SECTIONS = tuple(sorted(_DESK))

ModelConfig = namedtuple('ModelConfig', sorted(_DESK['model']))
TrainConfig = namedtuple('TrainConfig', sorted(_DESK['train']))
LossConfig = namedtuple('LossConfig', sorted(_DESK['loss']))
EncodingConfig = namedtuple('EncodingConfig', sorted(_DESK['encoding']))
AugmentConfig = namedtuple('AugmentConfig', sorted(_DESK['augment']))
MetricConfig = namedtuple('MetricConfig', sorted(_DESK['metrics']))
DataConfig = namedtuple('DataConfig', sorted(_DESK['data']))
SynthConfig = namedtuple('SynthConfig', sorted(_DESK['synth']))
RunConfig = namedtuple('RunConfig', ['schema_version', 'profile'] + list(SECTIONS))

_SECTION_TYPES = {'model': ModelConfig, 'train': TrainConfig, 'loss': LossConfig,
                  'encoding': EncodingConfig, 'augment': AugmentConfig,
                  'metrics': MetricConfig, 'data': DataConfig, 'synth': SynthConfig}


def default_document(profile='desk'):
    """The default config document of a profile as a plain dict"""
    if profile not in PROFILES:
        raise InvalidValueError('Unknown profile %r, choose one of %s' %
                                (profile, ', '.join(PROFILES)))
    document = copy.deepcopy(_DESK)
    if profile == 'reference':
        for section, changes in _REFERENCE_CHANGES.items():
            document[section].update(copy.deepcopy(changes))
    return document


def _check_type(key, value, default):
    """Returns value coerced to the type of default, or raises InvalidValueError"""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidValueError('%s must be true or false, got %r' % (key, value))
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidValueError('%s must be an integer, got %r' % (key, value))
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidValueError('%s must be a number, got %r' % (key, value))
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise InvalidValueError('%s must be a string, got %r' % (key, value))
        return value
    if isinstance(default, list):
        if not isinstance(value, list) or not value:
            raise InvalidValueError('%s must be a non-empty list, got %r' % (key, value))
        return [_check_type('%s[%s]' % (key, i), item, default[0]) for i, item in enumerate(value)]
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise InvalidValueError('%s must be an object, got %r' % (key, value))
        merged = dict(default)
        for name, item in value.items():
            if name not in default:
                raise UnknownKeyError('Unknown config key %s.%s' % (key, name))
            merged[name] = _check_type('%s.%s' % (key, name), item, default[name])
        return merged
    raise InvalidValueError('%s has an unsupported type' % key)


def _merge(document, overrides, origin):
    for section, values in overrides.items():
        if section not in document:
            raise UnknownKeyError('Unknown config section %s in %s' % (section, origin))
        if not isinstance(values, dict):
            raise InvalidValueError('Config section %s in %s must be an object' % (section, origin))
        for key, value in values.items():
            if key not in document[section]:
                raise UnknownKeyError('Unknown config key %s.%s in %s' % (section, key, origin))
            document[section][key] = _check_type('%s.%s' % (section, key), value,
                                                 document[section][key])


def _require(condition, message):
    if not condition:
        raise InvalidValueError(message)


def _validate(document):
    model, train, encoding = document['model'], document['train'], document['encoding']
    augment, metrics = document['augment'], document['metrics']
    _require(model['input_size'] > 0 and model['input_size'] % 4 == 0,
             'model.input_size must be a positive multiple of 4')
    _require(len(model['widths']) == 4 and min(model['widths']) > 0,
             'model.widths must hold four positive widths')
    _require(model['decoder_width'] > 0, 'model.decoder_width must be positive')
    for key in ('lr_supervised', 'lr_semi'):
        _require(train[key] > 0, 'train.%s must be positive' % key)
    for key in ('epochs_supervised', 'epochs_semi', 'steps_per_epoch', 'weight_decay',
                'lambda_unlabeled'):
        _require(train[key] >= 0, 'train.%s must not be negative' % key)
    for key in ('batch_labeled', 'batch_unlabeled'):
        _require(train[key] >= 1, 'train.%s must be at least 1' % key)
    _require(0.0 <= train['tau'] <= 1.5, 'train.tau must be in [0, 1.5]')
    _require(train['cutmix'] in CUTMIX_MODES,
             'train.cutmix must be one of %s' % ', '.join(CUTMIX_MODES))
    _require(encoding['sol_length'] > 0, 'encoding.sol_length must be positive')
    _require(0.0 <= encoding['sol_overlap'] <= 0.9, 'encoding.sol_overlap must be in [0, 0.9]')
    for key in ('flip_prob', 'weak_flip_prob', 'jitter_prob', 'grayscale_prob', 'blur_prob'):
        _require(0.0 <= augment[key] <= 1.0, 'augment.%s must be in [0, 1]' % key)
    for key, size in (('crop_scale', 2), ('jitter', 4), ('blur_sigma', 2), ('cut_range', 2)):
        _require(len(augment[key]) == size, 'augment.%s must hold %s numbers' % (key, size))
    _require(0.0 < augment['crop_scale'][0] <= augment['crop_scale'][1] <= 1.0,
             'augment.crop_scale must be an interval inside (0, 1]')
    _require(0.0 < augment['cut_range'][0] <= augment['cut_range'][1] < 1.0,
             'augment.cut_range must be an interval inside (0, 1)')
    _require(0.0 < augment['blur_sigma'][0] <= augment['blur_sigma'][1],
             'augment.blur_sigma must be a positive interval')
    _require(metrics['eval_size'] > 0, 'metrics.eval_size must be positive')
    _require(metrics['n_thresholds'] >= 2, 'metrics.n_thresholds must be at least 2')
    _require(metrics['tolerance_px'] > 0, 'metrics.tolerance_px must be positive')
    _require(document['data']['n_val'] >= 0, 'data.n_val must not be negative')


def _to_config(document, profile):
    sections = {}
    for section, tp in _SECTION_TYPES.items():
        values = dict((key, tuple(value) if isinstance(value, list) else value)
                      for key, value in document[section].items())
        sections[section] = tp(**values)
    return RunConfig(schema_version=SCHEMA_VERSION, profile=profile, **sections)


def _dotted(overrides):
    nested = {}
    for key, value in (overrides or {}).items():
        section, _, name = key.partition('.')
        if not name:
            raise UnknownKeyError('Override %s must be written as section.key' % key)
        nested.setdefault(section, {})[name] = value
    return nested


def read_configfile(path=None, profile=None, overrides=None):
    """
    Reads a run config and creates a RunConfig.

    Values come from the profile defaults, then the file, then overrides
    (a dict of dotted keys such as {'train.seed': 3}).
    """
    loaded = {}
    if path:
        if not os.path.isfile(path):
            raise ConfigError('Config file %s does not exist' % path)
        try:
            with open(path, 'r') as open_file:
                loaded = json.load(open_file)
        except ValueError as error:
            raise ConfigError('Could not parse %s: %s' % (path, error))
        if not isinstance(loaded, dict):
            raise ConfigError('Config file %s is not a JSON object' % path)
    logger.debug('Reading config %s', path)
    return parse_document(loaded, profile, overrides, path or 'the defaults')


def parse_document(loaded, profile=None, overrides=None, origin='the config document'):
    """Creates a RunConfig from an already parsed config document"""
    loaded = dict(loaded)
    version = loaded.pop('schema_version', SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SchemaVersionError('Config schema version %s is not supported (expected %s)' %
                                 (version, SCHEMA_VERSION))
    file_profile = loaded.pop('profile', 'desk')
    profile = profile or file_profile
    document = default_document(profile)
    _merge(document, loaded, origin)
    _merge(document, _dotted(overrides), 'the command line')
    _validate(document)
    return _to_config(document, profile)


def to_document(configuration):
    """The RunConfig as a plain dict, in the config file layout"""
    document = {'schema_version': configuration.schema_version,
                'profile': configuration.profile}
    for section in SECTIONS:
        values = getattr(configuration, section)._asdict()
        document[section] = dict((key, list(value) if isinstance(value, tuple) else value)
                                 for key, value in values.items())
    return document


def _write_json(path, document):
    with open(path, 'w') as open_file:
        open_file.write(json.dumps(document, indent=4, sort_keys=True))


def create_configfile(path=CONFIG_FILE, profile='desk'):
    """Creates a default configfile"""
    document = default_document(profile)
    document['schema_version'] = SCHEMA_VERSION
    document['profile'] = profile
    _write_json(path, document)


def write_effective_config(configuration, out_dir):
    """Writes the config a run actually used next to its outputs"""
    path = os.path.join(out_dir, EFFECTIVE_CONFIG)
    _write_json(path, to_document(configuration))
    return path


def create_logconfigfile(debug, path=LOG_CONFIG_FILE, logfile=LOG_FILE):
    """
    Creates a default log config file

    Normally we just use the root logger, but if debug is specified,
    we create a separate logger for semilsd at DEBUG,
    and stops it from propagate to the root logger.
    Otherwise it will be flooded with debug logging from other libraries
    """
    config = configparser.ConfigParser(interpolation=None)
    config.add_section('loggers')

    if debug:
        config.set('loggers', 'keys', 'root, semilsd')
    else:
        config.set('loggers', 'keys', 'root')

    config.add_section('handlers')
    config.set('handlers', 'keys', 'fileHandler')
    config.add_section('formatters')
    config.set('formatters', 'keys', 'fileFormatter')
    config.add_section('logger_root')
    config.set('logger_root', 'level', 'INFO')
    config.set('logger_root', 'handlers', 'fileHandler')

    if debug:
        config.add_section('logger_semilsd')
        config.set('logger_semilsd', 'qualname', 'semilsd')
        config.set('logger_semilsd', 'level', 'DEBUG')
        config.set('logger_semilsd', 'handlers', 'fileHandler')
        config.set('logger_semilsd', 'propagate', '0')

    config.add_section('handler_fileHandler')
    config.set('handler_fileHandler', 'class', 'FileHandler')

    if debug:
        config.set('handler_fileHandler', 'level', 'DEBUG')
    else:
        config.set('handler_fileHandler', 'level', 'INFO')
    config.set('handler_fileHandler', 'formatter', 'fileFormatter')
    config.set('handler_fileHandler', 'args', "('%s', 'a')" % logfile)
    config.add_section('formatter_fileFormatter')
    config.set('formatter_fileFormatter', 'format', '%(asctime)s - %(levelname)s - %(message)s')

    with open(path, 'w') as config_file:
        config.write(config_file)
