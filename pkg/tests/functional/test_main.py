"""Functional tests for main.py"""
import os
import json
import shutil
import filecmp
import tempfile
import subprocess

import cv2
import numpy as np
import pytest

from semilsd import version
from miscellaneous import desk_experiment

ORG_CWD = os.getcwd()

TINY = {'model': {'input_size': 32, 'widths': [8, 8, 8, 8], 'decoder_width': 8},
        'train': {'epochs_supervised': 1, 'epochs_semi': 1, 'steps_per_epoch': 2,
                  'batch_labeled': 2, 'batch_unlabeled': 2},
        'data': {'train_manifest': 'train/manifest.json', 'split': 'splits/split_1-2.json'}}

def setup_module(module):
    temp_dir = tempfile.mkdtemp()
    os.chdir(temp_dir)

def teardown_module(module):
    if '/tmp/' in os.getcwd():
        shutil.rmtree(os.getcwd())
    os.chdir(ORG_CWD)

def _run(*args):
    cmd = subprocess.Popen(['semilsd'] + list(args), stdout=subprocess.PIPE,
                           stderr=subprocess.PIPE, universal_newlines=True)
    out, err = cmd.communicate()
    return cmd.returncode, out, err

def test_version():
    """The 'semilsd version' command should output the version number (plus newline)"""
    output = subprocess.check_output(['semilsd', 'version'],
                                     universal_newlines=True).split('\n')[0]
    assert output == version.__version__

def test_no_command():
    """Calling the cli without a command is a usage error"""
    assert _run()[0] == 1

def test_config():
    """The config command should create the config folder and leave existing files alone"""
    code, out, _ = _run('config')
    assert code == 0
    for fil in ["config/config.json", "config/logging.ini"]:
        assert os.path.isfile(fil)
    with open('config/config.json') as open_file:
        assert json.load(open_file)['profile'] == 'desk'
    code, out, _ = _run('config')
    assert code == 0
    assert 'already exists. Not touching it' in out

def test_synth():
    """synth renders images and a manifest, deterministically"""
    assert _run('synth', '-n', '12', '--size', '64', '--out', 'train')[0] == 0
    assert _run('synth', '-n', '12', '--size', '64', '--out', 'train_again')[0] == 0
    assert _run('synth', '-n', '4', '--size', '64', '--name', 'test', '--role', 'test',
                '--seed', '1', '--out', 'test')[0] == 0
    with open('train/manifest.json') as open_file:
        manifest = json.load(open_file)
    assert len(manifest['samples']) == 12
    assert filecmp.cmp('train/manifest.json', 'train_again/manifest.json', shallow=False)
    for sample in manifest['samples']:
        assert filecmp.cmp(os.path.join('train', sample['image_path']),
                           os.path.join('train_again', sample['image_path']), shallow=False)

def test_synth_needs_images():
    assert _run('synth', '-n', '0', '--out', 'empty')[0] == 1

def test_make_splits():
    """One split file per fraction, identical when run again"""
    code, out, _ = _run('make-splits', 'train/manifest.json', '--fractions', '1/4,1/2',
                        '--out', 'splits')
    assert code == 0
    assert sorted(os.listdir('splits')) == ['split_1-2.json', 'split_1-4.json']
    with open('splits/split_1-4.json') as open_file:
        split = json.load(open_file)
    assert len(split['labeled_ids']) == 3
    assert len(split['unlabeled_ids']) == 9
    _run('make-splits', 'train/manifest.json', '--fractions', '1/4,1/2', '--out', 'splits_again')
    for name in os.listdir('splits'):
        assert filecmp.cmp(os.path.join('splits', name), os.path.join('splits_again', name),
                           shallow=False)

def test_make_splits_bad_fraction():
    assert _run('make-splits', 'train/manifest.json', '--fractions', '1/3', '--out', 'bad')[0] == 1

def test_missing_manifest():
    """A missing manifest is a data error"""
    code, _, err = _run('make-splits', 'not_there.json', '--out', 'bad')
    assert code == 2
    assert 'not_there.json' in err

def test_bad_config():
    with open('broken.json', 'w') as open_file:
        open_file.write(json.dumps({'train': {'tau': 2.0}}))
    assert _run('train', '--config', 'broken.json', '--out', 'bad')[0] == 1

def test_train_eval_detect():
    """Both stages, evaluation and detection on a tiny network"""
    with open('tiny.json', 'w') as open_file:
        open_file.write(json.dumps(TINY))

    assert _run('train', '--config', 'tiny.json', '--out', 'supervised')[0] == 0
    for fil in ['checkpoint.pt', 'train_log.jsonl', 'effective_config.json']:
        assert os.path.isfile(os.path.join('supervised', fil))
    with open('supervised/train_log.jsonl') as open_file:
        records = [json.loads(line) for line in open_file]
    assert len(records) == 1
    assert records[0]['stage'] == 'supervised'
    with open('supervised/effective_config.json') as open_file:
        assert json.load(open_file)['model']['input_size'] == 32

    code, _, _ = _run('train', '--config', 'tiny.json', '--stage', 'semi',
                      '--warm', 'supervised/checkpoint.pt', '--out', 'semi')
    assert code == 0
    with open('semi/train_log.jsonl') as open_file:
        record = json.loads(open_file.readline())
    assert record['stage'] == 'semi'
    assert 0.0 <= record['mask_fraction'] <= 1.0

    code, out, _ = _run('eval', 'semi/checkpoint.pt', 'test/manifest.json', '--out', 'report.json')
    assert code == 0
    assert 'sAP10' in out
    with open('report.json') as open_file:
        report = json.load(open_file)
    assert sorted(report['sap']) == ['10', '15', '5']
    assert report['n_images'] == 4
    assert 0.0 <= report['f_h'] <= 1.0

    code, _, _ = _run('detect', 'semi/checkpoint.pt', 'test/images', '--out', 'detections')
    assert code == 0
    with open('detections/detections.json') as open_file:
        detections = json.load(open_file)
    assert len(detections['samples']) == 4
    for sample in detections['samples']:
        assert len(sample.get('scores', [])) == len(sample['lines'])
        assert all(0.0 <= score <= 1.0 for score in sample.get('scores', []))
    assert len(os.listdir('detections/overlays')) == 4
    for sample in detections['samples']:
        overlay = cv2.imread(os.path.join('detections', 'overlays', '%s.png' % sample['image_id']))
        assert overlay.shape == (64, 64, 3)

    # an image without detections is not an error
    with open('strict.json', 'w') as open_file:
        open_file.write(json.dumps({'metrics': {'score_threshold': 0.999}}))
    os.makedirs('blank')
    cv2.imwrite('blank/blank.png', np.zeros((64, 64, 3), dtype=np.uint8))
    code, _, _ = _run('detect', 'semi/checkpoint.pt', 'blank/blank.png', '--out', 'blank_out',
                      '--config', 'strict.json', '--no-overlay')
    assert code == 0
    with open('blank_out/detections.json') as open_file:
        assert json.load(open_file)['samples'][0]['lines'] == []
    assert not os.path.isdir('blank_out/overlays')

def test_semi_without_warm_checkpoint():
    code, _, err = _run('train', '--config', 'tiny.json', '--stage', 'semi', '--out', 'cold')
    assert code == 1
    assert 'supervised checkpoint' in err

def test_eval_missing_checkpoint():
    assert _run('eval', 'nothing.pt', 'test/manifest.json')[0] == 1

def test_extract_lines():
    """A filled rectangle mask becomes four lines"""
    os.makedirs('masks')
    mask = np.zeros((64, 64), dtype=np.uint8)
    cv2.rectangle(mask, (10, 12), (50, 40), 255, -1)
    cv2.imwrite('masks/box.png', mask)
    code, _, _ = _run('extract-lines', 'masks', '--out', 'extracted/manifest.json')
    assert code == 0
    with open('extracted/manifest.json') as open_file:
        manifest = json.load(open_file)
    assert len(manifest['samples']) == 1
    assert manifest['samples'][0]['image_id'] == 'box'
    assert len(manifest['samples'][0]['lines']) == 4
    assert 'scores' not in manifest['samples'][0]

def _same_files(folder_a, folder_b, names):
    return all(filecmp.cmp(os.path.join(folder_a, name), os.path.join(folder_b, name),
                           shallow=False) for name in names)

def test_reruns_are_identical():
    """Every command writes the same bytes when run twice with the same inputs"""
    two_epochs = json.loads(json.dumps(TINY))
    two_epochs['train'].update({'epochs_supervised': 2, 'epochs_semi': 2})
    with open('tiny2.json', 'w') as open_file:
        open_file.write(json.dumps(two_epochs))
    outputs = ['checkpoint.pt', 'train_log.jsonl', 'effective_config.json']

    for run in ('rerun_a', 'rerun_b'):
        assert _run('train', '--config', 'tiny2.json', '--out', run + '/supervised')[0] == 0
        assert _run('train', '--config', 'tiny2.json', '--stage', 'semi',
                    '--warm', run + '/supervised/checkpoint.pt', '--out', run + '/semi')[0] == 0
    with open('rerun_a/supervised/train_log.jsonl') as open_file:
        assert len(open_file.readlines()) == 2
    assert _same_files('rerun_a/supervised', 'rerun_b/supervised', outputs)
    assert _same_files('rerun_a/semi', 'rerun_b/semi', outputs)

    for run in ('rerun_a', 'rerun_b'):
        assert _run('eval', 'rerun_a/semi/checkpoint.pt', 'test/manifest.json',
                    '--out', run + '/report.json')[0] == 0
        assert _run('detect', 'rerun_a/semi/checkpoint.pt', 'test/images',
                    '--out', run + '/detections')[0] == 0
        assert _run('extract-lines', 'masks', '--out', run + '/extracted.json')[0] == 0
    assert _same_files('rerun_a', 'rerun_b', ['report.json', 'extracted.json',
                                              'detections/detections.json'])
    overlays = sorted(os.listdir('rerun_a/detections/overlays'))
    assert overlays == sorted(os.listdir('rerun_b/detections/overlays'))
    assert _same_files('rerun_a/detections/overlays', 'rerun_b/detections/overlays', overlays)

def test_desk_experiment(opt_run_slow, opt_desk_seeds):
    """Consistency training beats the supervised baseline on synthetic lines"""
    if not opt_run_slow:
        pytest.skip('needs --run-slow')
    results = desk_experiment.run_experiment(os.path.abspath('desk'), seeds=opt_desk_seeds)
    assert results['gain'] > 0
    assert results['mean_semi'] >= results['mean_supervised']

def test_extract_lines_empty_folder():
    os.makedirs('no_masks')
    code, _, _ = _run('extract-lines', 'no_masks', '--out', 'no_masks.json')
    assert code == 0
    with open('no_masks.json') as open_file:
        assert json.load(open_file)['samples'] == []
