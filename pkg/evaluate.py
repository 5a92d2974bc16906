# MIT License
#
# Copyright (c) 2022 Raffaele Berzoini, Eleonora D'Arnese, Davide Conficconi
#
# Permission is hereby granted, free of charge, to any person obtaining a copy
# of this software and associated documentation files (the "Software"), to deal
# in the Software without restriction, including without limitation the rights
# to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
# copies of the Software, and to permit persons to whom the Software is
# furnished to do so, subject to the following conditions:
#
# The above copyright notice and this permission notice shall be included in all
# copies or substantial portions of the Software.
#
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
# AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
# OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
# SOFTWARE.

"""Evaluation commands: each loads a checkpoint, runs one analysis on the test set and writes one CSV"""

import logging
import os

import pandas as pd

from attacks import pgd
from config import stream_rng, stream_seed
from dataset_utils import get_datasets, subset
from model import CheckpointError, load_checkpoint
from robustness_evaluation import (evaluate_model, generalization_gaps, obfuscation_report, print_report,
                                   scale_probe, sweep_epsilon, sweep_iterations)

logger = logging.getLogger(__name__)

EVAL_COLUMNS = ['attack', 'accuracy', 'n_evaluated']
SWEEP_COLUMNS = ['axis', 'value', 'robust_acc']
PROBE_COLUMNS = ['s', 'loss', 'adversarial']
GAPS_COLUMNS = ['train_clean_acc', 'test_clean_acc', 'standard_gap', 'train_robust_acc', 'test_robust_acc',
                'robust_gap']
OBFUSCATION_COLUMNS = ['check', 'status', 'detail']


def _load(checkpoint, cfg):
    """Checkpoint plus the train and evaluation sets of the config, checking they fit together"""
    model = load_checkpoint(checkpoint)
    train_set, test_set = get_datasets(cfg.dataset, stream_seed(cfg.seed, 'data'))
    if model.input_width != test_set.input_width:
        raise CheckpointError('%s expects %d input features, dataset has %d'
                              % (checkpoint, model.input_width, test_set.input_width))
    if model.num_classes < test_set.num_classes:
        raise CheckpointError('%s has %d classes, dataset has %d'
                              % (checkpoint, model.num_classes, test_set.num_classes))
    eval_set = subset(test_set, cfg.eval.max_samples, stream_seed(cfg.seed, 'eval'))
    return model, train_set, eval_set


def _write(rows, columns, out_dir, name):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False)
    logger.info('wrote %s', path)
    return path


def cmd_eval(checkpoint, cfg, out_dir):
    """Clean, FGSM, PGD and CW-inf accuracy -> eval_report.csv"""
    model, _, eval_set = _load(checkpoint, cfg)
    report = evaluate_model(model, eval_set, cfg.attack_config(), stream_seed(cfg.seed, 'eval'),
                            cfg.eval.batch_size)
    print_report(report)
    return _write(report.rows(), EVAL_COLUMNS, out_dir, 'eval_report.csv')


def cmd_sweep(checkpoint, cfg, axis, values, out_dir):
    """PGD accuracy over iteration counts or budgets -> sweep_<axis>.csv"""
    model, _, eval_set = _load(checkpoint, cfg)
    attack = cfg.attack_config()
    seed = stream_seed(cfg.seed, 'eval')
    if axis == 'pgd_iterations':
        values = values if values is not None else cfg.eval.sweep_iterations
        result = sweep_iterations(model, eval_set, attack.epsilon, attack.alpha, [int(v) for v in values], seed,
                                  attack.random_start, cfg.eval.batch_size)
    elif axis == 'pgd_epsilon':
        values = values if values is not None else cfg.eval.sweep_epsilons
        result = sweep_epsilon(model, eval_set, [float(v) for v in values], attack.alpha, attack.iterations, seed,
                               attack.random_start, cfg.eval.batch_size)
    else:
        raise ValueError('axis should be pgd_iterations or pgd_epsilon, got %r' % axis)
    rows = [(result.axis, value, acc) for value, acc in result.points]
    return _write(rows, SWEEP_COLUMNS, out_dir, 'sweep_%s.csv' % axis)


def cmd_probe(checkpoint, cfg, sample_index, out_dir):
    """Loss and attack outcome along one adversarial direction of a test sample -> probe.csv"""
    model, _, eval_set = _load(checkpoint, cfg)
    if not 0 <= sample_index < len(eval_set):
        raise IndexError('sample index %d outside the %d evaluation samples' % (sample_index, len(eval_set)))
    x = eval_set.inputs[sample_index:sample_index + 1]
    y = eval_set.labels[sample_index:sample_index + 1]
    path = pgd(model, x, y, cfg.attack_config(), stream_rng(cfg.seed, 'eval'))
    probe = scale_probe(model, x[0], int(y[0]), path, cfg.eval.probe_scales, cfg.eval.probe_lambda)
    if not probe.found:
        logger.info('no adversarial point on the path of sample %d, probing along the end point', sample_index)
    rows = [(record.scale, record.loss, record.adversarial) for record in probe.records]
    return _write(rows, PROBE_COLUMNS, out_dir, 'probe.csv')


def cmd_gaps(checkpoint, cfg, out_dir):
    """Standard and robust generalization gaps -> gaps.csv"""
    model, train_set, eval_set = _load(checkpoint, cfg)
    train_eval = subset(train_set, len(eval_set), stream_seed(cfg.seed, 'eval'))
    gaps = generalization_gaps(model, train_eval, eval_set, cfg.attack_config(), stream_seed(cfg.seed, 'eval'),
                               cfg.eval.batch_size)
    rows = [(gaps.train_clean, gaps.test_clean, gaps.standard_gap, gaps.train_robust, gaps.test_robust,
             gaps.robust_gap)]
    return _write(rows, GAPS_COLUMNS, out_dir, 'gaps.csv')


def cmd_obfuscation(checkpoint, cfg, out_dir):
    """Obfuscated-gradient sanity checks -> obfuscation.csv"""
    model, _, eval_set = _load(checkpoint, cfg)
    attack = cfg.attack_config()
    report = obfuscation_report(model, eval_set, attack, cfg.eval.pgd_iterations, cfg.eval.sweep_epsilons,
                                cfg.eval.tolerance, stream_seed(cfg.seed, 'eval'), cfg.eval.batch_size)
    rows = [(check.name, check.status, check.detail) for check in report.checks]
    return _write(rows, OBFUSCATION_COLUMNS, out_dir, 'obfuscation.csv')
