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

"""Training loop for ST, SAT and RAT runs: per-epoch metrics CSV, step-decay learning rate and checkpoints"""

import logging
import os
import time

import numpy as np
import pandas as pd
from tqdm import tqdm

from config import stream_rng, stream_seed, write_config
from dataset_utils import batches, get_datasets, subset
from model import get_model, save_checkpoint
from optimizer import NonFiniteError, SgdState, step_decay
from rat_core import TrainingStreams, rat_train_step, sat_train_step, st_train_step
from robustness_evaluation import clean_accuracy, robust_accuracy

logger = logging.getLogger(__name__)

DIVIDER = '-----------------------------------------'

METRICS_COLUMNS = ['epoch', 'step', 'method', 'loss', 'clean_acc', 'robust_acc_pgd', 'pgd_fail_frac', 'mean_s',
                   'mean_beta', 'lr', 'wall_ms']


def get_step_fn(cfg):
    """Training step of the configured method as f(model, batch, sgd_state, streams) -> StepMetrics"""
    attack_cfg = cfg.attack_config()
    if cfg.method == 'st':
        return lambda model, batch, sgd_state, streams: st_train_step(model, batch, sgd_state)
    if cfg.method == 'sat':
        return lambda model, batch, sgd_state, streams: sat_train_step(model, batch, attack_cfg, sgd_state,
                                                                       streams)
    rat_cfg = cfg.rat_config()
    return lambda model, batch, sgd_state, streams: rat_train_step(model, batch, attack_cfg, rat_cfg, sgd_state,
                                                                   streams)


def append_metrics(path, row):
    pd.DataFrame([row], columns=METRICS_COLUMNS).to_csv(path, mode='a', header=not os.path.exists(path),
                                                        index=False)


def cmd_train(cfg, out_dir, progress=True):
    """
    Train the configured method for T epochs
    @param cfg: ExperimentConfig
    @param out_dir: receives config.json, metrics.csv, last.ckpt, best.ckpt and final.ckpt
    @return: (trained model, list of metrics rows)
    """
    os.makedirs(out_dir, exist_ok=True)
    write_config(cfg, os.path.join(out_dir, 'config.json'))
    metrics_path = os.path.join(out_dir, 'metrics.csv')
    if os.path.exists(metrics_path):
        os.remove(metrics_path)

    train_set, test_set = get_datasets(cfg.dataset, stream_seed(cfg.seed, 'data'))
    if train_set.num_classes > cfg.model.num_classes:
        raise ValueError('dataset has %d classes but model.num_classes is %d'
                         % (train_set.num_classes, cfg.model.num_classes))
    eval_set = subset(test_set, cfg.run.eval_samples, stream_seed(cfg.seed, 'eval'))
    model = get_model(cfg.widths(train_set.input_width), rng=stream_rng(cfg.seed, 'init'))

    print('\n' + DIVIDER)
    print(' Model Summary')
    print(model.summary())
    print(' Method: %s, train samples: %d, eval samples: %d' % (cfg.method, len(train_set), len(eval_set)))
    print(DIVIDER)

    opt = cfg.optimizer
    sgd_state = SgdState(opt.learning_rate, opt.momentum, opt.weight_decay)
    streams = TrainingStreams(attack=stream_rng(cfg.seed, 'attack'), ars=stream_rng(cfg.seed, 'ars'))
    step_fn = get_step_fn(cfg)
    attack_cfg = cfg.attack_config()
    shuffle_seed = stream_seed(cfg.seed, 'shuffle')
    eval_seed = stream_seed(cfg.seed, 'eval')

    history = []
    best_robust = -1.0
    step = 0
    epochs = tqdm(range(opt.epochs), desc=cfg.method, disable=not progress)
    for epoch in epochs:
        sgd_state.learning_rate = step_decay(opt.learning_rate, epoch, opt.lr_decay_epochs)
        start = time.perf_counter()
        step_metrics = []
        for batch in batches(train_set, opt.batch_size, shuffle_seed, epoch):
            try:
                step_metrics.append(step_fn(model, batch, sgd_state, streams))
            except NonFiniteError:
                if epoch == 0:
                    logger.error('non-finite update at epoch %d step %d, no checkpoint written yet', epoch, step)
                else:
                    logger.error('non-finite update at epoch %d step %d, last.ckpt keeps epoch %d',
                                 epoch, step, epoch - 1)
                raise
            step += 1
        wall_ms = (time.perf_counter() - start) * 1000.0 if cfg.run.wall_clock else 0.0

        row = {
            'epoch': epoch + 1,
            'step': step,
            'method': cfg.method,
            'loss': float(np.mean([m.loss for m in step_metrics])),
            'clean_acc': clean_accuracy(model, eval_set, cfg.eval.batch_size),
            'robust_acc_pgd': robust_accuracy(model, eval_set, 'pgd', attack_cfg, eval_seed, cfg.eval.batch_size),
            'pgd_fail_frac': float(np.mean([m.pgd_fail_frac for m in step_metrics])),
            'mean_s': float(np.mean([m.mean_scale for m in step_metrics])),
            'mean_beta': float(np.mean([m.mean_beta for m in step_metrics])),
            'lr': sgd_state.learning_rate,
            'wall_ms': wall_ms,
        }
        append_metrics(metrics_path, row)
        history.append(row)
        save_checkpoint(model, os.path.join(out_dir, 'last.ckpt'))
        if row['robust_acc_pgd'] > best_robust:
            best_robust = row['robust_acc_pgd']
            save_checkpoint(model, os.path.join(out_dir, 'best.ckpt'))
        epochs.set_postfix(loss='%.4f' % row['loss'], clean='%.3f' % row['clean_acc'],
                           pgd='%.3f' % row['robust_acc_pgd'])

    save_checkpoint(model, os.path.join(out_dir, 'final.ckpt'))
    logger.info('training finished after %d steps, best PGD accuracy %.4f', step, best_robust)
    return model, history
