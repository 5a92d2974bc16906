"""
Desk-scale training runs reproducing the expected ordering of ST, SAT and RAT and the trends of the robustness
analysis. Slow: run with -m slow. The MNIST runs need the four IDX files in the directory named by RAT_MNIST_DIR.
"""

import os
import time

import numpy as np
import pytest

from attacks import AttackConfig, pgd
from config import parse_config, stream_rng, stream_seed
from dataset_utils import get_datasets, subset
from model import forward, get_model, predict
from optimizer import SgdState
from rat_core import TrainingStreams, rat_train_step, sat_train_step
from robustness_evaluation import (clean_accuracy, generalization_gaps, obfuscation_report, robust_accuracy,
                                   scale_probe, sweep_epsilon, sweep_iterations)
from train import cmd_train

CONFIG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'configs')
MNIST_DIR = os.environ.get('RAT_MNIST_DIR')

needs_mnist = pytest.mark.skipif(not MNIST_DIR, reason='RAT_MNIST_DIR is not set')


class TrainedRun:
    def __init__(self, config_name, out_dir, method=None, dataset=None):
        self.cfg = parse_config(os.path.join(CONFIG_DIR, config_name))
        if method is not None:
            self.cfg.method = method
        for key, value in (dataset or {}).items():
            setattr(self.cfg.dataset, key, value)
        self.model, _ = cmd_train(self.cfg, str(out_dir), progress=False)
        self.train_set, self.test_set = get_datasets(self.cfg.dataset, stream_seed(self.cfg.seed, 'data'))
        self.seed = stream_seed(self.cfg.seed, 'eval')
        self.attack = AttackConfig(self.cfg.attack.epsilon, self.cfg.attack.alpha, self.cfg.eval.pgd_iterations)
        self.clean = clean_accuracy(self.model, self.test_set)
        self.robust = robust_accuracy(self.model, self.test_set, 'pgd', self.attack, self.seed)


def assert_method_ordering(runs):
    assert runs['st'].robust < 0.10
    assert runs['sat'].robust > 0.50 and runs['rat'].robust > 0.50
    assert runs['rat'].robust >= runs['sat'].robust - 0.01
    assert runs['rat'].clean >= runs['sat'].clean - 0.02


def assert_loss_grows_with_scale(run, n_points=50, share=0.8):
    correct = np.flatnonzero(predict(forward(run.model, run.test_set.inputs).numpy()) == run.test_set.labels)
    correct = correct[:n_points]
    rng = stream_rng(run.cfg.seed, 'eval')
    increasing = 0
    for index in correct:
        x, y = run.test_set.inputs[index:index + 1], run.test_set.labels[index:index + 1]
        path = pgd(run.model, x, y, run.cfg.attack_config(), rng)
        probe = scale_probe(run.model, x[0], int(y[0]), path, run.cfg.rat.scales)
        increasing += probe.records[-1].loss > probe.records[0].loss
    assert increasing >= share * len(correct)


def mnist_paths():
    return {'train_images': os.path.join(MNIST_DIR, 'train-images-idx3-ubyte'),
            'train_labels': os.path.join(MNIST_DIR, 'train-labels-idx1-ubyte'),
            'test_images': os.path.join(MNIST_DIR, 't10k-images-idx3-ubyte'),
            'test_labels': os.path.join(MNIST_DIR, 't10k-labels-idx1-ubyte')}


@pytest.fixture(scope='module')
def moons_runs(tmp_path_factory):
    return {method: TrainedRun('two_moons_%s.json' % method, tmp_path_factory.mktemp(method))
            for method in ('st', 'sat', 'rat')}


@pytest.mark.slow
def test_two_moons_method_ordering(moons_runs):
    assert_method_ordering(moons_runs)


@pytest.mark.slow
@pytest.mark.parametrize('method', ['sat', 'rat'])
def test_two_moons_more_iterations_do_not_help(moons_runs, method):
    run = moons_runs[method]
    sweep = sweep_iterations(run.model, run.test_set, run.attack.epsilon, run.attack.alpha, [1, 100], run.seed)
    (_, one_step), (_, hundred_steps) = sweep.points
    assert hundred_steps <= one_step + 0.02


@pytest.mark.slow
@pytest.mark.parametrize('method', ['sat', 'rat'])
def test_two_moons_accuracy_falls_with_budget(moons_runs, method):
    run = moons_runs[method]
    sweep = sweep_epsilon(run.model, run.test_set, [0.0, 0.05, 0.1, 0.15, 0.2], run.attack.alpha,
                          run.attack.iterations, run.seed)
    accs = [acc for _, acc in sweep.points]
    assert len(accs) == 5
    assert all(b <= a + 0.01 for a, b in zip(accs[:-1], accs[1:]))


@pytest.mark.slow
def test_two_moons_standard_training_gap(moons_runs):
    run = moons_runs['st']
    train_eval = subset(run.train_set, len(run.test_set), run.seed)
    gaps = generalization_gaps(run.model, train_eval, run.test_set, run.attack, run.seed)
    assert gaps.standard_gap >= 0
    assert -1 <= gaps.robust_gap <= 1


@pytest.mark.slow
def test_two_moons_loss_grows_with_scale(moons_runs):
    assert_loss_grows_with_scale(moons_runs['rat'])


@pytest.mark.slow
def test_two_moons_rat_passes_sanity_checks(moons_runs):
    run = moons_runs['rat']
    report = obfuscation_report(run.model, run.test_set, run.cfg.attack_config(), seed=run.seed)
    assert report.passed('iterative_stronger_than_single_step')
    assert report.passed('accuracy_decreases_with_budget')


@pytest.mark.slow
@needs_mnist
def test_mnist_method_ordering_and_sanity_checks(tmp_path):
    runs = {method: TrainedRun('mnist_rat.json', tmp_path / method, method, mnist_paths())
            for method in ('st', 'sat', 'rat')}
    assert_method_ordering(runs)
    run = runs['rat']
    report = obfuscation_report(run.model, run.test_set, run.cfg.attack_config(), seed=run.seed)
    assert report.passed('iterative_stronger_than_single_step')
    assert report.passed('accuracy_decreases_with_budget')
    assert_loss_grows_with_scale(run)


@pytest.mark.slow
@needs_mnist
def test_mnist_rat_step_overhead():
    cfg = parse_config(os.path.join(CONFIG_DIR, 'mnist_rat.json'))
    for key, value in mnist_paths().items():
        setattr(cfg.dataset, key, value)
    train_set, _ = get_datasets(cfg.dataset, stream_seed(cfg.seed, 'data'))
    batch = (train_set.inputs[:cfg.optimizer.batch_size], train_set.labels[:cfg.optimizer.batch_size])
    timings = {}
    for method in ('sat', 'rat'):
        model = get_model(cfg.widths(train_set.input_width), rng=stream_rng(cfg.seed, 'init'))
        state = SgdState(cfg.optimizer.learning_rate)
        streams = TrainingStreams(stream_rng(cfg.seed, 'attack'), stream_rng(cfg.seed, 'ars'))
        start = time.perf_counter()
        for _ in range(20):
            if method == 'sat':
                sat_train_step(model, batch, cfg.attack_config(), state, streams)
            else:
                rat_train_step(model, batch, cfg.attack_config(), cfg.rat_config(), state, streams)
        timings[method] = time.perf_counter() - start
    assert timings['rat'] < 1.25 * timings['sat']
