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

"""
Robustness analysis of a trained classifier: clean and robust accuracy, PGD iteration and budget sweeps,
generalization gaps, the loss-versus-scale probe along an adversarial direction and the obfuscated-gradient
sanity checks.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import numpy as np

from attacks import AttackConfig, cw_pgd, fgsm, first_end_points, pgd
from dataset_utils import EmptyDatasetError
from model import forward, predict
from rat_core import sample_direction, sample_perturbed
from scores_losses import one_hot, per_example_cross_entropy

logger = logging.getLogger(__name__)

divider = '------------------------------'

ATTACK_KINDS = ('fgsm', 'pgd', 'cw')
SWEEP_AXES = ('pgd_iterations', 'pgd_epsilon')

# budgets of the "higher distortion bound" sanity check
default_check_epsilons = (0.0, 0.05, 0.1, 0.15, 0.2)


@dataclass
class EvalReport:
    clean_accuracy: float
    robust_accuracy: Dict[str, float] = field(default_factory=dict)
    n_evaluated: int = 0

    def rows(self):
        rows = [('clean', self.clean_accuracy, self.n_evaluated)]
        rows += [(name, acc, self.n_evaluated) for name, acc in self.robust_accuracy.items()]
        return rows


@dataclass
class SweepResult:
    axis: str
    points: List[Tuple[float, float]]

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError('axis should be one of %s, got %r' % (SWEEP_AXES, self.axis))
        values = [value for value, _ in self.points]
        if any(b <= a for a, b in zip(values[:-1], values[1:])):
            raise ValueError('sweep values must be strictly increasing: %s' % values)


@dataclass
class ProbeRecord:
    scale: float
    loss: float
    adversarial: bool


@dataclass
class ScaleProbe:
    records: List[ProbeRecord]
    lam: float
    found: bool


@dataclass
class GapReport:
    train_clean: float
    test_clean: float
    train_robust: float
    test_robust: float

    @property
    def standard_gap(self):
        return self.train_clean - self.test_clean

    @property
    def robust_gap(self):
        return self.train_robust - self.test_robust


@dataclass
class CheckResult:
    name: str
    status: str
    detail: str


@dataclass
class ObfuscationReport:
    checks: List[CheckResult]

    def passed(self, name):
        return next(check.status == 'pass' for check in self.checks if check.name == name)


def _check_nonempty(dataset):
    if len(dataset) == 0:
        raise EmptyDatasetError('cannot evaluate on an empty dataset (%s)' % dataset.name)


def attack_batch(model, x, y, attack_kind, attack_cfg, rng):
    """Adversarial version of a batch under one of the white-box attacks"""
    if attack_kind == 'fgsm':
        return fgsm(model, x, y, attack_cfg.epsilon)
    if attack_kind == 'pgd':
        return pgd(model, x, y, replace(attack_cfg, loss_kind='cross_entropy'), rng).end_point
    if attack_kind == 'cw':
        return cw_pgd(model, x, y, attack_cfg, rng)
    raise ValueError('attack_kind should be one of %s, got %r' % (ATTACK_KINDS, attack_kind))


def clean_accuracy(model, dataset, batch_size=256):
    _check_nonempty(dataset)
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.inputs[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        correct += int(np.sum(predict(forward(model, x).numpy()) == y))
    return correct / len(dataset)


def robust_accuracy(model, dataset, attack_kind, attack_cfg, seed=0, batch_size=256):
    """
    Fraction of samples classified correctly both clean and after the attack; a clean misclassification
    counts as a successful attack
    """
    _check_nonempty(dataset)
    rng = np.random.default_rng(seed)
    correct = 0
    for start in range(0, len(dataset), batch_size):
        x = dataset.inputs[start:start + batch_size]
        y = dataset.labels[start:start + batch_size]
        clean_ok = predict(forward(model, x).numpy()) == y
        adversarial = attack_batch(model, x, y, attack_kind, attack_cfg, rng)
        adversarial_ok = predict(forward(model, adversarial).numpy()) == y
        correct += int(np.sum(clean_ok & adversarial_ok))
    return correct / len(dataset)


def evaluate_model(model, dataset, attack_cfg, seed=0, batch_size=256):
    """Clean accuracy and robust accuracy under FGSM, PGD and CW-inf at the same budget"""
    report = EvalReport(clean_accuracy=clean_accuracy(model, dataset, batch_size), n_evaluated=len(dataset))
    for attack_kind in ATTACK_KINDS:
        report.robust_accuracy[attack_kind] = robust_accuracy(model, dataset, attack_kind, attack_cfg, seed,
                                                              batch_size)
    return report


def sweep_iterations(model, dataset, epsilon, alpha, iterations, seed=0, random_start=True, batch_size=256):
    """
    PGD robust accuracy for every iteration count. 0 iterations is the clean accuracy and 1 iteration is the
    single-step attack from the benign point (FGSM when alpha = epsilon); random_start applies from 2 on.
    """
    points = []
    for k in iterations:
        if k == 0:
            acc = clean_accuracy(model, dataset, batch_size)
        else:
            cfg = AttackConfig(epsilon, alpha, int(k), random_start and k > 1)
            acc = robust_accuracy(model, dataset, 'pgd', cfg, seed, batch_size)
        points.append((int(k), acc))
    return SweepResult('pgd_iterations', points)


def sweep_epsilon(model, dataset, epsilons, alpha, iterations, seed=0, random_start=True, batch_size=256):
    """PGD robust accuracy for every perturbation budget"""
    points = []
    for epsilon in epsilons:
        cfg = AttackConfig(float(epsilon), alpha, iterations, random_start)
        points.append((float(epsilon), robust_accuracy(model, dataset, 'pgd', cfg, seed, batch_size)))
    return SweepResult('pgd_epsilon', points)


def generalization_gaps(model, train_set, test_set, attack_cfg, seed=0, batch_size=256):
    """Train-minus-test differences of the clean accuracy and of the PGD robust accuracy"""
    return GapReport(train_clean=clean_accuracy(model, train_set, batch_size),
                     test_clean=clean_accuracy(model, test_set, batch_size),
                     train_robust=robust_accuracy(model, train_set, 'pgd', attack_cfg, seed, batch_size),
                     test_robust=robust_accuracy(model, test_set, 'pgd', attack_cfg, seed, batch_size))


def scale_probe(model, x, y, path, scale_grid, lam=0.5):
    """
    Cross-entropy and attack outcome of x + s * (x_bar - x) for every s of the grid, along the direction
    fixed by lam between the first and end adversarial points of the path
    @param x: one benign sample [d]
    @param path: AttackPath of that sample (batch of one)
    """
    x = np.asarray(x).reshape(1, -1)
    x_f, x_e, found = first_end_points(path)
    x_bar, lam = sample_direction(x_f, x_e, None, lam=lam)
    grid = [float(s) for s in scale_grid]
    if any(s < 0 for s in grid):
        raise ValueError('scales must be nonnegative')
    inputs = np.concatenate([sample_perturbed(x, x_bar, lam, None, None, scale=s).x_hat for s in grid])
    logits = forward(model, inputs)
    losses = per_example_cross_entropy(logits, one_hot(np.full(len(grid), y), model.num_classes)).numpy()
    adversarial = predict(logits.numpy()) != y
    records = [ProbeRecord(s, float(loss), bool(adv)) for s, loss, adv in zip(grid, losses, adversarial)]
    return ScaleProbe(records=records, lam=float(lam[0]), found=bool(found[0]))


def obfuscation_report(model, dataset, attack_cfg, pgd_iterations=20, epsilons=default_check_epsilons,
                       tolerance=0.01, seed=0, batch_size=256):
    """
    Gradient-masking sanity checks: iterative attacks must beat the single-step attack and accuracy must
    not grow with the budget. The black-box check is not evaluated.
    """
    fgsm_acc = robust_accuracy(model, dataset, 'fgsm', attack_cfg, seed, batch_size)
    pgd_cfg = replace(attack_cfg, iterations=pgd_iterations, loss_kind='cross_entropy')
    pgd_acc = robust_accuracy(model, dataset, 'pgd', pgd_cfg, seed, batch_size)
    check_iterative = CheckResult('iterative_stronger_than_single_step',
                                  'pass' if pgd_acc <= fgsm_acc else 'fail',
                                  'pgd%d=%.4f fgsm=%.4f' % (pgd_iterations, pgd_acc, fgsm_acc))
    check_black_box = CheckResult('white_box_stronger_than_black_box', 'not evaluated',
                                  'no black-box attack available')
    sweep = sweep_epsilon(model, dataset, sorted(epsilons), attack_cfg.alpha, attack_cfg.iterations, seed,
                          attack_cfg.random_start, batch_size)
    accs = [acc for _, acc in sweep.points]
    monotone = all(b <= a + tolerance for a, b in zip(accs[:-1], accs[1:]))
    check_budget = CheckResult('accuracy_decreases_with_budget', 'pass' if monotone else 'fail',
                               ' '.join('eps=%g:%.4f' % point for point in sweep.points))
    report = ObfuscationReport([check_iterative, check_black_box, check_budget])
    for check in report.checks:
        logger.info('%s: %s (%s)', check.name, check.status, check.detail)
    return report


def print_report(report):
    print(divider)
    print('Clean accuracy: %.2f' % (report.clean_accuracy * 100))
    for name, acc in report.robust_accuracy.items():
        print('%s accuracy: %.2f' % (name.upper(), acc * 100))
    print('Evaluated samples: %d' % report.n_evaluated)
    print(divider)
