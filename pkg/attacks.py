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
White-box L-infinity attacks on batches: FGSM, trajectory-recording PGD and PGD on the CW margin.
Every attack works on [n x d] batches; the recorded PGD trajectory keeps the first and end adversarial
points of each benign sample.
"""

import logging
import threading
from dataclasses import dataclass

import numpy as np
import tensorflow as tf

from model import forward, predict
from scores_losses import cw_margin, one_hot, per_example_cross_entropy

logger = logging.getLogger(__name__)

LOSS_KINDS = ('cross_entropy', 'cw_margin')

# benign points attacked by pgd() since the last reset
_pgd_invocations = 0
_pgd_invocations_lock = threading.Lock()


def pgd_invocations():
    return _pgd_invocations


def reset_pgd_invocations():
    global _pgd_invocations
    with _pgd_invocations_lock:
        _pgd_invocations = 0


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    alpha: float
    iterations: int
    random_start: bool = True
    loss_kind: str = 'cross_entropy'

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError('epsilon must be >= 0, got %r' % self.epsilon)
        if self.alpha <= 0:
            raise ValueError('alpha must be > 0, got %r' % self.alpha)
        if self.iterations < 1:
            raise ValueError('iterations must be >= 1, got %r' % self.iterations)
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError('loss_kind should be one of %s, got %r' % (LOSS_KINDS, self.loss_kind))


@dataclass
class AttackPath:
    """
    PGD trajectory of a batch. points[t] is the iterate after step t + 1 (0-based), success[t] tells which
    samples points[t] misclassifies, first_adv_index is the first successful step per sample or -1.
    """
    benign: np.ndarray
    labels: np.ndarray
    points: np.ndarray
    success: np.ndarray
    first_adv_index: np.ndarray

    @property
    def end_point(self):
        return self.points[-1]

    @property
    def found(self):
        return self.first_adv_index >= 0


def _as_inputs(model, x):
    return np.asarray(x, dtype=tf.as_dtype(model.dtype).as_numpy_dtype)


def _loss_gradient(model, points, labels, loss_kind):
    """Gradient of the summed per-sample loss w.r.t. the points, with the logits it was taken at"""
    points = tf.convert_to_tensor(points, dtype=model.dtype)
    with tf.GradientTape() as tape:
        tape.watch(points)
        logits = forward(model, points)
        if loss_kind == 'cw_margin':
            loss = tf.reduce_sum(cw_margin(logits, labels))
        else:
            loss = tf.reduce_sum(per_example_cross_entropy(logits, one_hot(labels, model.num_classes)))
    return tape.gradient(loss, points).numpy(), logits.numpy()


def _signed_step(points, benign, grad, alpha, epsilon):
    """Signed ascent step, projection on the epsilon-ball around benign, then clipping to [0, 1]"""
    scalar = points.dtype.type
    stepped = points + scalar(alpha) * np.sign(grad)
    projected = np.clip(stepped, benign - scalar(epsilon), benign + scalar(epsilon))
    return np.clip(projected, scalar(0.0), scalar(1.0))


def random_start(x, epsilon, rng):
    """Uniform draw per coordinate in [max(0, x - eps), min(1, x + eps)]"""
    low = np.maximum(x - x.dtype.type(epsilon), 0)
    high = np.minimum(x + x.dtype.type(epsilon), 1)
    return rng.uniform(low, high).astype(x.dtype)


def fgsm(model, x, y, epsilon):
    """x' = clip_[0,1](x + eps * sign(grad_x CE)); sign(0) = 0"""
    x = _as_inputs(model, x)
    grad, _ = _loss_gradient(model, x, y, 'cross_entropy')
    return _signed_step(x, x, grad, epsilon, epsilon)


def _attack_path(model, x, y, cfg, rng):
    x = _as_inputs(model, x)
    y = np.asarray(y, dtype=np.int64)
    if cfg.random_start:
        if rng is None:
            raise ValueError('random_start needs a random generator')
        current = random_start(x, cfg.epsilon, rng)
    else:
        current = x.copy()
    points = np.empty((cfg.iterations,) + x.shape, dtype=x.dtype)
    success = np.empty((cfg.iterations, x.shape[0]), dtype=bool)
    for t in range(cfg.iterations):
        grad, logits = _loss_gradient(model, current, y, cfg.loss_kind)
        if t > 0:
            # logits were taken at points[t - 1]
            success[t - 1] = predict(logits) != y
        current = _signed_step(current, x, grad, cfg.alpha, cfg.epsilon)
        points[t] = current
    success[-1] = predict(forward(model, current).numpy()) != y
    first_adv_index = np.where(success.any(axis=0), success.argmax(axis=0), -1)
    return AttackPath(benign=x, labels=y, points=points, success=success, first_adv_index=first_adv_index)


def pgd(model, x, y, cfg, rng=None):
    """
    K steps of x'_{t+1} = clip_[0,1](proj_B(x, eps)(x'_t + alpha * sign(grad))) from a random or benign start
    @param rng: numpy Generator, required when cfg.random_start
    @return: AttackPath with every iterate and its success flags
    """
    global _pgd_invocations
    path = _attack_path(model, x, y, cfg, rng)
    with _pgd_invocations_lock:
        _pgd_invocations += path.benign.shape[0]
    n_failed = int(np.sum(~path.found))
    if n_failed:
        logger.debug('pgd found no adversarial point for %d of %d samples', n_failed, path.benign.shape[0])
    return path


def cw_pgd(model, x, y, cfg, rng=None):
    """PGD ascent on the margin max_{i != y} z_i - z_y; returns the final iterate"""
    if cfg.loss_kind != 'cw_margin':
        cfg = AttackConfig(cfg.epsilon, cfg.alpha, cfg.iterations, cfg.random_start, 'cw_margin')
    return _attack_path(model, x, y, cfg, rng).end_point


def first_end_points(path):
    """
    First and end adversarial points per sample. Samples without a successful iterate fall back to the end
    point for both.
    @return: (x_f, x_e, found)
    """
    found = path.found
    x_e = path.end_point
    first = path.points[np.maximum(path.first_adv_index, 0), np.arange(x_e.shape[0])]
    x_f = np.where(found[:, None], first, x_e)
    return x_f, x_e, found
