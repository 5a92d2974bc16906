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

import numpy as np
import tensorflow as tf

"""Utility file for loss and accuracy functions. Used by the attacks, the training steps and the evaluation"""

# tolerance on the sum of a target row
target_tolerance = 1e-6


class TargetError(ValueError):
    """A target row is not a probability vector"""


def check_targets(targets, num_classes=None):
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim != 2:
        raise TargetError('targets should be [n x c], got shape %s' % (targets.shape,))
    if num_classes is not None and targets.shape[1] != num_classes:
        raise TargetError('targets have %d classes, logits have %d' % (targets.shape[1], num_classes))
    if not np.all(np.isfinite(targets)) or np.any(targets < 0):
        raise TargetError('targets must be finite and nonnegative')
    bad_rows = np.flatnonzero(np.abs(targets.sum(axis=1) - 1.0) > target_tolerance)
    if bad_rows.size:
        raise TargetError('target rows %s do not sum to 1' % bad_rows[:10].tolist())
    return targets


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    targets = np.zeros((labels.shape[0], num_classes), dtype=np.float64)
    targets[np.arange(labels.shape[0]), labels] = 1.0
    return targets


def log_softmax(logits):
    """Row-wise log-softmax in float64, row max subtracted before exponentiation"""
    logits = tf.cast(logits, tf.float64)
    shifted = logits - tf.stop_gradient(tf.reduce_max(logits, axis=1, keepdims=True))
    return shifted - tf.math.log(tf.reduce_sum(tf.exp(shifted), axis=1, keepdims=True))


def per_example_cross_entropy(logits, targets):
    targets = tf.convert_to_tensor(targets, dtype=tf.float64)
    return -tf.reduce_sum(targets * log_softmax(logits), axis=1)


def soft_cross_entropy(logits, targets):
    """Mean over rows of -sum_k target_k * log softmax(logits)_k"""
    targets = check_targets(targets, num_classes=logits.shape[1])
    return tf.reduce_mean(per_example_cross_entropy(logits, targets))


def cw_margin(logits, labels):
    """Untargeted margin max_{i != y} z_i - z_y per row (kappa = 0)"""
    labels = tf.convert_to_tensor(np.asarray(labels, dtype=np.int64))
    mask = tf.one_hot(labels, logits.shape[1], on_value=True, off_value=False)
    true_logit = tf.reduce_sum(tf.where(mask, logits, tf.zeros_like(logits)), axis=1)
    other_logit = tf.reduce_max(tf.where(mask, tf.fill(tf.shape(logits), logits.dtype.min), logits), axis=1)
    return other_logit - true_logit


def accuracy(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if labels.size == 0:
        return float('nan')
    return float(np.mean(predictions == labels))
