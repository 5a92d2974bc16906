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
Regional adversarial training: the adversarial region-based sampler (ARS), distance-aware label smoothing (DLS)
and the ST / SAT / RAT training steps. A RAT step attacks every benign point once, samples m perturbed points
per benign point from the region spanned by its first and end adversarial points, and fits the model on all
n x m samples with soft labels.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from attacks import first_end_points, pgd
from model import DimensionError, backward
from optimizer import NonFiniteError, sgd_step
from scores_losses import one_hot

logger = logging.getLogger(__name__)


class RatConfigError(ValueError):
    """Inconsistent RAT hyperparameters"""


@dataclass(frozen=True)
class RatConfig:
    """
    @param scale_set: ascending magnitude scale candidates, min >= 0
    @param max_scale: S, equal to max(scale_set). Derived when None
    @param samples_per_point: m perturbed samples per benign point
    @param beta_max: true-class confidence at s = 0
    @param beta_min: true-class confidence at s = S
    @param collapse_to_end: sample from the end adversarial point only (x'_f := x'_e)
    """
    scale_set: Tuple[float, ...]
    max_scale: float = None
    samples_per_point: int = 2
    beta_max: float = 1.0
    beta_min: float = 0.1
    collapse_to_end: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'scale_set', tuple(float(s) for s in self.scale_set))
        errors = []
        scales = self.scale_set
        if not scales:
            errors.append('scale_set must not be empty')
        else:
            if any(b <= a for a, b in zip(scales[:-1], scales[1:])):
                errors.append('scale_set must be strictly ascending')
            if scales[0] < 0:
                errors.append('scale_set values must be >= 0')
            if self.max_scale is None:
                object.__setattr__(self, 'max_scale', scales[-1])
            elif float(self.max_scale) != scales[-1]:
                errors.append('max_scale %r differs from max(scale_set) %r' % (self.max_scale, scales[-1]))
            if self.max_scale is not None and self.max_scale <= 0 and scales != (0.0,):
                errors.append('max_scale must be positive')
        if self.samples_per_point < 1:
            errors.append('samples_per_point must be >= 1')
        if not 0 < self.beta_max <= 1:
            errors.append('beta_max must be in (0, 1]')
        if not 0 <= self.beta_min <= self.beta_max:
            errors.append('beta_min must be in [0, beta_max]')
        if errors:
            raise RatConfigError('; '.join(errors))


@dataclass
class PerturbedSample:
    """Sampled points x_hat with their mixing weights, scales and clipping flags (one entry per row)"""
    x_hat: np.ndarray
    lam: np.ndarray
    scale: np.ndarray
    clipped: np.ndarray


@dataclass
class SoftLabel:
    probs: np.ndarray
    beta: np.ndarray


@dataclass
class TrainingStreams:
    """Independent random streams of a training run"""
    attack: np.random.Generator
    ars: np.random.Generator


@dataclass
class StepMetrics:
    loss: float
    n_samples: int
    pgd_fail_frac: float
    mean_scale: float
    mean_beta: float
    clipped_frac: float = 0.0


def sample_direction(x_f, x_e, rng, lam=None):
    """
    x_bar = lam * x_f + (1 - lam) * x_e with lam ~ U(0, 1), one lam per row
    @param lam: fixed mixing weight(s) instead of a draw
    @return: (x_bar, lam)
    """
    x_f = np.asarray(x_f, dtype=np.float64)
    x_e = np.asarray(x_e, dtype=np.float64)
    if x_f.shape != x_e.shape:
        raise DimensionError('x_f has shape %s, x_e has %s' % (x_f.shape, x_e.shape))
    if lam is None:
        lam = rng.uniform(0.0, 1.0, size=x_f.shape[:-1])
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), x_f.shape[:-1])
    x_bar = x_e + lam[..., None] * (x_f - x_e)
    return x_bar, lam


def sample_perturbed(x, x_bar, lam, rat_cfg, rng, scale=None):
    """
    x_hat = clip_[0,1](x + s * (x_bar - x)) with s uniform over the scale set. No epsilon-ball projection:
    scales above 1 reach beyond the attack budget.
    @param scale: fixed scale(s) instead of a draw
    """
    x = np.asarray(x, dtype=np.float64)
    x_bar = np.asarray(x_bar, dtype=np.float64)
    if x.shape != x_bar.shape:
        raise DimensionError('x has shape %s, x_bar has %s' % (x.shape, x_bar.shape))
    if scale is None:
        scales = np.asarray(rat_cfg.scale_set)
        scale = scales[rng.integers(len(scales), size=x.shape[:-1])]
    scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), x.shape[:-1])
    raw = x + scale[..., None] * (x_bar - x)
    x_hat = np.clip(raw, 0.0, 1.0)
    clipped = np.any(x_hat != raw, axis=-1)
    return PerturbedSample(x_hat=x_hat, lam=np.asarray(lam), scale=scale, clipped=clipped)


def dls_beta(s, rat_cfg):
    """beta = beta_max - s * (beta_max - beta_min) / S"""
    s = np.asarray(s, dtype=np.float64)
    if np.any(s < 0) or np.any(s > rat_cfg.max_scale):
        raise RatConfigError('scale outside [0, %r]: %s' % (rat_cfg.max_scale, s))
    if rat_cfg.max_scale == 0:
        beta = np.full_like(s, rat_cfg.beta_max)
    else:
        beta = rat_cfg.beta_max - s * (rat_cfg.beta_max - rat_cfg.beta_min) / rat_cfg.max_scale
    return float(beta) if beta.ndim == 0 else beta


def dls_label(y, num_classes, beta):
    """
    Soft label with beta on the true class and (1 - beta) / (c - 1) on every other class.
    Scalar y and beta give one label; arrays give one row per entry.
    """
    if num_classes < 2:
        raise RatConfigError('num_classes must be >= 2, got %r' % num_classes)
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(beta < 0) or np.any(beta > 1):
        raise RatConfigError('beta outside [0, 1]: %s' % beta)
    y = np.asarray(y, dtype=np.int64)
    if np.any(y < 0) or np.any(y >= num_classes):
        raise RatConfigError('label outside [0, %d)' % num_classes)
    labels = np.atleast_1d(y)
    betas = np.broadcast_to(np.atleast_1d(beta), labels.shape)
    probs = np.repeat(((1.0 - betas) / (num_classes - 1))[:, None], num_classes, axis=1)
    probs[np.arange(labels.shape[0]), labels] = betas
    if y.ndim == 0:
        return SoftLabel(probs=probs[0], beta=float(betas[0]))
    return SoftLabel(probs=probs, beta=np.array(betas))


def ars_sample(x, y, path, rat_cfg, rng, num_classes):
    """
    Draw m perturbed samples per benign point from its adversarial region, with distance-aware soft labels.
    Every sample redraws lam and s. Labels use the drawn s, not the distance left after clipping.
    @return: list of m (PerturbedSample, SoftLabel) pairs, each covering the whole batch
    """
    x_f, x_e, _ = first_end_points(path)
    if rat_cfg.collapse_to_end:
        x_f = x_e
    pairs = []
    for _ in range(rat_cfg.samples_per_point):
        x_bar, lam = sample_direction(x_f, x_e, rng)
        perturbed = sample_perturbed(x, x_bar, lam, rat_cfg, rng)
        beta = dls_beta(perturbed.scale, rat_cfg)
        pairs.append((perturbed, dls_label(y, num_classes, beta)))
    return pairs


def _fit(model, inputs, targets, sgd_state):
    grads = backward(model, inputs, targets)
    if not np.isfinite(grads.loss):
        raise NonFiniteError('non-finite training loss %r' % grads.loss)
    sgd_step(model, grads, sgd_state)
    return grads.loss


def st_train_step(model, batch, sgd_state):
    """Standard training: cross-entropy on the clean batch"""
    x, y = batch
    loss = _fit(model, x, one_hot(y, model.num_classes), sgd_state)
    return StepMetrics(loss=loss, n_samples=len(y), pgd_fail_frac=0.0, mean_scale=0.0, mean_beta=1.0)


def sat_train_step(model, batch, attack_cfg, sgd_state, streams):
    """Standard adversarial training: cross-entropy on the PGD end points with one-hot labels"""
    x, y = batch
    path = pgd(model, x, y, attack_cfg, streams.attack)
    loss = _fit(model, path.end_point, one_hot(y, model.num_classes), sgd_state)
    return StepMetrics(loss=loss, n_samples=len(y), pgd_fail_frac=float(np.mean(~path.found)),
                       mean_scale=1.0, mean_beta=1.0)


def rat_train_step(model, batch, attack_cfg, rat_cfg, sgd_state, streams):
    """
    One RAT iteration: a single PGD attack per benign point, m ARS samples each, mean soft cross-entropy
    over the n x m samples and one SGD step
    """
    x, y = batch
    path = pgd(model, x, y, attack_cfg, streams.attack)
    pairs = ars_sample(x, y, path, rat_cfg, streams.ars, model.num_classes)
    inputs = np.concatenate([perturbed.x_hat for perturbed, _ in pairs])
    targets = np.concatenate([label.probs for _, label in pairs])
    scales = np.concatenate([perturbed.scale for perturbed, _ in pairs])
    betas = np.concatenate([label.beta for _, label in pairs])
    clipped = np.concatenate([perturbed.clipped for perturbed, _ in pairs])
    if clipped.any():
        logger.debug('%d of %d region samples clipped to [0, 1]', int(clipped.sum()), len(clipped))
    loss = _fit(model, inputs, targets, sgd_state)
    return StepMetrics(loss=loss, n_samples=len(targets), pgd_fail_frac=float(np.mean(~path.found)),
                       mean_scale=float(np.mean(scales)), mean_beta=float(np.mean(betas)),
                       clipped_frac=float(np.mean(clipped)))
