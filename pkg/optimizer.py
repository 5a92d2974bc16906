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

"""SGD with momentum and coupled weight decay, plus the step-decay learning rate schedule"""

from dataclasses import dataclass, field
from typing import List

import numpy as np
import tensorflow as tf


class NonFiniteError(ArithmeticError):
    """A gradient or a loss is NaN or infinite"""


@dataclass
class SgdState:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 2e-4
    velocity: List[tf.Tensor] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError('learning_rate must be positive, got %r' % self.learning_rate)
        if not 0 <= self.momentum < 1:
            raise ValueError('momentum must be in [0, 1), got %r' % self.momentum)
        if self.weight_decay < 0:
            raise ValueError('weight_decay must be nonnegative, got %r' % self.weight_decay)


def sgd_step(model, grads, state):
    """
    v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v
    @param grads: GradientBundle from model.backward
    @return: the model, updated in place
    """
    variables = model.trainable_variables
    flat = grads.flat_param_grads()
    if len(flat) != len(variables):
        raise ValueError('%d gradients for %d parameters' % (len(flat), len(variables)))
    for i, (variable, grad) in enumerate(zip(variables, flat)):
        if tuple(grad.shape) != tuple(variable.shape):
            raise ValueError('gradient %d has shape %s, parameter has %s' % (i, grad.shape, variable.shape))
        if not np.all(np.isfinite(grad.numpy())):
            kind = 'weights' if i % 2 == 0 else 'bias'
            raise NonFiniteError('non-finite gradient for layer %d %s (loss %r)' % (i // 2, kind, grads.loss))
    velocity = state.velocity or [tf.zeros_like(variable) for variable in variables]
    new_velocity, new_values = [], []
    for i, (variable, grad) in enumerate(zip(variables, flat)):
        v = state.momentum * velocity[i] + (grad + state.weight_decay * variable)
        value = variable - state.learning_rate * v
        if not (np.all(np.isfinite(v.numpy())) and np.all(np.isfinite(value.numpy()))):
            kind = 'weights' if i % 2 == 0 else 'bias'
            raise NonFiniteError('update overflows layer %d %s (learning rate %r, loss %r)'
                                 % (i // 2, kind, state.learning_rate, grads.loss))
        new_velocity.append(v)
        new_values.append(value)
    # nothing is assigned unless every parameter stays finite
    for variable, value in zip(variables, new_values):
        variable.assign(value)
    state.velocity = new_velocity
    return model


def step_decay(learnrate, epoch, decay_epochs, factor=0.1):
    """
    Learning rate for a 0-based epoch: divided by 10 once for every decay epoch already reached
    """
    lr = learnrate
    for decay_epoch in decay_epochs:
        if epoch >= decay_epoch:
            lr *= factor
    return lr
