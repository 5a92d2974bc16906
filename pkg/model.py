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
Minimal fully-connected classifier: dense layers, forward pass, exact reverse-mode gradients and the binary
checkpoint format used by training and evaluation.
"""

import logging
import os
import struct
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import tensorflow as tf

from scores_losses import soft_cross_entropy

logger = logging.getLogger(__name__)

DIVIDER = '-----------------------------------------'

ACTIVATIONS = {'relu': 0, 'identity': 1}
ACTIVATION_NAMES = {code: name for name, code in ACTIVATIONS.items()}

CHECKPOINT_MAGIC = b'RATCKPT1'


class DimensionError(ValueError):
    """Input or parameter shapes do not chain through the model"""


class CheckpointError(ValueError):
    """Checkpoint file is not a readable RATCKPT1 file"""


@dataclass
class DenseLayer:
    """Affine map followed by an optional ReLU. Weights are stored [out x in]."""
    weights: tf.Variable
    bias: tf.Variable
    activation: str = 'relu'

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError('activation should be one of %s, got %r' % (sorted(ACTIVATIONS), self.activation))
        if len(self.weights.shape) != 2 or len(self.bias.shape) != 1:
            raise DimensionError('weights must be 2-D and bias 1-D')
        if self.weights.shape[0] != self.bias.shape[0]:
            raise DimensionError('bias width %d does not match %d output units'
                                 % (self.bias.shape[0], self.weights.shape[0]))

    @property
    def in_width(self):
        return int(self.weights.shape[1])

    @property
    def out_width(self):
        return int(self.weights.shape[0])

    def __call__(self, inputs):
        outputs = tf.matmul(inputs, self.weights, transpose_b=True) + self.bias
        if self.activation == 'relu':
            outputs = tf.nn.relu(outputs)
        return outputs


class MlpModel:
    """Ordered stack of dense layers ending in raw logits."""

    def __init__(self, layers: List[DenseLayer]):
        if not layers:
            raise DimensionError('a model needs at least one layer')
        for i in range(1, len(layers)):
            if layers[i - 1].out_width != layers[i].in_width:
                raise DimensionError('layer %d outputs %d units but layer %d expects %d'
                                     % (i - 1, layers[i - 1].out_width, i, layers[i].in_width))
        if layers[-1].activation != 'identity':
            raise DimensionError('the last layer must produce raw logits (identity activation)')
        if layers[-1].out_width < 2:
            raise DimensionError('a classifier needs at least 2 classes')
        self.layers = list(layers)

    @property
    def num_classes(self):
        return self.layers[-1].out_width

    @property
    def input_width(self):
        return self.layers[0].in_width

    @property
    def widths(self):
        return [self.input_width] + [layer.out_width for layer in self.layers]

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    @property
    def trainable_variables(self):
        variables = []
        for layer in self.layers:
            variables.extend([layer.weights, layer.bias])
        return variables

    def get_weights(self):
        return [variable.numpy() for variable in self.trainable_variables]

    def copy(self):
        """Independent model with the same parameters"""
        return MlpModel([DenseLayer(tf.Variable(layer.weights), tf.Variable(layer.bias), layer.activation)
                         for layer in self.layers])

    def summary(self):
        lines = [DIVIDER, ' Layer   In   Out   Activation', DIVIDER]
        for i, layer in enumerate(self.layers):
            lines.append(' %-5d %5d %5d   %s' % (i, layer.in_width, layer.out_width, layer.activation))
        n_params = sum(int(np.prod(v.shape)) for v in self.trainable_variables)
        lines += [DIVIDER, ' Trainable params: %d' % n_params, DIVIDER]
        return '\n'.join(lines)


@dataclass
class GradientBundle:
    param_grads: List[Tuple[tf.Tensor, tf.Tensor]]
    input_grads: tf.Tensor
    loss: float

    def flat_param_grads(self):
        return [grad for pair in self.param_grads for grad in pair]


def get_model(widths, rng=None, seed=0, dtype=tf.float32):
    """
    @param widths: layer widths from input to logits, e.g. [2, 64, 64, 2]
    @param rng: numpy Generator for the initialization. A fresh one is built from seed when None
    @param seed: seed used when rng is None
    @param dtype: parameter dtype. float32 except for gradient checking
    @return: An MLP with ReLU hidden layers, He-normal weights and zero biases
    """
    if len(widths) < 2:
        raise DimensionError('widths should list at least the input width and the number of classes')
    if rng is None:
        rng = np.random.default_rng(seed)
    np_dtype = tf.as_dtype(dtype).as_numpy_dtype
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        weights = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)).astype(np_dtype)
        bias = np.zeros(fan_out, dtype=np_dtype)
        activation = 'identity' if i == len(widths) - 2 else 'relu'
        layers.append(DenseLayer(tf.Variable(weights), tf.Variable(bias), activation))
    return MlpModel(layers)


def as_batch(model, batch):
    """Convert a batch to a [n x d] tensor of the model dtype, checking its width"""
    if isinstance(batch, tf.Tensor):
        batch = tf.cast(batch, model.dtype)
    else:
        batch = tf.convert_to_tensor(np.asarray(batch, dtype=tf.as_dtype(model.dtype).as_numpy_dtype))
    if len(batch.shape) != 2:
        raise DimensionError('batch should be [n x d], got shape %s' % (batch.shape,))
    if batch.shape[1] != model.input_width:
        raise DimensionError('layer 0 expects %d input features, batch has %d'
                             % (model.input_width, batch.shape[1]))
    return batch


def forward(model, batch):
    """Logits [n x c] of a batch [n x d]"""
    outputs = as_batch(model, batch)
    for i, layer in enumerate(model.layers):
        if outputs.shape[1] != layer.in_width:
            raise DimensionError('layer %d expects %d features, got %d' % (i, layer.in_width, outputs.shape[1]))
        outputs = layer(outputs)
    return outputs


def predict(logits):
    """Predicted class per row; ties go to the lowest index"""
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise DimensionError('logits should be [n x c] with c >= 2, got shape %s' % (logits.shape,))
    return np.argmax(logits, axis=1)


def backward(model, batch, targets):
    """
    Exact gradients of the mean soft cross-entropy w.r.t. every parameter and every input coordinate
    @param targets: [n x c] rows of class probabilities
    @return: GradientBundle
    """
    inputs = as_batch(model, batch)
    with tf.GradientTape() as tape:
        tape.watch(inputs)
        loss = soft_cross_entropy(forward(model, inputs), targets)
    grads = tape.gradient(loss, model.trainable_variables + [inputs])
    param_grads = [(grads[2 * i], grads[2 * i + 1]) for i in range(len(model.layers))]
    return GradientBundle(param_grads=param_grads, input_grads=grads[-1], loss=float(loss))


def save_checkpoint(model, path):
    """
    Write the model as RATCKPT1: magic, layer count, (in, out, activation) per layer as little-endian uint32,
    then every layer's weights and bias as little-endian float32, row-major. The file is replaced atomically.
    """
    head_tail = os.path.split(path)
    if head_tail[0]:
        os.makedirs(head_tail[0], exist_ok=True)
    chunks = [CHECKPOINT_MAGIC, struct.pack('<I', len(model.layers))]
    for layer in model.layers:
        chunks.append(struct.pack('<III', layer.in_width, layer.out_width, ACTIVATIONS[layer.activation]))
    for layer in model.layers:
        chunks.append(np.ascontiguousarray(layer.weights.numpy(), dtype='<f4').tobytes())
        chunks.append(np.ascontiguousarray(layer.bias.numpy(), dtype='<f4').tobytes())
    tmp_path = path + '.tmp'
    with open(tmp_path, 'wb') as f:
        f.write(b''.join(chunks))
    os.replace(tmp_path, path)
    logger.debug('checkpoint written to %s', path)


def load_checkpoint(path):
    """Read a RATCKPT1 file back into a float32 MlpModel"""
    with open(path, 'rb') as f:
        data = f.read()
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError('%s: checkpoint version mismatch (expected magic %r, found %r)'
                              % (path, CHECKPOINT_MAGIC, data[:len(CHECKPOINT_MAGIC)]))
    offset = len(CHECKPOINT_MAGIC)
    try:
        n_layers, = struct.unpack_from('<I', data, offset)
        offset += 4
        shapes = []
        for _ in range(n_layers):
            shapes.append(struct.unpack_from('<III', data, offset))
            offset += 12
    except struct.error as e:
        raise CheckpointError('%s: truncated header (%s)' % (path, e))
    layers = []
    for in_width, out_width, code in shapes:
        if code not in ACTIVATION_NAMES:
            raise CheckpointError('%s: unknown activation code %d' % (path, code))
        n_weights = in_width * out_width
        end = offset + 4 * (n_weights + out_width)
        if end > len(data):
            raise CheckpointError('%s: truncated parameters' % path)
        weights = np.frombuffer(data, dtype='<f4', count=n_weights, offset=offset).reshape(out_width, in_width)
        bias = np.frombuffer(data, dtype='<f4', count=out_width, offset=offset + 4 * n_weights)
        offset = end
        layers.append(DenseLayer(tf.Variable(weights.astype(np.float32)), tf.Variable(bias.astype(np.float32)),
                                 ACTIVATION_NAMES[code]))
    if offset != len(data):
        raise CheckpointError('%s: %d trailing bytes' % (path, len(data) - offset))
    try:
        return MlpModel(layers)
    except DimensionError as e:
        raise CheckpointError('%s: %s' % (path, e))


if __name__ == '__main__':
    net = get_model([2, 64, 64, 2], seed=0)
    print(net.summary())
