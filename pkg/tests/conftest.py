import json
import struct

import numpy as np
import pytest
import tensorflow as tf

from tf_setup import configure_tensorflow
from model import DenseLayer, MlpModel

configure_tensorflow(threads=1)


def dense(weights, bias, activation='identity', dtype=np.float32):
    return DenseLayer(tf.Variable(np.asarray(weights, dtype=dtype)), tf.Variable(np.asarray(bias, dtype=dtype)),
                      activation)


def linear_model(dtype=np.float32):
    """2-D, 2-class linear model whose cross-entropy input gradient for label 0 is positive everywhere"""
    return MlpModel([dense([[-1.0, -1.0], [1.0, 1.0]], [0.0, 0.0], dtype=dtype)])


def encode_idx(array, magic):
    array = np.asarray(array, dtype=np.uint8)
    return struct.pack('>I', magic) + struct.pack('>%dI' % array.ndim, *array.shape) + array.tobytes()


def small_config(**overrides):
    raw = {
        'method': 'rat',
        'seed': 7,
        'dataset': {'kind': 'two_moons', 'n_samples': 100, 'noise_std': 0.1, 'test_fraction': 0.2},
        'model': {'hidden_widths': [8], 'num_classes': 2},
        'optimizer': {'learning_rate': 0.05, 'epochs': 1, 'batch_size': 32},
        'attack': {'epsilon': 0.1, 'alpha': 0.05, 'iterations': 3, 'random_start': True},
        'rat': {'scales': {'start': 0.0, 'stop': 2.0, 'step': 0.5}, 'samples': 2, 'beta_max': 1.0,
                'beta_min': 0.1},
        'eval': {'batch_size': 64, 'pgd_iterations': 3, 'probe_scales': [0.0, 0.5, 1.0, 1.5, 2.0],
                 'sweep_iterations': [0, 1, 3], 'sweep_epsilons': [0.0, 0.05, 0.1]},
        'run': {'eval_samples': 20},
    }
    for key, value in overrides.items():
        if value is None:
            raw.pop(key, None)
        elif isinstance(value, dict) and isinstance(raw.get(key), dict):
            raw[key] = {**raw[key], **value}
        else:
            raw[key] = value
    return raw


@pytest.fixture
def write_config(tmp_path):
    def _write(raw, name='config.json'):
        path = tmp_path / name
        path.write_text(json.dumps(raw))
        return str(path)
    return _write
