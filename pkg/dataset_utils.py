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

'''
Utility file to load and generate datasets and to manage the batch generator used for training
'''

import logging
import os
import struct
from dataclasses import dataclass

import numpy as np
from sklearn.datasets import make_blobs, make_moons
from sklearn.preprocessing import MinMaxScaler
from tensorflow import keras

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

SYNTHETIC_KINDS = ('two_moons', 'gaussian_blobs')

# synthetic coordinates are rescaled into this box so that epsilon-balls stay mostly inside [0, 1]
synthetic_range = (0.05, 0.95)


class IdxFormatError(ValueError):
    """File is not an IDX file of the expected kind"""


class IdxTruncatedError(IdxFormatError):
    """IDX payload is shorter than its header announces"""


class IdxCountMismatchError(IdxFormatError):
    """Images and labels files hold a different number of items"""


class EmptyDatasetError(ValueError):
    """Dataset with no samples"""


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = 'dataset'

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError('inputs should be [N x d], got shape %s' % (self.inputs.shape,))
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError('%d inputs for %d labels' % (self.inputs.shape[0], self.labels.shape[0]))
        if self.num_classes < 2:
            raise ValueError('num_classes must be >= 2, got %r' % self.num_classes)
        if self.inputs.size and (self.inputs.min() < 0 or self.inputs.max() > 1):
            raise ValueError('input values must lie in [0, 1]')
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError('labels must lie in [0, %d)' % self.num_classes)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def input_width(self):
        return self.inputs.shape[1]

    def take(self, indices, name=None):
        return Dataset(self.inputs[indices], self.labels[indices], self.num_classes, name or self.name)


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = 'two_moons'
    n_samples: int = 1000
    noise_std: float = 0.1
    n_classes: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ValueError('kind should be one of %s, got %r' % (SYNTHETIC_KINDS, self.kind))
        if self.n_samples <= 0:
            raise ValueError('n_samples must be positive')
        if self.noise_std < 0:
            raise ValueError('noise_std must be nonnegative')
        if self.kind == 'gaussian_blobs' and self.n_classes < 2:
            raise ValueError('gaussian_blobs needs at least 2 classes')


def _parse_idx(data, expected_magic, source):
    """
    @return: (dims, payload) of an unsigned-byte IDX buffer
    """
    if len(data) < 4:
        raise IdxTruncatedError('%s: missing magic number' % source)
    magic, = struct.unpack('>I', data[:4])
    if magic != expected_magic:
        raise IdxFormatError('%s: magic number 0x%08x, expected 0x%08x' % (source, magic, expected_magic))
    n_dims = magic & 0xFF
    header_end = 4 + 4 * n_dims
    if len(data) < header_end:
        raise IdxTruncatedError('%s: truncated header' % source)
    dims = struct.unpack('>%dI' % n_dims, data[4:header_end])
    n_values = int(np.prod(dims))
    if len(data) - header_end < n_values:
        raise IdxTruncatedError('%s: %d bytes of data, header announces %d'
                                % (source, len(data) - header_end, n_values))
    payload = np.frombuffer(data, dtype=np.uint8, count=n_values, offset=header_end)
    return dims, payload


def parse_idx(images_data, labels_data, num_classes=None, name='idx'):
    """Build a Dataset from in-memory IDX images (0x803) and labels (0x801) buffers"""
    dims, pixels = _parse_idx(images_data, IDX_IMAGES_MAGIC, name + ' images')
    label_dims, labels = _parse_idx(labels_data, IDX_LABELS_MAGIC, name + ' labels')
    if dims[0] != label_dims[0]:
        raise IdxCountMismatchError('%s: %d images but %d labels' % (name, dims[0], label_dims[0]))
    n_items = dims[0]
    inputs = pixels.reshape(n_items, -1).astype(np.float32) / np.float32(255.0)
    labels = labels.astype(np.int64)
    if num_classes is None:
        num_classes = max(int(labels.max()) + 1 if labels.size else 2, 2)
    return Dataset(inputs, labels, num_classes, name)


def load_idx(images_path, labels_path, num_classes=None, name=None):
    """
    @param images_path: IDX images file, pixels scaled by 1/255 and flattened row-major
    @param labels_path: IDX labels file
    @param num_classes: number of classes. Inferred from the labels when None
    @return: Dataset
    """
    with open(images_path, 'rb') as f:
        images_data = f.read()
    with open(labels_path, 'rb') as f:
        labels_data = f.read()
    name = name or os.path.basename(images_path)
    dataset = parse_idx(images_data, labels_data, num_classes, name)
    logger.info('loaded %d samples of width %d from %s', len(dataset), dataset.input_width, images_path)
    return dataset


def gen_synthetic(spec):
    """Two moons or Gaussian blobs in 2-D, rescaled into synthetic_range; deterministic given spec.seed"""
    if spec.kind == 'two_moons':
        points, labels = make_moons(n_samples=spec.n_samples, noise=spec.noise_std, random_state=spec.seed)
        num_classes = 2
    else:
        points, labels = make_blobs(n_samples=spec.n_samples, centers=spec.n_classes, n_features=2,
                                    cluster_std=spec.noise_std, random_state=spec.seed)
        num_classes = spec.n_classes
    points = MinMaxScaler(feature_range=synthetic_range).fit_transform(points)
    return Dataset(np.clip(points, 0.0, 1.0), labels, num_classes, spec.kind)


class DataGen(keras.utils.Sequence):
    """Helper to iterate over one epoch of shuffled batches (as Numpy arrays)."""

    def __init__(self, dataset, batch_size, seed=0, epoch=0):
        super().__init__()
        if batch_size < 1:
            raise ValueError('batch_size must be >= 1, got %r' % batch_size)
        self.dataset = dataset
        self.batch_size = batch_size
        self.indices = np.random.default_rng([seed, epoch]).permutation(len(dataset))

    def __len__(self):
        return -(-len(self.dataset) // self.batch_size)  # partial last batch kept

    def __getitem__(self, idx):
        """Returns tuple (input, target) correspond to batch #idx."""
        if not 0 <= idx < len(self):
            raise IndexError('batch %d out of range' % idx)
        batch_indices = self.indices[idx * self.batch_size:(idx + 1) * self.batch_size]
        return self.dataset.inputs[batch_indices], self.dataset.labels[batch_indices]

    def __iter__(self):
        for idx in range(len(self)):
            yield self[idx]


def batches(dataset, batch_size, seed, epoch):
    return DataGen(dataset, batch_size, seed, epoch)


def train_test_split(dataset, test_fraction, seed):
    """Seeded shuffle, the last test_fraction of the samples becomes the test set"""
    if not 0 < test_fraction < 1:
        raise ValueError('test_fraction must be in (0, 1)')
    order = np.random.default_rng(seed).permutation(len(dataset))
    if len(dataset) < 2:
        raise EmptyDatasetError('need at least 2 samples to split, got %d' % len(dataset))
    test_samples = min(max(int(round(len(dataset) * test_fraction)), 1), len(dataset) - 1)
    return (dataset.take(order[:-test_samples], dataset.name + '-train'),
            dataset.take(order[-test_samples:], dataset.name + '-test'))


def subset(dataset, n_samples, seed):
    """Seeded random subset of at most n_samples samples, original order kept"""
    if n_samples is None or n_samples >= len(dataset):
        return dataset
    chosen = np.sort(np.random.default_rng(seed).choice(len(dataset), size=n_samples, replace=False))
    return dataset.take(chosen)


def get_datasets(section, seed):
    """
    Return the train and test sets described by a dataset config section
    @param section: config.DatasetSection
    @param seed: seed of the data stream (synthetic generation, splits, subsets)
    @return: (train, test)
    """
    if section.kind == 'idx':
        train = load_idx(section.train_images, section.train_labels, section.num_classes, 'idx-train')
        test = load_idx(section.test_images, section.test_labels, section.num_classes, 'idx-test')
        if train.num_classes != test.num_classes:
            num_classes = max(train.num_classes, test.num_classes)
            train = Dataset(train.inputs, train.labels, num_classes, train.name)
            test = Dataset(test.inputs, test.labels, num_classes, test.name)
    else:
        spec = SyntheticSpec(section.kind, section.n_samples, section.noise_std, section.n_classes, seed)
        train, test = train_test_split(gen_synthetic(spec), section.test_fraction, seed)
    train = subset(train, section.max_train, seed)
    test = subset(test, section.max_test, seed + 1)
    if len(train) == 0 or len(test) == 0:
        raise EmptyDatasetError('empty train or test set')
    return train, test
