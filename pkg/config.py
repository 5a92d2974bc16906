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
Experiment configuration: a JSON document with one object per section. Every problem found while parsing is
collected and reported at once. The resolved configuration is echoed next to the run outputs and parses back
to an equal ExperimentConfig.

{
  "method": "rat",                  st | sat | rat
  "seed": 0,                        unsigned 64-bit master seed
  "dataset":   {"kind": "two_moons", "n_samples": 1000, "noise_std": 0.1, "test_fraction": 0.2, ...},
  "model":     {"hidden_widths": [64, 64], "num_classes": 2},
  "optimizer": {"learning_rate": 0.1, "epochs": 100, "batch_size": 128, "momentum": 0.9,
                "weight_decay": 0.0002, "lr_decay_epochs": [50, 75]},
  "attack":    {"epsilon": 0.1, "alpha": 0.025, "iterations": 10, "random_start": true},
  "rat":       {"scales": {"start": 0.0, "stop": 2.0, "step": 0.1}, "samples": 2,
                "beta_max": 1.0, "beta_min": 0.1},
  "eval":      {...},
  "run":       {"wall_clock": false, "eval_samples": 500}
}
"""

import dataclasses
import json
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from attacks import AttackConfig
from rat_core import RatConfig

METHODS = ('st', 'sat', 'rat')
DATASET_KINDS = ('two_moons', 'gaussian_blobs', 'idx')

# independent random streams fanned out of the master seed
STREAMS = {'init': 0, 'shuffle': 1, 'attack': 2, 'ars': 3, 'eval': 4, 'data': 5}

_REQUIRED = object()


class ConfigError(ValueError):
    """Invalid experiment configuration; errors lists every problem found"""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__('invalid configuration:\n  ' + '\n  '.join(self.errors))


def scale_grid(start, stop, step):
    """Inclusive grid start, start + step, ..., stop rounded to 10 decimals. stop must be reached exactly"""
    if step <= 0 or stop < start:
        raise ValueError('grid needs step > 0 and stop >= start')
    ratio = (stop - start) / step
    n_steps = int(round(ratio))
    if abs(ratio - n_steps) > 1e-9:
        raise ValueError('stop - start (%r) is not a multiple of step (%r)' % (stop - start, step))
    return [round(start + i * step, 10) for i in range(n_steps + 1)]


@dataclass
class DatasetSection:
    kind: str = _REQUIRED
    n_samples: int = 1000
    noise_std: float = 0.1
    n_classes: int = 2
    test_fraction: float = 0.2
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    num_classes: Optional[int] = None
    max_train: Optional[int] = None
    max_test: Optional[int] = None


@dataclass
class ModelSection:
    hidden_widths: List[int] = _REQUIRED
    num_classes: int = _REQUIRED


@dataclass
class OptimizerSection:
    learning_rate: float = _REQUIRED
    epochs: int = _REQUIRED
    batch_size: int = _REQUIRED
    momentum: float = 0.9
    weight_decay: float = 2e-4
    lr_decay_epochs: Optional[List[int]] = None


@dataclass
class AttackSection:
    epsilon: float = _REQUIRED
    alpha: float = _REQUIRED
    iterations: int = _REQUIRED
    random_start: bool = True


@dataclass
class RatSection:
    scales: List[float] = _REQUIRED
    samples: int = 2
    beta_max: float = 1.0
    beta_min: float = 0.1
    collapse_to_end: bool = False


@dataclass
class EvalSection:
    batch_size: int = 256
    max_samples: Optional[int] = None
    pgd_iterations: int = 20
    probe_lambda: float = 0.5
    probe_scales: List[float] = field(default_factory=lambda: scale_grid(0.0, 2.0, 0.1))
    sweep_iterations: List[int] = field(default_factory=lambda: [0, 1, 5, 10, 20, 50, 100])
    sweep_epsilons: List[float] = field(default_factory=lambda: [0.0, 0.05, 0.1, 0.15, 0.2])
    tolerance: float = 0.01


@dataclass
class RunSection:
    wall_clock: bool = False
    eval_samples: Optional[int] = 500


@dataclass
class ExperimentConfig:
    method: str
    seed: int
    dataset: DatasetSection
    model: ModelSection
    optimizer: OptimizerSection
    attack: AttackSection
    rat: Optional[RatSection] = None
    eval: EvalSection = field(default_factory=EvalSection)
    run: RunSection = field(default_factory=RunSection)

    def attack_config(self):
        return AttackConfig(self.attack.epsilon, self.attack.alpha, self.attack.iterations,
                            self.attack.random_start)

    def rat_config(self):
        return RatConfig(scale_set=tuple(self.rat.scales), samples_per_point=self.rat.samples,
                         beta_max=self.rat.beta_max, beta_min=self.rat.beta_min,
                         collapse_to_end=self.rat.collapse_to_end)

    def widths(self, input_width):
        return [input_width] + list(self.model.hidden_widths) + [self.model.num_classes]


def stream_seed(seed, stream):
    """32-bit seed of a named stream, derived from the master seed by its stream counter"""
    sequence = np.random.SeedSequence(seed, spawn_key=(STREAMS[stream],))
    return int(sequence.generate_state(1)[0])


def stream_rng(seed, stream):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(STREAMS[stream],)))


def _is_int(value):
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value):
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_type(name, value, annotation, errors):
    """Coerce a JSON value to the annotated field type, recording a message on mismatch"""
    optional = annotation in (Optional[int], Optional[str], Optional[List[int]])
    if value is None:
        if not optional:
            errors.append('%s must not be null' % name)
        return value
    base = {Optional[int]: int, Optional[str]: str, Optional[List[int]]: List[int]}.get(annotation, annotation)
    if base is int and _is_int(value):
        return value
    if base is float and _is_number(value):
        return float(value)
    if base is bool and isinstance(value, bool):
        return value
    if base is str and isinstance(value, str):
        return value
    if base == List[int] and isinstance(value, list) and all(_is_int(v) for v in value):
        return list(value)
    if base == List[float] and isinstance(value, list) and all(_is_number(v) for v in value):
        return [float(v) for v in value]
    errors.append('%s: expected %s, got %r' % (name, getattr(base, '__name__', str(base)), value))
    return value


def _parse_section(raw, name, cls, errors, special=None):
    if not isinstance(raw, dict):
        errors.append('%s: expected an object' % name)
        return None
    special = special or {}
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key in sorted(set(raw) - set(known)):
        errors.append('%s.%s: unknown key' % (name, key))
    values = {}
    for key, f in known.items():
        if key not in raw:
            if f.default is _REQUIRED:
                errors.append('%s.%s: missing required key' % (name, key))
            continue
        if key in special:
            values[key] = special[key](raw[key], '%s.%s' % (name, key), errors)
        else:
            values[key] = _check_type('%s.%s' % (name, key), raw[key], f.type, errors)
    missing = [f.name for f in known.values() if f.default is _REQUIRED and f.name not in values]
    if missing:
        return None
    return cls(**values)


def _parse_scales(value, name, errors):
    if isinstance(value, dict):
        unknown = sorted(set(value) - {'start', 'stop', 'step'})
        missing = sorted({'start', 'stop', 'step'} - set(value))
        for key in unknown:
            errors.append('%s.%s: unknown key' % (name, key))
        for key in missing:
            errors.append('%s.%s: missing required key' % (name, key))
        if unknown or missing:
            return []
        if not all(_is_number(value[key]) for key in ('start', 'stop', 'step')):
            errors.append('%s: start, stop and step must be numbers' % name)
            return []
        try:
            return scale_grid(float(value['start']), float(value['stop']), float(value['step']))
        except ValueError as e:
            errors.append('%s: %s' % (name, e))
            return []
    return _check_type(name, value, List[float], errors)


def _validate(cfg, errors):
    if cfg.method not in METHODS:
        errors.append('method should be one of %s, got %r' % (METHODS, cfg.method))
    if not _is_int(cfg.seed) or not 0 <= cfg.seed < 2 ** 64:
        errors.append('seed must be an unsigned 64-bit integer, got %r' % (cfg.seed,))
    data = cfg.dataset
    if data is not None:
        if data.kind not in DATASET_KINDS:
            errors.append('dataset.kind should be one of %s, got %r' % (DATASET_KINDS, data.kind))
        elif data.kind == 'idx':
            for key in ('train_images', 'train_labels', 'test_images', 'test_labels'):
                if getattr(data, key) is None:
                    errors.append('dataset.%s: required when dataset.kind is idx' % key)
        else:
            if data.n_samples <= 1:
                errors.append('dataset.n_samples must be > 1')
            if data.noise_std < 0:
                errors.append('dataset.noise_std must be >= 0')
            if not 0 < data.test_fraction < 1:
                errors.append('dataset.test_fraction must be in (0, 1)')
    if cfg.model is not None:
        if any(w < 1 for w in cfg.model.hidden_widths):
            errors.append('model.hidden_widths must be positive')
        if cfg.model.num_classes < 2:
            errors.append('model.num_classes must be >= 2')
    opt = cfg.optimizer
    if opt is not None:
        if opt.learning_rate <= 0:
            errors.append('optimizer.learning_rate must be > 0')
        if not 0 <= opt.momentum < 1:
            errors.append('optimizer.momentum must be in [0, 1)')
        if opt.weight_decay < 0:
            errors.append('optimizer.weight_decay must be >= 0')
        if opt.epochs < 1:
            errors.append('optimizer.epochs must be >= 1')
        if opt.batch_size < 1:
            errors.append('optimizer.batch_size must be >= 1')
        if opt.lr_decay_epochs is None and opt.epochs >= 1:
            opt.lr_decay_epochs = sorted({opt.epochs // 2, (3 * opt.epochs) // 4} - {0})
        decay = opt.lr_decay_epochs or []
        if any(b <= a for a, b in zip(decay[:-1], decay[1:])):
            errors.append('optimizer.lr_decay_epochs must be strictly increasing')
        if any(e < 0 or e >= opt.epochs for e in decay):
            errors.append('optimizer.lr_decay_epochs must lie in [0, epochs)')
    att = cfg.attack
    if att is not None:
        if att.epsilon < 0:
            errors.append('attack.epsilon must be >= 0')
        if att.alpha <= 0:
            errors.append('attack.alpha must be > 0')
        if att.iterations < 1:
            errors.append('attack.iterations must be >= 1')
    rat = cfg.rat
    if cfg.method == 'rat' and rat is None:
        errors.append('rat: section required when method is rat')
    if rat is not None:
        scales = rat.scales or []
        if not scales:
            errors.append('rat.scales must not be empty')
        elif any(b <= a for a, b in zip(scales[:-1], scales[1:])) or scales[0] < 0:
            errors.append('rat.scales must be ascending and >= 0')
        if rat.samples < 1:
            errors.append('rat.samples must be >= 1')
        if not 0 < rat.beta_max <= 1:
            errors.append('rat.beta_max must be in (0, 1]')
        if rat.beta_min < 0:
            errors.append('rat.beta_min must be >= 0')
        if rat.beta_min > rat.beta_max:
            errors.append('rat.beta_min (%r) must not exceed rat.beta_max (%r)' % (rat.beta_min, rat.beta_max))
    ev = cfg.eval
    if ev.batch_size < 1:
        errors.append('eval.batch_size must be >= 1')
    if ev.pgd_iterations < 1:
        errors.append('eval.pgd_iterations must be >= 1')
    if not 0 <= ev.probe_lambda <= 1:
        errors.append('eval.probe_lambda must be in [0, 1]')


def config_from_dict(raw):
    errors = []
    if not isinstance(raw, dict):
        raise ConfigError(['configuration must be a JSON object'])
    sections = {'dataset': DatasetSection, 'model': ModelSection, 'optimizer': OptimizerSection,
                'attack': AttackSection, 'rat': RatSection, 'eval': EvalSection, 'run': RunSection}
    for key in sorted(set(raw) - set(sections) - {'method', 'seed'}):
        errors.append('%s: unknown key' % key)
    for key in ('method', 'dataset', 'model', 'optimizer', 'attack'):
        if key not in raw:
            errors.append('%s: missing required key' % key)
    parsed = {}
    for key, cls in sections.items():
        if key in raw:
            special = {'scales': _parse_scales} if key == 'rat' else None
            if key == 'eval':
                special = {'probe_scales': _parse_scales}
            parsed[key] = _parse_section(raw[key], key, cls, errors, special)
    cfg = ExperimentConfig(method=raw.get('method'), seed=raw.get('seed', 0),
                           dataset=parsed.get('dataset'), model=parsed.get('model'),
                           optimizer=parsed.get('optimizer'), attack=parsed.get('attack'),
                           rat=parsed.get('rat'),
                           eval=parsed.get('eval') or EvalSection(), run=parsed.get('run') or RunSection())
    if not errors:
        _validate(cfg, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_config(path, seed=None):
    """
    @param path: JSON configuration file
    @param seed: master seed overriding the file's
    @return: validated ExperimentConfig
    """
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(['%s: not valid JSON (%s)' % (path, e)])
    if seed is not None and isinstance(raw, dict):
        raw['seed'] = seed
    return config_from_dict(raw)


def config_to_dict(cfg):
    """Resolved configuration: explicit scale lists, decay epochs and seed"""
    raw = dataclasses.asdict(cfg)
    if raw['rat'] is None:
        del raw['rat']
    return raw


def write_config(cfg, path):
    with open(path, 'w') as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write('\n')
