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
Command line entry point

    python main.py train       --config configs/two_moons_rat.json --out build/rat
    python main.py eval        --config configs/two_moons_rat.json --out build/rat --checkpoint build/rat/final.ckpt
    python main.py sweep       ... --axis pgd_iterations --values 0 1 10 20
    python main.py probe       ... --sample-index 3
    python main.py gaps        ...
    python main.py obfuscation ...

Exit codes: 0 success, 2 configuration error, 3 runtime or numeric error.
"""

import argparse
import logging
import sys

from tf_setup import DIVIDER, configure_tensorflow

import tensorflow as tf

from config import ConfigError, parse_config
from evaluate import cmd_eval, cmd_gaps, cmd_obfuscation, cmd_probe, cmd_sweep
from model import CheckpointError
from train import cmd_train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

COMMANDS = ('train', 'eval', 'sweep', 'probe', 'gaps', 'obfuscation')


def build_parser():
    ap = argparse.ArgumentParser(description='Regional adversarial training on small datasets')
    sub = ap.add_subparsers(dest='command', required=True)
    for name in COMMANDS:
        cp = sub.add_parser(name)
        cp.add_argument('-c', '--config', type=str, required=True, help='Path of the JSON experiment configuration')
        cp.add_argument('-o', '--out', type=str, required=True, help='Output directory for CSV files and checkpoints')
        cp.add_argument('-s', '--seed', type=int, default=None,
                        help='Master seed overriding the configuration. Must be an unsigned 64-bit integer')
        cp.add_argument('-t', '--threads', type=int, default=None,
                        help='Number of TensorFlow intra-op threads. Default is the TensorFlow default')
        if name != 'train':
            cp.add_argument('-m', '--checkpoint', type=str, required=True, help='Checkpoint (.ckpt) to evaluate')
        if name == 'sweep':
            cp.add_argument('-a', '--axis', choices=('pgd_iterations', 'pgd_epsilon'), required=True,
                            help='Swept attack parameter')
            cp.add_argument('-v', '--values', type=float, nargs='+', default=None,
                            help='Swept values. Default is the eval section of the configuration')
        if name == 'probe':
            cp.add_argument('-i', '--sample-index', type=int, default=0,
                            help='Index of the probed sample in the evaluation set. Default is 0')
    return ap


def run(args):
    cfg = parse_config(args.config, seed=args.seed)
    if args.command == 'train':
        cmd_train(cfg, args.out)
    elif args.command == 'eval':
        cmd_eval(args.checkpoint, cfg, args.out)
    elif args.command == 'sweep':
        cmd_sweep(args.checkpoint, cfg, args.axis, args.values, args.out)
    elif args.command == 'probe':
        cmd_probe(args.checkpoint, cfg, args.sample_index, args.out)
    elif args.command == 'gaps':
        cmd_gaps(args.checkpoint, cfg, args.out)
    elif args.command == 'obfuscation':
        cmd_obfuscation(args.checkpoint, cfg, args.out)


def run_main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format='%(asctime)s %(name)s %(levelname)s: %(message)s')
    if args.threads is not None and args.threads < 1:
        print('--threads must be >= 1', file=sys.stderr)
        return EXIT_CONFIG
    configure_tensorflow(args.threads)

    print('\n' + DIVIDER)
    print('TensorFlow version : ', tf.__version__)
    print(sys.version)
    print(DIVIDER)
    print(' Command line options:')
    print('command      : ', args.command)
    print('--config     : ', args.config)
    print('--out        : ', args.out)
    print('--seed       : ', args.seed)
    print('--threads    : ', args.threads)
    for key in ('checkpoint', 'axis', 'values', 'sample_index'):
        if hasattr(args, key):
            print('--%-10s : ' % key.replace('_', '-'), getattr(args, key))
    print(DIVIDER)

    try:
        run(args)
    except ConfigError as e:
        print(e, file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ArithmeticError, CheckpointError, ValueError, IndexError) as e:
        logging.getLogger(__name__).error('%s: %s', type(e).__name__, e)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(run_main())
