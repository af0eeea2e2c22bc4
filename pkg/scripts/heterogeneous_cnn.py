"""Reduced CNN with mixed strategies: Latency conv layers, Resource dense layers.

Latency layers contribute [1, 0] unstructured items, BRAM-aware Resource
layers contribute [2, 1] items at 18 bits, so one multidimensional knapsack
trades DSP against BRAM across the whole network.

Images are either an IDX pair (e.g. a Fashion-MNIST subset) or a seeded
synthetic set of noisy class templates.

Usage: python scripts/heterogeneous_cnn.py [--idx-images F --idx-labels F] [--target-dsp S --target-bram S]
"""

import argparse
import logging
import time

import numpy as np

from hwprune.data_io import Dataset, load_idx
from hwprune.hw import HardwareConfig, LayerHwConfig
from hwprune.nn import FixedPointFormat, TrainConfig, evaluate, fit, small_cnn
from hwprune.pruner import PruningConfig, SparsitySchedule, run_pruning
from hwprune.structures import network_groups


def synthetic_images(seed, n, size=12, n_classes=10, noise=0.35):
    rng = np.random.default_rng(seed)
    templates = (rng.random((n_classes, size, size)) > 0.6).astype(float)
    labels = rng.integers(0, n_classes, n)
    images = templates[labels] + noise * rng.standard_normal((n, size, size))
    shift = rng.integers(-1, 2, (n, 2))
    for k in range(n):  # small random translations
        images[k] = np.roll(images[k], tuple(shift[k]), axis=(0, 1))
    return Dataset(np.clip(images, 0, 1)[..., None], labels, n_classes)


def crop(data, size):
    h = data.features.shape[1]
    o = (h - size) // 2
    return Dataset(data.features[:, o : o + size, o : o + size], data.labels, data.class_count)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--idx-images")
    ap.add_argument("--idx-labels")
    ap.add_argument("--samples", type=int, default=4000)
    ap.add_argument("--size", type=int, default=12, help="image side after central crop")
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--finetune-epochs", type=int, default=3)
    ap.add_argument("--target-dsp", type=float, default=0.5)
    ap.add_argument("--target-bram", type=float, default=0.5)
    ap.add_argument("--step", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    if args.idx_images:
        data = load_idx(args.idx_images, args.idx_labels)
        data = crop(data.subset(np.arange(min(args.samples, len(data)))), args.size)
    else:
        data = synthetic_images(args.seed, args.samples, size=args.size)
    train, val = data.split(0.25, seed=args.seed)

    net = small_cnn(data.features.shape[1:], channels=(4, 8), hidden=(32,), n_classes=data.class_count, seed=args.seed)
    t0 = time.perf_counter()
    fit(net, train.features, train.labels, TrainConfig(epochs=args.epochs, lam=0.0, seed=args.seed))
    print(f"trained CNN ({net.n_params()} parameters) in {time.perf_counter() - t0:.1f} s: "
          f"val accuracy {evaluate(net, val):.4f}")

    p18 = FixedPointFormat(18, 8)
    latency = LayerHwConfig(strategy="Latency", granularity="unstructured", precision=p18)
    layers = {}
    for _, layer in net.trainable_layers():
        if layer.kind == "conv2d":
            layers[layer.name] = latency
        else:
            layers[layer.name] = LayerHwConfig(reuse_factor=8, precision=p18, granularity="bram_aware")
    hw = HardwareConfig(layers=layers)
    kinds = {}
    for g in network_groups(net, hw):
        kinds[g.resource.as_tuple()] = kinds.get(g.resource.as_tuple(), 0) + 1
    print("group resource vectors:", {str(list(k)): v for k, v in sorted(kinds.items())})

    target = (args.target_dsp, args.target_bram)
    cfg = PruningConfig(
        target=target,
        tolerance=0.98,
        schedule=SparsitySchedule(tuple(args.step if t > 0 else 0.0 for t in target)),
        train=TrainConfig(epochs=args.finetune_epochs, lam=1e-4, seed=args.seed),
        time_limit=10.0,
    )
    t0 = time.perf_counter()
    result = run_pruning(net, train, val, hw, cfg)
    rep = result.report
    print(f"pruning took {time.perf_counter() - t0:.1f} s")
    for rec in rep["iterations"]:
        print(f"  s={rec['sparsity']} caps={rec['capacities']} used={rec['used']} "
              f"acc={rec['accuracy']:.4f} optimal={rec['proven_optimal']}")
    for k in ("dsp", "bram"):
        print(f"{k.upper():>5}: {rep['baseline'][k]} -> {rep['pruned'][k]} {rep['reduction_factors'][k]}")
    print(f"accuracy {rep['baseline_accuracy']:.4f} -> {rep['final_accuracy']:.4f}")


if __name__ == "__main__":
    main()
