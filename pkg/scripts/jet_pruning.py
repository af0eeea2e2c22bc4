"""Resource-aware pruning of the jet-like MLP on the synthetic 16-feature task.

Runs two experiments from one pre-trained model:

* DSP-aware: RF=4, 16-bit weights, target DSP sparsity only.
* Multi-dimensional: BRAM-aware groups with 18-bit weights (C=2), joint
  DSP and BRAM targets.

Usage: python scripts/jet_pruning.py [--target S] [--finetune-epochs E] [--out DIR]
"""

import argparse
import logging
import time
from pathlib import Path

from hwprune.data_io import synth_classify, write_json
from hwprune.hw import HardwareConfig
from hwprune.nn import FixedPointFormat, TrainConfig, evaluate, fit, jet_mlp, quantize_network
from hwprune.pruner import PruningConfig, SparsitySchedule, run_pruning


def experiment(name, net, train, val, hw, target, step, args):
    cfg = PruningConfig(
        target=target,
        tolerance=0.98,
        schedule=SparsitySchedule(step),
        train=TrainConfig(epochs=args.finetune_epochs, lam=args.lam, seed=args.seed),
    )
    t0 = time.perf_counter()
    result = run_pruning(net, train, val, hw, cfg)
    rep = result.report
    precision = hw.for_layer("fc1").precision
    q_acc = evaluate(quantize_network(result.net, precision), val)
    print(f"\n== {name} ({time.perf_counter() - t0:.1f} s, {len(rep['iterations'])} iterations)")
    print(f"{'iter':>4} {'s_dsp':>6} {'s_bram':>6} {'used':>12} {'acc':>7}")
    for rec in rep["iterations"]:
        mark = "" if rec["within_tolerance"] else "  (below tolerance)"
        print(f"{rec['iteration']:>4} {rec['sparsity'][0]:>6.2f} {rec['sparsity'][1]:>6.2f} "
              f"{str(rec['used']):>12} {rec['accuracy']:>7.4f}{mark}")
    for k in ("dsp", "bram"):
        print(f"{k.upper():>5}: {rep['baseline'][k]} -> {rep['pruned'][k]} {rep['reduction_factors'][k]}")
    print(f"accuracy {rep['baseline_accuracy']:.4f} -> {rep['final_accuracy']:.4f} "
          f"(fixed point {precision.total},{precision.integer}: {q_acc:.4f})")
    if args.out:
        write_json(Path(args.out) / f"{name}.json", rep)
    return rep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=20000)
    ap.add_argument("--separation", type=float, default=1.0)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--finetune-epochs", type=int, default=10)
    ap.add_argument("--lam", type=float, default=1e-4)
    ap.add_argument("--target", type=float, default=0.5, help="sparsity target per constrained resource")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="directory for JSON reports")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)

    train, val = synth_classify(args.seed, args.samples, separation=args.separation).split(0.25, seed=args.seed)
    net = jet_mlp(seed=args.seed)
    fit(net, train.features, train.labels, TrainConfig(epochs=args.epochs, lam=0.0, seed=args.seed))
    print(f"trained jet MLP ({net.n_params()} parameters): val accuracy {evaluate(net, val):.4f}")

    dsp_hw = HardwareConfig.uniform(reuse_factor=4, precision=FixedPointFormat(16, 6), granularity="dsp_aware")
    experiment("dsp_aware", net, train, val, dsp_hw, (args.target, 0.0), (0.05, 0.0), args)

    md_hw = HardwareConfig.uniform(reuse_factor=4, precision=FixedPointFormat(18, 8), granularity="bram_aware")
    experiment("multidimensional", net, train, val, md_hw, (args.target, args.target), (0.05, 0.05), args)


if __name__ == "__main__":
    main()
