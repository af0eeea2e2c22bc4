"""Command-line interface: ``hwprune {train,prune,estimate,codegen,eval}``.

Settings resolve as defaults < ``--config`` JSON file < command-line flags.
Exit codes: 0 success, 1 usage / config, 2 data / format, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hwprune import codegen, hw
from hwprune.data_io import (
    Dataset,
    dumps,
    load_csv,
    load_hw_config,
    load_idx,
    load_model,
    read_json,
    save_model,
    synth_classify,
    write_json,
)
from hwprune.errors import FormatError, HwPruneError, UsageError
from hwprune.hw import RESOURCE_NAMES, BRAM_WIDTH, LayerHwConfig
from hwprune.nn import FixedPointFormat, TrainConfig, evaluate, fit, mlp, small_cnn
from hwprune.pruner import (
    PruningConfig,
    PruningDiverged,
    SparsitySchedule,
    run_pruning,
)

log = logging.getLogger("hwprune")


@dataclass
class RunConfig:
    # data
    data: str | None = None
    label_column: str = "label"
    idx_images: str | None = None
    idx_labels: str | None = None
    synthetic: bool = False
    samples: int = 20000
    separation: float = 1.0
    features: int = 16
    classes: int = 5
    val_fraction: float = 0.25
    # files
    model: str | None = None
    hwcfg: str | None = None
    output: str | None = None
    report: str | None = None
    outdir: str | None = None
    # architecture
    arch: str = "mlp"
    hidden: str = "64,32,32"
    # training
    epochs: int = 30
    batch_size: int = 64
    lr: float = 1e-3
    lam: float = 1e-4
    # pruning
    target: str = "dsp=0.5"
    tolerance: float = 0.98
    step: float = 0.05
    finetune_epochs: int = 10
    time_limit: float = 10.0
    # evaluation
    quantized: str | None = None
    seed: int = 0

    def targets(self) -> tuple[float, ...]:
        return parse_targets(self.target)

    def __post_init__(self):
        if not 0 < self.tolerance <= 1:
            raise UsageError(f"--tolerance must be in (0, 1], got {self.tolerance}")


def parse_targets(text: str) -> tuple[float, ...]:
    """``"dsp=0.8,bram=0.5"`` -> ``(0.8, 0.5)``; omitted resources are 0."""
    out = dict.fromkeys(RESOURCE_NAMES, 0.0)
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = part.partition("=")
        key = key.strip().lower()
        if not sep or key not in out:
            raise UsageError(f"bad target {part!r}; expected e.g. dsp=0.8,bram=0.5")
        try:
            out[key] = float(value)
        except ValueError:
            raise UsageError(f"bad target value in {part!r}") from None
        if not 0 <= out[key] <= 1:
            raise UsageError(f"target {key} must be in [0, 1], got {out[key]}")
    return tuple(out[k] for k in RESOURCE_NAMES)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        raw = read_json(args.config)
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown config keys {sorted(unknown)}")
        values.update(raw)
    for f in dataclasses.fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return RunConfig(**values)


def _require(cfg: RunConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.synthetic:
        return synth_classify(cfg.seed, cfg.samples, cfg.features, cfg.classes, cfg.separation)
    if cfg.idx_images or cfg.idx_labels:
        _require(cfg, "idx_images", "idx_labels")
        for p in (cfg.idx_images, cfg.idx_labels):
            if not Path(p).is_file():
                raise UsageError(f"data file not found: {p}")
        return load_idx(cfg.idx_images, cfg.idx_labels)
    if cfg.data is None:
        raise UsageError("no data given: use --data FILE.csv, --idx-images/--idx-labels or --synthetic")
    if not Path(cfg.data).is_file():
        raise UsageError(f"data file not found: {cfg.data}")
    return load_csv(cfg.data, cfg.label_column)


def _load_model(path: str):
    if not Path(path).is_file():
        raise UsageError(f"model file not found: {path}")
    return load_model(path)


def _load_hw(path: str):
    if not Path(path).is_file():
        raise UsageError(f"hardware config not found: {path}")
    return load_hw_config(path)


def _split(cfg: RunConfig, data: Dataset):
    return data.split(cfg.val_fraction, seed=cfg.seed)


def _build_network(cfg: RunConfig, data: Dataset):
    if cfg.arch == "mlp":
        hidden = [int(h) for h in cfg.hidden.split(",") if h.strip()]
        n_in = int(np.prod(data.features.shape[1:]))
        return mlp([n_in, *hidden, data.class_count], seed=cfg.seed)
    if cfg.arch == "cnn":
        if data.features.ndim != 4:
            raise UsageError("--arch cnn needs image data (N, H, W, C)")
        hidden = tuple(int(h) for h in cfg.hidden.split(",") if h.strip())
        return small_cnn(tuple(data.features.shape[1:]), hidden=hidden, n_classes=data.class_count, seed=cfg.seed)
    raise UsageError(f"unknown architecture {cfg.arch!r}")


# --- commands ---------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "output")
    data = load_dataset(cfg)
    if data.features.ndim == 2 and data.features.shape[1] == 0:
        raise FormatError("dataset has no feature columns")
    train, val = _split(cfg, data)
    net = _build_network(cfg, data)
    losses = fit(
        net,
        train.features,
        train.labels,
        TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, lam=0.0, seed=cfg.seed),
    )
    save_model(cfg.output, net)
    print(f"final loss {losses[-1]:.4f}" if losses else "no epochs run")
    print(f"train accuracy {evaluate(net, train):.4f}")
    print(f"val accuracy {evaluate(net, val):.4f}")
    return 0


def cmd_prune(cfg: RunConfig) -> int:
    _require(cfg, "model", "hwcfg", "output")
    net = _load_model(cfg.model)
    hwcfg = _load_hw(cfg.hwcfg)
    hwcfg.check_network(net)  # fail on config before any training
    targets = cfg.targets()
    pcfg = PruningConfig(
        target=targets,
        tolerance=cfg.tolerance,
        schedule=SparsitySchedule(tuple(cfg.step if t > 0 else 0.0 for t in targets)),
        train=TrainConfig(
            epochs=cfg.finetune_epochs, batch_size=cfg.batch_size, lr=cfg.lr, lam=cfg.lam, seed=cfg.seed
        ),
        time_limit=cfg.time_limit,
    )
    data = load_dataset(cfg)
    train, val = _split(cfg, data)
    try:
        result = run_pruning(net, train, val, hwcfg, pcfg)
    except PruningDiverged as exc:
        if cfg.report:
            write_json(cfg.report, exc.result.report)
        raise
    out = result.net
    # keep an explicit all-true mask for untouched layers so the file is self-describing
    for _, layer in out.trainable_layers():
        out.masks.setdefault(layer.name, np.ones(layer.weights.shape, dtype=bool))
    save_model(cfg.output, out)
    if cfg.report:
        write_json(cfg.report, result.report)
    rep = result.report
    for k in RESOURCE_NAMES:
        print(f"{k.upper()}: {rep['baseline'][k]} -> {rep['pruned'][k]} {rep['reduction_factors'][k]}")
    print(f"accuracy {rep['baseline_accuracy']:.4f} -> {rep['final_accuracy']:.4f}")
    return 0


def estimate_report(net, hwcfg) -> dict:
    hwcfg.check_network(net)
    base = hw.estimate_network(net, hwcfg, use_mask=False)
    cur = hw.estimate_network(net, hwcfg, use_mask=True)
    layers = []
    for name in base:
        lcfg = hwcfg.for_layer(name)
        entry = {
            "name": name,
            "config": lcfg.to_dict(),
            "baseline": base[name].to_dict(),
            "masked": cur[name].to_dict(),
        }
        if BRAM_WIDTH % lcfg.precision.total:
            entry["note"] = f"{lcfg.precision.total}-bit precision does not divide the {BRAM_WIDTH}-bit BRAM word"
        layers.append(entry)
    return {
        "layers": layers,
        "total": {
            "baseline": hw.total(base.values()).to_dict(),
            "masked": hw.total(cur.values()).to_dict(),
        },
    }


def cmd_estimate(cfg: RunConfig) -> int:
    _require(cfg, "model", "hwcfg")
    report = estimate_report(_load_model(cfg.model), _load_hw(cfg.hwcfg))
    text = dumps(report)
    if cfg.report:
        Path(cfg.report).write_text(text)
    sys.stdout.write(text)
    return 0


def _schedule_cfg(lcfg: LayerHwConfig) -> LayerHwConfig:
    # fully parallel registers behave like a Resource kernel with one word per multiplier
    if lcfg.strategy == "Latency":
        return LayerHwConfig(1, lcfg.precision, "Resource", "dsp_aware")
    return lcfg


def run_codegen(net, hwcfg, outdir) -> dict:
    hwcfg.check_network(net)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    resources = {"layers": []}
    for _, layer in net.trainable_layers():
        lcfg = hwcfg.for_layer(layer.name)
        mask = net.masks.get(layer.name)
        (outdir / f"layer_{layer.name}.txt").write_text(codegen.emit_source(layer, lcfg, mask))
        sched = codegen.build_schedule(layer, _schedule_cfg(lcfg), mask)
        write_json(outdir / f"schedule_{layer.name}.json", sched.to_dict())
        resources["layers"].append(
            {
                "name": layer.name,
                "strategy": lcfg.strategy,
                "multipliers": sched.block_factor,
                "live_multipliers": len(sched.live_instances()),
                "partially_pruned_no_dsp_saving": sched.partial_instances(),
                "baseline": hw.estimate_layer(layer, lcfg).to_dict(),
                "pruned": hw.estimate_layer(layer, lcfg, mask).to_dict(),
            }
        )
    resources["total"] = {
        key: hw.total(hw.ResourceVector(**l[key]) for l in resources["layers"]).to_dict()
        for key in ("baseline", "pruned")
    }
    write_json(outdir / "resources.json", resources)
    return resources


def cmd_codegen(cfg: RunConfig) -> int:
    _require(cfg, "model", "hwcfg", "outdir")
    res = run_codegen(_load_model(cfg.model), _load_hw(cfg.hwcfg), cfg.outdir)
    t = res["total"]
    print(f"wrote {len(res['layers'])} layer kernels to {cfg.outdir}")
    print(f"DSP {t['baseline']['dsp']} -> {t['pruned']['dsp']}, BRAM {t['baseline']['bram']} -> {t['pruned']['bram']}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    _require(cfg, "model")
    net = _load_model(cfg.model)
    data = load_dataset(cfg)
    if cfg.data is None and not (cfg.idx_images or cfg.idx_labels):
        # synthetic data: score the held-out split only
        _, data = _split(cfg, data)
    fmt = FixedPointFormat.parse(cfg.quantized) if cfg.quantized else None
    print(f"{evaluate(net, data, fmt):.4f}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "prune": cmd_prune,
    "estimate": cmd_estimate,
    "codegen": cmd_codegen,
    "eval": cmd_eval,
}


def _add_data_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--data", help="CSV file with a header row")
    g.add_argument("--label-column")
    g.add_argument("--idx-images", help="IDX image file (magic 0x803)")
    g.add_argument("--idx-labels", help="IDX label file (magic 0x801)")
    g.add_argument("--synthetic", action="store_true", default=None, help="seeded Gaussian blob task")
    g.add_argument("--samples", type=int)
    g.add_argument("--separation", type=float)
    g.add_argument("--features", type=int)
    g.add_argument("--classes", type=int)
    g.add_argument("--val-fraction", type=float)


class _Parser(argparse.ArgumentParser):
    # argparse would exit with status 2, which is reserved for data errors
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hwprune", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of run settings")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a model from scratch")
    common(p)
    _add_data_args(p)
    p.add_argument("--output", "-o", help="model file to write")
    p.add_argument("--arch", choices=["mlp", "cnn"])
    p.add_argument("--hidden", help="comma-separated hidden widths")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)

    p = sub.add_parser("prune", help="resource-aware iterative pruning")
    common(p)
    _add_data_args(p)
    p.add_argument("--model")
    p.add_argument("--hwcfg")
    p.add_argument("--output", "-o")
    p.add_argument("--report")
    p.add_argument("--target", help="e.g. dsp=0.8,bram=0.5")
    p.add_argument("--tolerance", type=float, help="keep accuracy >= tolerance * baseline")
    p.add_argument("--step", type=float, help="sparsity increment per iteration")
    p.add_argument("--finetune-epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lam", type=float, help="group regularization strength")
    p.add_argument("--time-limit", type=float, help="knapsack time limit per iteration [s]")

    p = sub.add_parser("estimate", help="DSP / BRAM estimate with and without mask")
    common(p)
    p.add_argument("--model")
    p.add_argument("--hwcfg")
    p.add_argument("--report")

    p = sub.add_parser("codegen", help="emit per-layer kernels and schedules")
    common(p)
    p.add_argument("--model")
    p.add_argument("--hwcfg")
    p.add_argument("--outdir")

    p = sub.add_parser("eval", help="accuracy of a model, optionally quantized")
    common(p)
    _add_data_args(p)
    p.add_argument("--model")
    p.add_argument("--quantized", help="fixed-point format TOTAL,INTEGER, e.g. 18,6")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except HwPruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
