"""Iterative resource-aware pruning driven by a (multidimensional) knapsack.

Each iteration scores every surviving group by its L2 norm normalized to the
largest norm in its layer, keeps the most valuable groups that fit within
``floor((1 - s) * R_B)`` resources, zeroes the rest, fine-tunes with group
regularization and re-evaluates. Sparsity ``s`` grows by a constant step
until the target is reached or validation accuracy falls below
``tolerance * baseline``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from hwprune import hw
from hwprune.errors import NumericError, UsageError
from hwprune.hw import RESOURCE_NAMES, HardwareConfig, ResourceVector
from hwprune.knapsack import DEFAULT_TIME_LIMIT, KnapsackInstance, Selection, solve
from hwprune.nn.network import Network
from hwprune.nn.train import Regularizer, TrainConfig, evaluate, fit
from hwprune.structures import ResourceGroup, network_groups, to_weight_index

log = logging.getLogger(__name__)

# guards floor() against (1 - s) * R_B landing a rounding error below an integer
_FLOOR_EPS = 1e-9


@dataclass
class SparsitySchedule:
    """``f(s) = min(s + step, target)`` componentwise."""

    step: tuple[float, ...] = (0.05, 0.05)

    def __post_init__(self):
        if any(d < 0 for d in self.step):
            raise UsageError(f"sparsity steps must be non-negative, got {self.step}")

    def at(self, k: int, target: np.ndarray) -> np.ndarray:
        """Sparsity after ``k`` updates from zero (multiplied, not accumulated)."""
        step = np.asarray(self.step, dtype=np.float64)
        return np.minimum(np.round(k * step, 12), target)


@dataclass
class PruningConfig:
    target: tuple[float, ...] = (0.5, 0.0)
    tolerance: float = 0.98
    schedule: SparsitySchedule = field(default_factory=SparsitySchedule)
    train: TrainConfig = field(default_factory=TrainConfig)
    time_limit: float = DEFAULT_TIME_LIMIT
    max_iterations: int = 1000

    def __post_init__(self):
        t = np.asarray(self.target, dtype=np.float64)
        if t.shape != (len(RESOURCE_NAMES),) or np.any(t < 0) or np.any(t > 1):
            raise UsageError(f"target sparsity must be {len(RESOURCE_NAMES)} values in [0, 1], got {self.target}")
        if not 0 < self.tolerance <= 1:
            raise UsageError(f"tolerance must be in (0, 1], got {self.tolerance}")
        if len(self.schedule.step) != len(RESOURCE_NAMES):
            raise UsageError("one sparsity step per resource dimension")
        for k in range(len(t)):
            if t[k] > 0 and self.schedule.step[k] <= 0:
                raise UsageError(f"{RESOURCE_NAMES[k]} has a positive target but no step")


class GroupTable:
    """Flat view of every group: resources, weight indices and layer ids."""

    def __init__(self, net: Network, groups: list[ResourceGroup]):
        self.groups = groups
        self.layer_ids = np.array([g.layer_id for g in groups], dtype=np.int64)
        self.resources = np.array([g.resource.as_tuple() for g in groups], dtype=np.int64).T.reshape(
            len(RESOURCE_NAMES), len(groups)
        )
        self.weight_index = []
        self.ids: dict[int, np.ndarray] = {}
        self.members: dict[int, np.ndarray] = {}
        for lid in sorted(set(self.layer_ids.tolist())):
            layer = net.layers[lid]
            n_in, n_out = layer.matrix_shape()
            members = np.flatnonzero(self.layer_ids == lid)
            ids = np.full(layer.n_weights, -1, dtype=np.int64)
            for local, gi in enumerate(members):
                ids[to_weight_index(groups[gi].weight_coords, n_in, n_out)] = local
            self.ids[lid] = ids
            self.members[lid] = members
        for g in groups:
            n_in, n_out = net.layers[g.layer_id].matrix_shape()
            self.weight_index.append(to_weight_index(g.weight_coords, n_in, n_out))

    def __len__(self) -> int:
        return len(self.groups)

    def norms(self, net: Network) -> np.ndarray:
        out = np.zeros(len(self.groups))
        for lid, members in self.members.items():
            w = net.layers[lid].weights.ravel()
            sq = np.bincount(self.ids[lid], weights=w**2, minlength=members.size)
            out[members] = np.sqrt(sq)
        return out

    def regularization(self, lam: float) -> Regularizer:
        return Regularizer(
            lam=lam,
            groups={lid: [self.weight_index[g] for g in members] for lid, members in self.members.items()},
        )


def normalize_per_layer(norms: np.ndarray, layer_ids: np.ndarray) -> np.ndarray:
    values = np.zeros_like(norms, dtype=np.float64)
    for lid in np.unique(layer_ids):
        sel = layer_ids == lid
        top = norms[sel].max()
        if top > 0:
            values[sel] = norms[sel] / top
    return values


def score_groups(groups: list[ResourceGroup], net: Network) -> np.ndarray:
    """Group norm divided by the largest group norm in the same layer."""
    table = GroupTable(net, groups)
    norms = table.norms(net)
    for g, n in zip(groups, norms):
        g.norm = float(n)
    return normalize_per_layer(norms, table.layer_ids)


def capacities(sparsity, baseline: ResourceVector) -> np.ndarray:
    s = np.asarray(sparsity, dtype=np.float64)
    rb = np.asarray(baseline.as_tuple(), dtype=np.float64)
    return np.floor((1.0 - s) * rb + _FLOOR_EPS).astype(np.int64)


@dataclass
class PruneStepReport:
    selection: Selection
    capacities: list[int]
    used: list[int]
    newly_pruned: int
    items: int


def prune_step(
    net: Network,
    table: GroupTable,
    pruned: np.ndarray,
    values: np.ndarray,
    caps: np.ndarray,
    time_limit: float = DEFAULT_TIME_LIMIT,
) -> PruneStepReport:
    """Select surviving groups under ``caps``; zero and mask the rest in place.

    ``pruned`` (bool per group) is updated. Groups pruned earlier are not
    offered to the solver again.
    """
    caps = np.asarray(caps, dtype=np.int64)
    if np.any(caps < 0):
        raise UsageError(f"infeasible capacities {caps.tolist()}")
    alive = np.flatnonzero(~pruned)
    inst = KnapsackInstance(values[alive], table.resources[:, alive], caps)
    sel = solve(inst, time_limit)
    drop = alive[~sel.x]
    for gi in drop:
        layer = net.layers[table.layer_ids[gi]]
        mask = net.masks.get(layer.name)
        if mask is None:
            mask = np.ones(layer.weights.shape, dtype=bool)
        flat = mask.ravel()
        flat[table.weight_index[gi]] = False
        net.masks[layer.name] = flat.reshape(layer.weights.shape)
    pruned[drop] = True
    net.apply_masks()
    used = table.resources[:, ~pruned].sum(axis=1)
    assert np.all(used <= caps)
    return PruneStepReport(sel, caps.tolist(), used.tolist(), int(drop.size), int(alive.size))


@dataclass
class PruningState:
    sparsity: np.ndarray
    target: np.ndarray
    baseline: ResourceVector
    baseline_metric: float
    metric: float
    tolerance: float
    pruned: np.ndarray
    history: list[dict] = field(default_factory=list)
    best_iteration: int = -1
    aborted: str | None = None


@dataclass
class PruningResult:
    net: Network
    state: PruningState
    report: dict


def _initially_pruned(net: Network, table: GroupTable) -> np.ndarray:
    pruned = np.zeros(len(table), dtype=bool)
    for gi, g in enumerate(table.groups):
        layer = net.layers[g.layer_id]
        mask = net.masks.get(layer.name)
        if mask is not None and not mask.ravel()[table.weight_index[gi]].any():
            pruned[gi] = True
    return pruned


def format_reduction(baseline: int, pruned: int) -> str:
    """``"(12.2x)"``, matching the reduction columns of the result tables."""
    if baseline == 0:
        return "(n/a)"
    if pruned == 0:
        return "(inf)"
    return f"({baseline / pruned:.1f}x)"


def resource_report(net: Network, hwcfg: HardwareConfig) -> dict:
    base = hw.total(hw.estimate_network(net, hwcfg, use_mask=False).values())
    cur = hw.total(hw.estimate_network(net, hwcfg, use_mask=True).values())
    return {
        "baseline": base.to_dict(),
        "pruned": cur.to_dict(),
        "reduction_factors": {
            k: format_reduction(getattr(base, k), getattr(cur, k)) for k in RESOURCE_NAMES
        },
    }


class PruningDiverged(NumericError):
    def __init__(self, message: str, result: PruningResult):
        super().__init__(message)
        self.result = result


def run_pruning(
    net: Network,
    train_data,
    val_data,
    hwcfg: HardwareConfig,
    cfg: PruningConfig,
) -> PruningResult:
    """Prune a pre-trained network; returns the last iterate within tolerance.

    ``net`` is not modified.
    """
    hwcfg.check_network(net)
    work = net.copy()
    groups = network_groups(work, hwcfg)
    table = GroupTable(work, groups)
    reg = table.regularization(cfg.train.lam)
    baseline = ResourceVector.from_iterable(table.resources.sum(axis=1))
    target = np.asarray(cfg.target, dtype=np.float64)
    b = evaluate(work, val_data)
    state = PruningState(
        sparsity=np.zeros(len(RESOURCE_NAMES)),
        target=target,
        baseline=baseline,
        baseline_metric=b,
        metric=b,
        tolerance=cfg.tolerance,
        pruned=_initially_pruned(work, table),
    )
    best = work.copy()
    rb = np.asarray(baseline.as_tuple(), dtype=np.float64)
    log.info("baseline accuracy %.4f, R_B %s, %d groups", b, baseline.to_dict(), len(table))

    k = 0
    # a zero target leaves nothing to prune
    while np.any(target > 0) and k < cfg.max_iterations:
        s = cfg.schedule.at(k, target)
        state.sparsity = s
        values = normalize_per_layer(table.norms(work), table.layer_ids)
        caps = capacities(s, baseline)
        step = prune_step(work, table, state.pruned, values, caps, cfg.time_limit)
        train_cfg = TrainConfig(
            epochs=cfg.train.epochs,
            batch_size=cfg.train.batch_size,
            lr=cfg.train.lr,
            lam=cfg.train.lam,
            seed=cfg.train.seed + k,
        )
        record = {
            "iteration": k,
            "sparsity": [float(v) for v in s],
            "capacities": step.capacities,
            "used": step.used,
            "achieved_sparsity": [
                float(1.0 - u / r) if r > 0 else 0.0 for u, r in zip(step.used, rb)
            ],
            "objective": step.selection.objective,
            "proven_optimal": step.selection.proven_optimal,
            "items": step.items,
            "newly_pruned": step.newly_pruned,
            "pruned_groups": int(state.pruned.sum()),
        }
        try:
            loss = fit(work, train_data.features, train_data.labels, train_cfg, reg)
        except NumericError as exc:
            record["error"] = str(exc)
            state.history.append(record)
            state.aborted = str(exc)
            result = PruningResult(best, state, _final_report(best, hwcfg, state))
            raise PruningDiverged(f"fine-tuning diverged at iteration {k}: {exc}", result) from exc
        p = evaluate(work, val_data)
        state.metric = p
        record["train_loss"] = loss[-1] if loss else None
        record["accuracy"] = p
        record["estimated"] = hw.total(hw.estimate_network(work, hwcfg).values()).to_dict()
        tolerant = p >= cfg.tolerance * b
        record["within_tolerance"] = bool(tolerant)
        state.history.append(record)
        log.info(
            "iter %d s=%s used=%s acc=%.4f%s", k, record["sparsity"], step.used, p,
            "" if tolerant else " (below tolerance)",
        )
        if not tolerant:
            break
        best = work.copy()
        state.best_iteration = k
        if np.all(s >= target):
            break
        k += 1
    return PruningResult(best, state, _final_report(best, hwcfg, state))


def _final_report(net: Network, hwcfg: HardwareConfig, state: PruningState) -> dict:
    report = resource_report(net, hwcfg)
    report.update(
        {
            "baseline_accuracy": state.baseline_metric,
            "final_accuracy": (
                state.history[state.best_iteration]["accuracy"]
                if state.best_iteration >= 0
                else state.baseline_metric
            ),
            "best_iteration": state.best_iteration,
            "knapsack_baseline": state.baseline.to_dict(),
            "target": [float(v) for v in state.target],
            "tolerance": state.tolerance,
            "iterations": state.history,
        }
    )
    if state.aborted:
        report["aborted"] = state.aborted
    return report
