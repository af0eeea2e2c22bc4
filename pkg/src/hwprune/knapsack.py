"""Exact 0-1 knapsack and multidimensional knapsack (MDKP) solvers.

Values are non-negative reals, resource weights and capacities are
non-negative integers, so feasibility checks are exact.

Ties between optimal selections are resolved towards items with larger value,
then lower index; any slack left by the optimum is filled greedily in that
order (zero-value items included), which never lowers the objective.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from hwprune.errors import UsageError

BRUTE_FORCE_MAX_ITEMS = 20
DEFAULT_TIME_LIMIT = 10.0


@dataclass
class KnapsackInstance:
    values: np.ndarray  # (n,)
    weights: np.ndarray  # (m, n)
    capacities: np.ndarray  # (m,)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        n = self.values.size
        w = np.asarray(self.weights)
        if w.size == 0:
            w = w.reshape(np.asarray(self.capacities).size, n)
        if w.ndim == 1:
            w = w.reshape(1, -1)
        if not np.all(np.equal(np.mod(w, 1), 0)):
            raise UsageError("resource weights must be integers")
        self.weights = w.astype(np.int64)
        self.capacities = np.asarray(self.capacities).reshape(-1).astype(np.int64)
        m = self.capacities.size
        if m < 1:
            raise UsageError("knapsack instance needs at least one dimension")
        if self.weights.shape != (m, n):
            raise UsageError(f"weights must have shape ({m}, {n}), got {self.weights.shape}")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise UsageError("values must be finite and non-negative")
        if np.any(self.weights < 0):
            raise UsageError("resource weights must be non-negative")
        if np.any(self.capacities < 0):
            raise UsageError(f"capacities must be non-negative, got {self.capacities.tolist()}")

    @property
    def n(self) -> int:
        return self.values.size

    @property
    def m(self) -> int:
        return self.capacities.size

    def feasible(self, x) -> bool:
        x = np.asarray(x, dtype=bool)
        return bool(np.all(self.weights[:, x].sum(axis=1) <= self.capacities))

    def to_dict(self) -> dict:
        return {
            "values": self.values.tolist(),
            "weights": self.weights.tolist(),
            "capacities": self.capacities.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnapsackInstance":
        return cls(d["values"], d["weights"], d["capacities"])


@dataclass
class Selection:
    x: np.ndarray  # bool (n,)
    objective: float
    proven_optimal: bool
    nodes: int = 0

    @property
    def selected(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.x)]


def _preference_order(values: np.ndarray) -> np.ndarray:
    # larger value first, then lower index
    return np.lexsort((np.arange(values.size), -values))


def _fill(inst: KnapsackInstance, x: np.ndarray) -> np.ndarray:
    x = x.copy()
    used = inst.weights[:, x].sum(axis=1)
    for i in _preference_order(inst.values):
        if not x[i] and np.all(used + inst.weights[:, i] <= inst.capacities):
            x[i] = True
            used += inst.weights[:, i]
    return x


def _objective(values: np.ndarray, x: np.ndarray) -> float:
    # exactly rounded, so every solver reports the same float for the same set
    return math.fsum(values[x].tolist())


def _selection(inst: KnapsackInstance, x: np.ndarray, proven: bool, nodes: int = 0) -> Selection:
    x = _fill(inst, np.asarray(x, dtype=bool))
    assert inst.feasible(x)
    return Selection(x, _objective(inst.values, x), proven, nodes)


def solve_1d(values, weights, capacity: int) -> Selection:
    """Exact 0-1 knapsack by dynamic programming over integer capacity."""
    capacity = int(capacity)
    if capacity < 0:
        raise UsageError(f"capacity must be non-negative, got {capacity}")
    inst = KnapsackInstance(values, np.asarray(weights).reshape(1, -1), [capacity])
    v, u = inst.values, inst.weights[0]
    order = _preference_order(v)
    dp = np.zeros(capacity + 1)
    keep = np.zeros((v.size, capacity + 1), dtype=bool)
    for row, i in enumerate(order):
        w = int(u[i])
        if w > capacity:
            continue
        if w == 0:
            take = np.full(capacity + 1, v[i] > 0)
            dp = dp + v[i] * take
            keep[row] = take
            continue
        cand = dp[: capacity + 1 - w] + v[i]
        take = cand > dp[w:]
        keep[row, w:] = take
        dp[w:] = np.where(take, cand, dp[w:])
    x = np.zeros(v.size, dtype=bool)
    cap = capacity
    for row in range(v.size - 1, -1, -1):
        if keep[row, cap]:
            i = order[row]
            x[i] = True
            cap -= int(u[i])
    return _selection(inst, x, True)


def greedy(inst: KnapsackInstance) -> np.ndarray:
    """Take items by decreasing value per normalized resource while they fit."""
    x = np.zeros(inst.n, dtype=bool)
    used = np.zeros(inst.m, dtype=np.int64)
    for i in _ratio_order(inst):
        if np.all(used + inst.weights[:, i] <= inst.capacities):
            x[i] = True
            used += inst.weights[:, i]
    return x


def _ratio_order(inst: KnapsackInstance) -> np.ndarray:
    norm = inst.weights / np.maximum(inst.capacities, 1)[:, None]
    ratio = inst.values / (1.0 + norm.sum(axis=0))
    return np.lexsort((np.arange(inst.n), -ratio))


def _dantzig(values: np.ndarray, weights: np.ndarray, capacity: float) -> float:
    """LP-relaxation bound; items must already be sorted by value / weight."""
    if values.size == 0:
        return 0.0
    cum_w = np.cumsum(weights)
    k = int(np.searchsorted(cum_w, capacity, side="right"))
    if k >= values.size:
        return float(values.sum())
    full = float(values[:k].sum())
    rest = capacity - (cum_w[k - 1] if k > 0 else 0.0)
    return full + values[k] * rest / weights[k]


class _BranchAndBound:
    """Depth-first branch and bound with LP-relaxation bounds.

    Items are branched in ratio order. The bound at a node is the minimum of
    the per-dimension Dantzig bounds and of the bound for the surrogate
    constraint that sums all dimensions normalized by capacity. Items with
    identical resource columns are interchangeable, so within such a class
    only value-ordered prefixes are explored.
    """

    def __init__(self, inst: KnapsackInstance, time_limit: float):
        self.inst = inst
        self.deadline = time.monotonic() + time_limit
        fits = np.all(inst.weights <= inst.capacities[:, None], axis=0)
        order = [int(i) for i in _ratio_order(inst) if fits[i]]
        self.items = np.array(order, dtype=np.int64)
        self.v = inst.values[self.items]
        self.u = inst.weights[:, self.items].astype(np.float64)
        _, cls = np.unique(inst.weights[:, self.items].T, axis=0, return_inverse=True)
        self.cls = np.asarray(cls).reshape(-1)
        scale = 1.0 / np.maximum(inst.capacities, 1)
        self.su = scale @ self.u
        self.scale = scale
        self.orders = []
        for k in range(inst.m):
            with np.errstate(divide="ignore"):
                r = np.where(self.u[k] > 0, self.v / np.where(self.u[k] > 0, self.u[k], 1.0), np.inf)
            self.orders.append(np.lexsort((np.arange(r.size), -r)))
        with np.errstate(divide="ignore"):
            r = np.where(self.su > 0, self.v / np.where(self.su > 0, self.su, 1.0), np.inf)
        self.orders.append(np.lexsort((np.arange(r.size), -r)))
        self.nodes = 0
        self.timed_out = False

    def bound(self, depth: int, residual: np.ndarray, blocked: np.ndarray) -> float:
        n = self.v.size
        active = np.zeros(n, dtype=bool)
        active[depth:] = True
        active &= ~blocked[self.cls]
        best = np.inf
        for k, order in enumerate(self.orders):
            sel = order[active[order]]
            if k < self.inst.m:
                w = self.u[k][sel]
                cap = residual[k]
            else:
                w = self.su[sel]
                cap = float(self.scale @ residual)
            best = min(best, _dantzig(self.v[sel], w, cap))
        return best

    def solve(self, incumbent: np.ndarray) -> tuple[np.ndarray, bool]:
        inst = self.inst
        best_x = incumbent.copy()
        best = float(inst.values[best_x].sum())
        n = self.v.size
        n_cls = int(self.cls.max()) + 1 if n else 0
        stack = [(0, inst.capacities.astype(np.float64), 0.0, np.zeros(n_cls, dtype=bool), ())]
        while stack:
            self.nodes += 1
            if self.nodes % 128 == 0 and time.monotonic() > self.deadline:
                self.timed_out = True
                break
            depth, residual, val, blocked, taken = stack.pop()
            while depth < n and blocked[self.cls[depth]]:
                depth += 1
            if depth >= n:
                if val > best + 1e-12 * max(1.0, abs(best)):
                    best = val
                    best_x = np.zeros(inst.n, dtype=bool)
                    best_x[self.items[list(taken)]] = True
                continue
            if val + self.bound(depth, residual, blocked) <= best + 1e-12 * max(1.0, abs(best)):
                continue
            c = self.cls[depth]
            excl = blocked.copy()
            excl[c] = True
            stack.append((depth + 1, residual, val, excl, taken))
            need = self.u[:, depth]
            if np.all(need <= residual):
                stack.append((depth + 1, residual - need, val + self.v[depth], blocked, taken + (depth,)))
        return best_x, not self.timed_out


def solve_mdkp(inst: KnapsackInstance, time_limit: float = DEFAULT_TIME_LIMIT) -> Selection:
    """Exact MDKP by branch and bound; on timeout returns the best incumbent.

    The incumbent is seeded with the greedy-by-ratio solution, so a timed-out
    result is never worse than greedy.
    """
    if inst.n == 0:
        return Selection(np.zeros(0, dtype=bool), 0.0, True)
    start = _fill(inst, greedy(inst))
    bnb = _BranchAndBound(inst, time_limit)
    x, proven = bnb.solve(start)
    return _selection(inst, x, proven, bnb.nodes)


def brute_force(inst: KnapsackInstance) -> Selection:
    """Exact optimum by enumerating all ``2**n`` subsets (test oracle)."""
    n = inst.n
    if n > BRUTE_FORCE_MAX_ITEMS:
        raise UsageError(f"brute force supports at most {BRUTE_FORCE_MAX_ITEMS} items, got {n}")
    best_obj, best_x = 0.0, np.zeros(n, dtype=bool)
    shifts = np.arange(n, dtype=np.int64)
    chunk = 1 << 14
    slack = 1e-9 * max(1.0, float(inst.values.sum()))
    for start in range(0, 1 << n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
        bits = ((codes[:, None] >> shifts) & 1).astype(np.int64)
        ok = np.all(bits @ inst.weights.T <= inst.capacities, axis=1)
        if not ok.any():
            continue
        obj = np.where(ok, bits @ inst.values, -1.0)
        top = float(obj.max())
        if top < best_obj - slack:
            continue
        # near-ties under the dot product are settled by the exact sum
        for k in np.flatnonzero(obj >= top - slack):
            x = bits[k].astype(bool)
            exact = _objective(inst.values, x)
            if exact > best_obj:
                best_obj, best_x = exact, x
    return Selection(best_x, best_obj, True)


def solve(inst: KnapsackInstance, time_limit: float = DEFAULT_TIME_LIMIT) -> Selection:
    """Dispatch: dimensions no item uses are dropped; one left -> DP, else B&B."""
    used = np.any(inst.weights > 0, axis=1)
    if used.sum() <= 1:
        k = int(np.argmax(used)) if used.any() else 0
        return solve_1d(inst.values, inst.weights[k], int(inst.capacities[k]))
    return solve_mdkp(inst, time_limit)
