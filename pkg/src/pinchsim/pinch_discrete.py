"""Discrete PA slot assignment via one-sided one-to-one matching.

Each waveguide owns a grid of candidate slots; a PA may only occupy a
slot of its own waveguide and no slot holds two PAs. PAs greedily
re-locate to free slots whenever that strictly raises the sum rate while
keeping every user's rate floor, which terminates in a stable matching.
Exhaustive enumeration and snapping of continuous layouts provide the
comparison baselines.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product
from math import comb

import numpy as np

from .scene import (
    Deployment,
    InvalidConfigError,
    PinchingLayout,
    SystemConfig,
    _gain_terms,
    _positions,
    _powers,
    rates_from_gains,
    slot_positions,
    sum_rate,
)


class BudgetExceededError(RuntimeError):
    """The exhaustive state space is larger than the enumeration budget."""


@dataclass
class MatchingState:
    """Slot index of each PA; row k holds waveguide k's PAs."""

    slots: np.ndarray

    def __post_init__(self):
        self.slots = np.atleast_2d(np.asarray(self.slots, dtype=int))

    def decode(self, config: SystemConfig) -> PinchingLayout:
        grid = slot_positions(config)
        return PinchingLayout(np.sort(grid[self.slots], axis=1), "discrete")

    def is_valid(self, config: SystemConfig) -> bool:
        if self.slots.shape != (config.num_users, config.pas_per_waveguide):
            return False
        if np.any(self.slots < 0) or np.any(self.slots >= config.num_slots):
            return False
        return all(len(set(row.tolist())) == len(row) for row in self.slots)

    def canonical(self) -> "MatchingState":
        return MatchingState(np.sort(self.slots, axis=1))


@dataclass
class MatchTrace:
    utilities: list
    swaps: int
    sweeps: int
    stable: bool


class _SlotGains:
    """Per-slot channel contributions, reused across candidate evaluations.

    Summing a row's contributions in ascending slot order reproduces the
    decoded layout's gain computation bit for bit, so utilities agree
    exactly with ``sum_rate`` on the decoded layout.
    """

    def __init__(self, deployment: Deployment, config: SystemConfig):
        grid = slot_positions(config)
        full = np.tile(grid, (config.num_users, 1))
        terms, _, _ = _gain_terms(full, deployment, config)
        self.terms = terms.transpose(0, 2, 1)  # (waveguide, slot, user)
        self.noise = config.effective_noise
        self.min_rates = config.min_rates

    def rates(self, slots, p) -> np.ndarray:
        alpha = np.stack([self.terms[i][np.sort(row)].sum(axis=0)
                          for i, row in enumerate(slots)])
        return rates_from_gains(np.abs(alpha) ** 2, p, self.noise)

    def utility(self, slots, p) -> float:
        return float(self.rates(slots, p).sum())

    def feasible(self, rates) -> bool:
        return bool(np.all(rates >= self.min_rates))


def utility(state: MatchingState, p, deployment: Deployment,
            config: SystemConfig) -> float:
    """Sum rate of the decoded slot assignment."""
    return sum_rate(state.decode(config), p, deployment, config)


def init_matching(config: SystemConfig, deployment: Deployment, p,
                  rng_seed: int, max_tries: int = 1000):
    """Random injective assignment per waveguide, retried until the rate
    floors hold; falls back to the best-slack draw with ``feasible=False``."""
    if config.num_slots < config.pas_per_waveguide:
        raise InvalidConfigError("fewer candidate slots than PAs")
    rng = np.random.default_rng(rng_seed)
    gains = _SlotGains(deployment, config)
    p = _powers(p)
    best = None
    best_slack = -np.inf
    for _ in range(max_tries):
        slots = np.sort(np.stack([
            rng.choice(config.num_slots, size=config.pas_per_waveguide,
                       replace=False)
            for _ in range(config.num_users)]), axis=1)
        rates = gains.rates(slots, p)
        slack = float(np.min(rates - config.min_rates))
        if slack >= 0:
            return MatchingState(slots), True
        if slack > best_slack:
            best, best_slack = slots, slack
    return MatchingState(best), False


def propose_swap(state: MatchingState, k: int, n: int, a: int, p,
                 deployment: Deployment, config: SystemConfig):
    """Re-point PA (k, n) to slot a if that strictly improves the sum rate
    while keeping all rate floors; occupied slots are rejected, not errors."""
    if a in state.slots[k]:
        return False, state
    gains = _SlotGains(deployment, config)
    p = _powers(p)
    current = gains.utility(state.slots, p)
    cand = state.slots.copy()
    cand[k, n] = a
    rates = gains.rates(cand, p)
    if float(rates.sum()) > current and gains.feasible(rates):
        return True, MatchingState(cand)
    return False, state


def matching_search(state: MatchingState, p, deployment: Deployment,
                    config: SystemConfig):
    """First-improvement sweeps over (waveguide, PA, slot) until stable."""
    gains = _SlotGains(deployment, config)
    p = _powers(p)
    slots = state.slots.copy()
    value = gains.utility(slots, p)
    utilities = [value]
    swaps = 0
    sweeps = 0
    K, N = slots.shape
    while True:
        sweeps += 1
        changed = False
        for k in range(K):
            for n in range(N):
                for a in range(config.num_slots):
                    if a in slots[k]:
                        continue
                    previous = slots[k, n]
                    slots[k, n] = a
                    rates = gains.rates(slots, p)
                    cand = float(rates.sum())
                    if cand > value and gains.feasible(rates):
                        value = cand
                        utilities.append(cand)
                        swaps += 1
                        changed = True
                    else:
                        slots[k, n] = previous
        if not changed:
            break
    return MatchingState(slots), MatchTrace(utilities=utilities, swaps=swaps,
                                            sweeps=sweeps, stable=True)


def stability_check(state: MatchingState, p, deployment: Deployment,
                    config: SystemConfig) -> bool:
    """True iff no single PA can move to a free slot and strictly improve
    the sum rate while keeping the rate floors."""
    gains = _SlotGains(deployment, config)
    p = _powers(p)
    slots = state.slots
    value = gains.utility(slots, p)
    K, N = slots.shape
    for k in range(K):
        for n in range(N):
            for a in range(config.num_slots):
                if a in slots[k]:
                    continue
                cand = slots.copy()
                cand[k, n] = a
                rates = gains.rates(cand, p)
                if float(rates.sum()) > value and gains.feasible(rates):
                    return False
    return True


@dataclass
class EsResult:
    state: MatchingState
    utility: float
    feasible: bool


def exhaustive_search(p, deployment: Deployment, config: SystemConfig,
                      budget: int = 10_000_000) -> EsResult:
    """Global maximizer of the sum rate over all valid slot assignments.

    Ties break toward the lexicographically smallest slot tuple. States
    violating a rate floor are skipped; if none is feasible the overall
    best is returned flagged infeasible.
    """
    K = config.num_users
    per_waveguide = comb(config.num_slots, config.pas_per_waveguide)
    total = per_waveguide ** K
    if total > budget:
        raise BudgetExceededError(
            f"{total} assignments exceed the enumeration budget {budget}")
    gains = _SlotGains(deployment, config)
    p = _powers(p)
    combos = [np.array(c) for c in
              combinations(range(config.num_slots), config.pas_per_waveguide)]
    combo_alpha = [np.stack([gains.terms[i][c].sum(axis=0) for c in combos])
                   for i in range(K)]

    best_value, best_idx = -np.inf, None
    top_value, top_idx = -np.inf, None
    for idx in product(range(per_waveguide), repeat=K):
        alpha = np.stack([combo_alpha[i][ci] for i, ci in enumerate(idx)])
        rates = rates_from_gains(np.abs(alpha) ** 2, p, gains.noise)
        value = float(rates.sum())
        if value > top_value:
            top_value, top_idx = value, idx
        if value > best_value and gains.feasible(rates):
            best_value, best_idx = value, idx

    feasible = best_idx is not None
    if not feasible:
        best_value, best_idx = top_value, top_idx
    slots = np.stack([combos[ci] for ci in best_idx])
    return EsResult(MatchingState(slots), best_value, feasible)


def discretize_continuous(X_cont, config: SystemConfig) -> MatchingState:
    """Snap each PA to its nearest slot; on collision the PA with the larger
    snap error yields and takes its nearest free slot."""
    X = _positions(X_cont)
    grid = slot_positions(config)
    rows = []
    for row in X:
        desired = np.clip(np.rint(row * (config.num_slots - 1)
                                  / config.strip_length).astype(int),
                          0, config.num_slots - 1)
        errors = np.abs(row - grid[desired])
        taken: set = set()
        assigned = np.empty(len(row), dtype=int)
        for pa in np.argsort(errors, kind="stable"):
            slot = desired[pa]
            if slot in taken:
                for candidate in np.argsort(np.abs(grid - row[pa]), kind="stable"):
                    if int(candidate) not in taken:
                        slot = int(candidate)
                        break
            taken.add(int(slot))
            assigned[pa] = slot
        rows.append(np.sort(assigned))
    return MatchingState(np.stack(rows))
