"""Alternating optimization, Monte Carlo experiment runner, and exports.

One AO round optimizes PA positions at fixed powers (penalty ascent in
continuous mode, matching or exhaustive search in discrete mode) and then
re-optimizes powers at the new layout. Experiment drops are independent
seeded work units; results merge in drop order so worker counts never
change output bytes.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import conventional_fixed, mrt_continuous, mrt_stage1
from .pinch_continuous import GaaParams, default_layout, penalty_outer
from .pinch_discrete import (
    MatchingState,
    discretize_continuous,
    exhaustive_search,
    init_matching,
    matching_search,
)
from .power_alloc import InfeasibleError, ScaParams, sca_power_allocation
from .scene import (
    Deployment,
    GridSpec,
    PinchingLayout,
    PowerAllocation,
    SystemConfig,
    amp2_matrix,
    channel_gain_map,
    make_deployment,
    user_rates,
    waveguide_y_offsets,
)

AO_SCHEMES = ("gaa", "matching", "es")
SCHEMES = AO_SCHEMES + ("gaa-discrete", "mrt", "conventional")
SWEEP_VARS = {
    "pmax": "max_power",
    "n_pas": "pas_per_waveguide",
    "n_slots": "num_slots",
    "length": "strip_length",
}
RESULT_COLUMNS = ("sweep_var", "sweep_value", "drop", "scheme", "sum_rate",
                  "rate_user1", "rate_user2", "feasible", "ao_rounds", "seconds")
HEATMAP_COLUMNS = ("x", "y", "gain_db_wg1", "gain_db_wg2")
TRACE_COLUMNS = ("series", "iteration", "value")


@dataclass
class AoParams:
    # the per-subsolver 1e-6 threshold is too fine for the outer
    # alternation at desk scale; 1e-4 is ~5e-6 of a typical sum rate
    tolerance: float = 1e-4
    max_rounds: int = 30


@dataclass
class AoResult:
    layout: PinchingLayout
    power: PowerAllocation
    trace: list
    rounds: int
    feasible: bool
    seconds: float
    state: MatchingState | None = None
    round_details: list = field(default_factory=list)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * np.log10(watts) + 30.0


def drop_users(config: SystemConfig, rng_seed: int) -> Deployment:
    """One random user drop, each user uniform over its serving strip."""
    rng = np.random.default_rng(rng_seed)
    offsets = waveguide_y_offsets(config)
    xy = []
    for k in range(config.num_users):
        x = rng.uniform(0.0, config.strip_length)
        y = rng.uniform(offsets[k] - config.strip_width / 2,
                        offsets[k] + config.strip_width / 2)
        xy.append((x, y))
    return make_deployment(config, xy)


def _rates_ok(X, p, deployment, config, tol=1e-6) -> bool:
    return bool(np.all(user_rates(X, p, deployment, config)
                       >= config.min_rates - tol))


def ao_optimize(scheme: str, deployment: Deployment, config: SystemConfig,
                ao_params: AoParams | None = None,
                gaa_params: GaaParams | None = None,
                sca_params: ScaParams | None = None,
                rng_seed: int = 0) -> AoResult:
    """Alternate pinching and power steps until the sum rate stalls."""
    if scheme not in AO_SCHEMES:
        raise ValueError(f"unknown AO scheme {scheme!r}")
    ao = ao_params or AoParams()
    started = time.perf_counter()

    K = config.num_users
    p = np.full(K, config.max_power / K)
    feasible = True
    state = None
    if scheme == "gaa":
        X = default_layout(config)
        mode = "continuous"
    elif scheme == "matching":
        state, init_ok = init_matching(config, deployment, p, rng_seed)
        feasible = init_ok
        X = state.decode(config).positions
        mode = "discrete"
    else:
        X = None
        mode = "discrete"

    trace: list = []
    details: list = []
    def total(X_, p_):
        return float(user_rates(X_, p_, deployment, config).sum())

    for _ in range(ao.max_rounds):
        detail = {}
        if scheme == "gaa":
            result = penalty_outer(X, p, deployment, config, gaa_params)
            if not result.feasible:
                # deterministic restart: clusters centered on the served
                # users make the rate floors easy to restore
                retry = penalty_outer(mrt_stage1(deployment, config), p,
                                      deployment, config, gaa_params)
                if retry.feasible or (total(retry.layout.positions, p)
                                      > total(result.layout.positions, p)):
                    result = retry
            X_new = result.layout.positions
            # keep the new layout only if it does not lose ground at the
            # current powers (feasibility restoration outranks the value)
            cur_ok = _rates_ok(X, p, deployment, config)
            new_ok = result.feasible
            if (new_ok and not cur_ok) or (
                    new_ok >= cur_ok and total(X_new, p) >= total(X, p) - 1e-12):
                X = X_new
            detail.update(inner_iterations=len(result.q_trace),
                          stages=result.stage_lengths, q_trace=result.q_trace)
        elif scheme == "matching":
            state, mtrace = matching_search(state, p, deployment, config)
            X = state.decode(config).positions
            detail.update(sweeps=mtrace.sweeps, swaps=mtrace.swaps,
                          utilities=mtrace.utilities)
        else:
            es = exhaustive_search(p, deployment, config)
            state = es.state
            feasible = feasible and es.feasible
            X = state.decode(config).positions

        try:
            sca = sca_power_allocation(p, amp2_matrix(X, deployment, config),
                                       config, sca_params)
            p = sca.power.powers
            detail["sca_trace"] = sca.objectives
        except InfeasibleError:
            # keep the previous powers: relaxing the floors here would
            # starve a user and freeze its position gradients for good
            feasible = False
            detail["sca_trace"] = []
        details.append(detail)
        trace.append(total(X, p))
        if len(trace) >= 2 and trace[-1] - trace[-2] < ao.tolerance:
            break

    if scheme == "matching":
        # the last power step may have destabilized the matching; one more
        # sweep restores stability at the final powers (utility only rises)
        state, mtrace = matching_search(state, p, deployment, config)
        if mtrace.swaps > 0:
            X = state.decode(config).positions
            trace.append(total(X, p))
            details.append({"sweeps": mtrace.sweeps, "swaps": mtrace.swaps,
                            "utilities": mtrace.utilities})

    feasible = feasible and _rates_ok(X, p, deployment, config)
    layout = PinchingLayout(X, mode)
    assert layout.is_feasible(config)  # every accepted layout is in its set
    return AoResult(layout=layout, power=PowerAllocation(p),
                    trace=trace, rounds=len(trace), feasible=feasible,
                    seconds=time.perf_counter() - started, state=state,
                    round_details=details)


@dataclass
class SchemeResult:
    scheme: str
    sum_rate: float
    rates: np.ndarray
    feasible: bool
    rounds: int
    seconds: float


def evaluate_scheme(scheme: str, deployment: Deployment, config: SystemConfig,
                    rng_seed: int = 0,
                    ao_params: AoParams | None = None,
                    gaa_params: GaaParams | None = None,
                    sca_params: ScaParams | None = None) -> SchemeResult:
    """Run one scheme on one drop and summarize the outcome."""
    started = time.perf_counter()
    if scheme in AO_SCHEMES:
        res = ao_optimize(scheme, deployment, config, ao_params, gaa_params,
                          sca_params, rng_seed)
        rates = user_rates(res.layout.positions, res.power.powers,
                           deployment, config)
        return SchemeResult(scheme, float(rates.sum()), rates, res.feasible,
                            res.rounds, time.perf_counter() - started)
    if scheme == "gaa-discrete":
        res = ao_optimize("gaa", deployment, config, ao_params, gaa_params,
                          sca_params, rng_seed)
        state = discretize_continuous(res.layout.positions, config)
        layout = state.decode(config)
        rates = user_rates(layout.positions, res.power.powers, deployment, config)
        feasible = res.feasible and bool(np.all(rates >= config.min_rates - 1e-6))
        return SchemeResult(scheme, float(rates.sum()), rates, feasible,
                            res.rounds, time.perf_counter() - started)
    if scheme == "mrt":
        layout = mrt_continuous(deployment, config)
        G = amp2_matrix(layout.positions, deployment, config)
        p_init = np.full(config.num_users, config.max_power / config.num_users)
        feasible = True
        try:
            sca = sca_power_allocation(p_init, G, config, sca_params)
        except InfeasibleError:
            feasible = False
            sca = sca_power_allocation(p_init, G, config, sca_params,
                                       relax_min_rates=True)
        rates = user_rates(layout.positions, sca.power.powers, deployment, config)
        feasible = feasible and bool(np.all(rates >= config.min_rates - 1e-6))
        return SchemeResult(scheme, float(rates.sum()), rates, feasible, 1,
                            time.perf_counter() - started)
    if scheme == "conventional":
        res = conventional_fixed(deployment, config, sca_params)
        return SchemeResult(scheme, res.sum_rate, res.rates, res.feasible, 1,
                            time.perf_counter() - started)
    raise ValueError(f"unknown scheme {scheme!r}")


@dataclass
class ExperimentSpec:
    scheme: str
    sweep_var: str = "pmax"
    values: tuple = (0.1,)
    drops: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.sweep_var not in SWEEP_VARS:
            raise ValueError(f"unknown sweep variable {self.sweep_var!r}")
        if self.drops < 1:
            raise ValueError("need at least one drop")
        self.values = tuple(self.values)


def apply_sweep_value(config: SystemConfig, sweep_var: str, value) -> SystemConfig:
    field_name = SWEEP_VARS[sweep_var]
    if field_name in ("pas_per_waveguide", "num_slots"):
        value = int(value)
    return replace(config, **{field_name: value})


def _run_drop(args):
    spec, config, value, drop = args
    cfg = apply_sweep_value(config, spec.sweep_var, value)
    seed = spec.seed + drop
    deployment = drop_users(cfg, seed)
    try:
        result = evaluate_scheme(spec.scheme, deployment, cfg, rng_seed=seed)
    except Exception as exc:  # recorded, never fatal for the sweep
        return {"sweep_var": spec.sweep_var, "sweep_value": value, "drop": drop,
                "scheme": spec.scheme, "sum_rate": float("nan"),
                "rate_user1": float("nan"), "rate_user2": float("nan"),
                "feasible": 0, "ao_rounds": 0, "seconds": 0.0,
                "error": repr(exc)}
    rates = list(result.rates) + [float("nan")] * 2
    return {"sweep_var": spec.sweep_var, "sweep_value": value, "drop": drop,
            "scheme": spec.scheme, "sum_rate": result.sum_rate,
            "rate_user1": float(rates[0]), "rate_user2": float(rates[1]),
            "feasible": int(result.feasible), "ao_rounds": result.rounds,
            "seconds": result.seconds}


def run_experiment(spec: ExperimentSpec, config: SystemConfig,
                   workers: int = 1) -> list:
    """All (sweep value, drop) cells for one scheme, in deterministic order."""
    tasks = [(spec, config, value, drop)
             for value in spec.values for drop in range(spec.drops)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_drop, tasks, chunksize=4))
    else:
        rows = [_run_drop(t) for t in tasks]
    return rows


def summarize(rows) -> dict:
    """Mean and standard error per (scheme, sweep value), inclusive of all
    drops and restricted to feasible ones; points with >10% failed drops
    are marked."""
    groups: dict = {}
    for row in rows:
        groups.setdefault((row["scheme"], row["sweep_value"]), []).append(row)
    out = {}
    for key, members in groups.items():
        values = np.array([m["sum_rate"] for m in members])
        ok = np.isfinite(values)
        feas = np.array([bool(m["feasible"]) for m in members]) & ok
        def stats(sel):
            if not np.any(sel):
                return float("nan"), float("nan")
            vals = values[sel]
            return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals))
                                              if len(vals) > 1 else 0.0)
        mean, se = stats(ok)
        mean_f, se_f = stats(feas)
        out[key] = {"mean": mean, "stderr": se,
                    "mean_feasible": mean_f, "stderr_feasible": se_f,
                    "drops": len(members), "failed": int(np.sum(~ok)),
                    "infeasible": int(np.sum(ok) - np.sum(feas)),
                    "flagged": bool(np.sum(~ok) > 0.1 * len(members))}
    return out


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def export_results(rows, path, include_timing: bool = False):
    """Write the sweep schema; timings are zeroed unless requested so that
    identical inputs reproduce identical bytes."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            record = dict(row)
            if not include_timing:
                record["seconds"] = 0.0
            writer.writerow([_format(record[c]) for c in RESULT_COLUMNS])


def read_results(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            rows.append({
                "sweep_var": raw["sweep_var"],
                "sweep_value": float(raw["sweep_value"]),
                "drop": int(raw["drop"]),
                "scheme": raw["scheme"],
                "sum_rate": float(raw["sum_rate"]),
                "rate_user1": float(raw["rate_user1"]),
                "rate_user2": float(raw["rate_user2"]),
                "feasible": int(raw["feasible"]),
                "ao_rounds": int(raw["ao_rounds"]),
                "seconds": float(raw["seconds"]),
            })
        return rows


def export_heatmap(layout, deployment: Deployment, config: SystemConfig,
                   grid: GridSpec, path):
    """Channel-gain maps of both waveguides on one grid, x-major rows."""
    maps = [channel_gain_map(k, layout, grid, deployment, config)
            for k in range(config.num_users)]
    xs, ys = grid.points()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEATMAP_COLUMNS)
        for ix, x in enumerate(xs):
            for iy, y in enumerate(ys):
                writer.writerow([_format(float(x)), _format(float(y)),
                                 _format(float(maps[0][iy, ix])),
                                 _format(float(maps[1][iy, ix]))])


def export_traces(result: AoResult, path, scheme: str):
    """Per-iteration convergence series of one solve run."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for i, value in enumerate(result.trace):
            writer.writerow(["ao", i, _format(float(value))])
        inner_key = "q_trace" if scheme == "gaa" else "utilities"
        series = "gaa_inner" if scheme == "gaa" else "matching_utility"
        offset = 0
        for detail in result.round_details:
            for i, value in enumerate(detail.get(inner_key, [])):
                writer.writerow([series, offset + i, _format(float(value))])
            offset += len(detail.get(inner_key, []))
