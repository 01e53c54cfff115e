"""Command-line interface: single solves, Monte Carlo sweeps, channel-gain
heatmaps, and the gradient / matching-optimality self checks.

Power-like quantities cross this boundary in dBm and frequencies in GHz;
everything behind it is SI.
"""

from __future__ import annotations

import argparse
import configparser
import sys

import numpy as np

from .harness import (
    AoParams,
    ExperimentSpec,
    ao_optimize,
    dbm_to_watts,
    drop_users,
    evaluate_scheme,
    export_heatmap,
    export_results,
    export_traces,
    run_experiment,
    summarize,
)
from .pinch_continuous import GaaParams, finite_difference_gradient, objective_gradient
from .pinch_discrete import exhaustive_search, init_matching, matching_search, utility
from .power_alloc import ScaParams
from .scene import GridSpec, SystemConfig, make_deployment, user_rates

SECTION_TYPES = {"system": SystemConfig, "sca": ScaParams, "gaa": GaaParams,
                 "ao": AoParams}


def _coerce(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if "," in text:
        return tuple(float(t) for t in text.split(","))
    return text


def load_config_file(path) -> dict:
    """INI sections [system], [sca], [gaa], [ao] with dataclass field keys."""
    parser = configparser.ConfigParser()
    with open(path) as fh:
        parser.read_file(fh)
    sections = {}
    for name in parser.sections():
        if name not in SECTION_TYPES:
            raise ValueError(f"unknown config section [{name}]")
        valid = set(SECTION_TYPES[name].__dataclass_fields__)
        entries = {}
        for key, value in parser.items(name):
            if key not in valid:
                raise ValueError(f"unknown key {key!r} in section [{name}]")
            entries[key] = _coerce(value)
        sections[name] = entries
    return sections


def _add_config_flags(cmd):
    cmd.add_argument("--config", help="INI file with [system]/[sca]/[gaa]/[ao] sections")
    cmd.add_argument("--pmax-dbm", type=float, help="power budget in dBm")
    cmd.add_argument("--n-pas", type=int, help="PAs per waveguide")
    cmd.add_argument("--n-slots", type=int, help="candidate slots per waveguide")
    cmd.add_argument("--freq-ghz", type=float, help="carrier frequency in GHz")
    cmd.add_argument("--width", type=float, help="strip width in meters")
    cmd.add_argument("--length", type=float, help="deployment range in meters")
    cmd.add_argument("--min-rate", type=float, help="per-user rate floor in bits/s/Hz")
    cmd.add_argument("--noise-dbm", type=float, help="per-user noise power in dBm")
    cmd.add_argument("--seed", type=int, default=0)


def build_settings(args):
    sections = load_config_file(args.config) if args.config else {}
    system = dict(sections.get("system", {}))
    overrides = {
        "max_power": dbm_to_watts(args.pmax_dbm) if args.pmax_dbm is not None else None,
        "pas_per_waveguide": args.n_pas,
        "num_slots": args.n_slots,
        "carrier_freq": args.freq_ghz * 1e9 if args.freq_ghz is not None else None,
        "strip_width": args.width,
        "strip_length": args.length,
        "min_rate": args.min_rate,
        "noise_power": dbm_to_watts(args.noise_dbm) if args.noise_dbm is not None else None,
    }
    system.update({k: v for k, v in overrides.items() if v is not None})
    config = SystemConfig(**system)
    sca = ScaParams(**sections.get("sca", {}))
    gaa = GaaParams(**sections.get("gaa", {}))
    ao = AoParams(**sections.get("ao", {}))
    return config, sca, gaa, ao


def _parse_users(text, config):
    xy = [tuple(float(v) for v in part.split(",")) for part in text.split(";")]
    return make_deployment(config, xy)


def cmd_solve(args) -> int:
    config, sca, gaa, ao = build_settings(args)
    if args.users:
        deployment = _parse_users(args.users, config)
    else:
        deployment = drop_users(config, args.seed)
    result = ao_optimize(args.scheme, deployment, config, ao_params=ao,
                         gaa_params=gaa, sca_params=sca, rng_seed=args.seed)
    rates = user_rates(result.layout.positions, result.power.powers,
                       deployment, config)
    print(f"scheme={args.scheme} seed={args.seed} rounds={result.rounds} "
          f"feasible={result.feasible} seconds={result.seconds:.2f}")
    for r, value in enumerate(result.trace):
        print(f"  round {r + 1}: sum rate {value:.6f}")
    print("user rates:", np.array2string(rates, precision=4))
    print("powers (W):", np.array2string(result.power.powers, precision=6))
    print("positions (m):")
    print(np.array2string(result.layout.positions, precision=4))
    if args.out:
        export_traces(result, args.out, args.scheme)
        print(f"traces written to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    config, _, _, _ = build_settings(args)
    values = [float(v) for v in args.values.split(",")]
    if args.sweep == "pmax":
        values = [dbm_to_watts(v) for v in values]
    rows = []
    for scheme in args.scheme.split(","):
        spec = ExperimentSpec(scheme=scheme.strip(), sweep_var=args.sweep,
                              values=tuple(values), drops=args.drops,
                              seed=args.seed)
        rows.extend(run_experiment(spec, config, workers=args.workers))
    export_results(rows, args.out, include_timing=args.timing)
    print(f"{len(rows)} rows written to {args.out}")
    for (scheme, value), stats in sorted(summarize(rows).items()):
        flag = " [>10% failed]" if stats["flagged"] else ""
        print(f"  {scheme} @ {value:g}: mean {stats['mean']:.3f} "
              f"(se {stats['stderr']:.3f}), feasible-only {stats['mean_feasible']:.3f}, "
              f"infeasible {stats['infeasible']}/{stats['drops']}{flag}")
    return 0


def cmd_heatmap(args) -> int:
    config, sca, gaa, ao = build_settings(args)
    deployment = _parse_users(args.users, config)
    result = ao_optimize("gaa", deployment, config, ao_params=ao,
                         gaa_params=gaa, sca_params=sca, rng_seed=args.seed)
    half = config.strip_width * config.num_users / 2
    grid = GridSpec(0.0, config.strip_length, -half, half, args.nx, args.ny)
    export_heatmap(result.layout, deployment, config, grid, args.out)
    print(f"heatmap written to {args.out}")
    return 0


def cmd_grad_check(args) -> int:
    config, _, gaa, _ = build_settings(args)
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.samples):
        n_pas = int(rng.choice([1, 2, 4]))
        cfg = SystemConfig(num_users=config.num_users, pas_per_waveguide=n_pas,
                           num_slots=max(config.num_slots, n_pas),
                           carrier_freq=config.carrier_freq,
                           strip_width=config.strip_width,
                           strip_length=config.strip_length,
                           max_power=config.max_power)
        deployment = drop_users(cfg, int(rng.integers(1 << 31)))
        p = np.full(cfg.num_users, cfg.max_power / cfg.num_users) \
            * rng.uniform(0.2, 1.0)
        latent = rng.uniform(-2.5, 2.5, size=(cfg.num_users, n_pas))
        beta = float(rng.choice([0.0, 1.0, 100.0]))
        rho = float(rng.choice([1.0, 0.1]))
        got = objective_gradient(latent, p, deployment, cfg, beta, rho,
                                 gaa.spacing_form)
        # fine steps keep hinge truncation below the pass bar
        want = finite_difference_gradient(latent, p, deployment, cfg, beta, rho,
                                          gaa.spacing_form, step=1e-7)
        worst = max(worst, float(np.linalg.norm(got - want)
                                 / np.linalg.norm(want)))
    print(f"max relative gradient error over {args.samples} samples: {worst:.3e}")
    if worst > 1e-5:
        print("FAIL: exceeds 1e-5")
        return 1
    print("PASS")
    return 0


def cmd_oracle_check(args) -> int:
    config, _, _, _ = build_settings(args)
    ratios = []
    for drop in range(args.drops):
        deployment = drop_users(config, args.seed + drop)
        p = np.full(config.num_users, config.max_power / config.num_users)
        init, _ = init_matching(config, deployment, p, args.seed + drop)
        matched, _ = matching_search(init, p, deployment, config)
        es = exhaustive_search(p, deployment, config)
        ratios.append(utility(matched, p, deployment, config) / es.utility)
    mean = float(np.mean(ratios))
    print(f"mean matching/exhaustive utility ratio over {args.drops} drops: {mean:.4f}")
    if mean < args.floor:
        print(f"FAIL: below floor {args.floor}")
        return 1
    print("PASS")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pinchsim")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="optimize one drop and print traces")
    _add_config_flags(solve)
    solve.add_argument("--scheme", default="gaa", choices=["gaa", "matching", "es"])
    solve.add_argument("--users", help="fixed user floor positions 'x,y;x,y'")
    solve.add_argument("--out", help="write convergence traces as CSV")
    solve.set_defaults(func=cmd_solve)

    sweep = sub.add_parser("sweep", help="Monte Carlo sweep over one variable")
    _add_config_flags(sweep)
    sweep.add_argument("--scheme", required=True,
                       help="comma list of gaa,matching,es,gaa-discrete,mrt,conventional")
    sweep.add_argument("--sweep", default="pmax",
                       choices=["pmax", "n_pas", "n_slots", "length"])
    sweep.add_argument("--values", required=True,
                       help="comma list; pmax values are dBm")
    sweep.add_argument("--drops", type=int, default=100)
    sweep.add_argument("--workers", type=int, default=1)
    sweep.add_argument("--timing", action="store_true",
                       help="record wall times (breaks byte determinism)")
    sweep.add_argument("--out", required=True)
    sweep.set_defaults(func=cmd_sweep)

    heatmap = sub.add_parser("heatmap", help="channel-gain map of a GAA layout")
    _add_config_flags(heatmap)
    heatmap.add_argument("--users", default="3,-5;7,5")
    heatmap.add_argument("--nx", type=int, default=201)
    heatmap.add_argument("--ny", type=int, default=121)
    heatmap.add_argument("--out", required=True)
    heatmap.set_defaults(func=cmd_heatmap)

    grad = sub.add_parser("grad-check", help="analytic vs finite-difference gradients")
    _add_config_flags(grad)
    grad.add_argument("--samples", type=int, default=100)
    grad.set_defaults(func=cmd_grad_check)

    oracle = sub.add_parser("oracle-check", help="matching vs exhaustive optimum")
    _add_config_flags(oracle)
    oracle.add_argument("--drops", type=int, default=100)
    oracle.add_argument("--floor", type=float, default=0.85)
    oracle.set_defaults(func=cmd_oracle_check)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
