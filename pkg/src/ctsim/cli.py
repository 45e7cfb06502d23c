"""Command-line entry point.

Exit codes: 0 success, 1 simulation or I/O failure, 2 usage error,
3 invalid configuration.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import io as ctio
from .scenarios import Mode, aggregate, builtin_scenarios, mean_curves, run_scenario
from .sir import SirParams, SirState, integrate, r0_from_rates

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}")
    if any(not 0 <= s < 2**64 for s in seeds):
        raise argparse.ArgumentTypeError("seeds must be unsigned 64-bit integers")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctsim", description="Epidemic simulation with IoT contact tracing")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run scenarios and write curves and summaries")
    p.add_argument("--config", type=Path, help="scenario file (default: built-in scenarios)")
    p.add_argument("--out", type=Path, help=f"output directory (default: ${ctio.OUTPUT_ENV} or ./ctsim-out)")
    p.add_argument("--seeds", type=_seed_list, help="comma-separated seeds overriding each scenario's list")
    p.add_argument("--scenario", action="append", help="scenario name; repeat for several")
    p.add_argument("--mode", choices=[m.value for m in Mode], help="only run scenarios of this mode")
    p.add_argument("--events", action="store_true", help="also export the full proximity event log")
    p.add_argument("--workers", type=int, default=1, help="parallel processes per scenario")

    p = sub.add_parser("ode", help="integrate the SIR baseline and print or write t,S,I,R")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--n", type=float, default=5000)
    p.add_argument("--i0", type=float, default=1)
    p.add_argument("--horizon", type=float, default=3500)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--out", type=Path, help="CSV path (default: stdout)")

    sub.add_parser("scenarios", help="list built-in scenarios")

    p = sub.add_parser("validate", help="parse a scenario file and report problems")
    p.add_argument("config", type=Path)
    return parser


def _cmd_run(args) -> int:
    scenarios = ctio.parse_config(args.config) if args.config else builtin_scenarios()
    if args.scenario:
        known = {sc.name: sc for sc in scenarios}
        missing = [n for n in args.scenario if n not in known]
        if missing:
            raise ctio.ConfigError(f"unknown scenario(s): {', '.join(missing)}")
        scenarios = [known[n] for n in args.scenario]
    if args.mode:
        scenarios = [sc for sc in scenarios if sc.mode.value == args.mode]
    if args.seeds is not None:
        scenarios = [replace(sc, seeds=tuple(args.seeds)) for sc in scenarios]
    out = args.out or ctio.default_output_dir()
    bundle = ctio.OutputBundle(out)
    for sc in scenarios:
        result = run_scenario(sc, workers=args.workers, record_events=args.events)
        sdir = out / sc.name
        for r in result.runs:
            seed = r.summary.seed
            bundle.curves[(sc.name, seed)] = ctio.write_curves(r.series, sdir / f"curves_seed{seed}.csv")
            if args.events:
                bundle.events[(sc.name, seed)] = ctio.write_events(r.events, sdir / f"events_seed{seed}.csv")
        if not result.runs:
            print(f"{sc.name}: no seeds, nothing written")
            continue
        stats = aggregate(result.summaries)
        pstats = [r.protocol_stats for r in result.runs] if sc.mode == Mode.PROTOCOL else None
        bundle.summaries[sc.name] = ctio.write_summary(sc, result.summaries, stats, pstats, sdir / "summary.json")
        bundle.mean_curves[sc.name] = ctio.write_mean_curves(
            mean_curves([r.series for r in result.runs]), sdir / "mean_curves.csv")
        print(f"{sc.name}: {len(result.runs)} run(s), mean peak infectious {stats.mean('peak_infectious'):.1f}, "
              f"mean last infection tick {stats.mean('last_infection_tick'):.1f}")
    print(f"outputs in {out}")
    return EXIT_OK


def _cmd_ode(args) -> int:
    params = SirParams(beta=args.beta, gamma=args.gamma, n=args.n)
    states = integrate(SirState(float(args.n - args.i0), float(args.i0), 0.0), params, args.horizon, args.step)
    if args.out:
        ctio.write_ode(states, args.out)
        if args.gamma > 0:
            print(f"R0 = {r0_from_rates(params):.6g}; wrote {len(states)} samples to {args.out}")
    else:
        sys.stdout.write(ctio.ode_csv_text(states))
    return EXIT_OK


def _cmd_scenarios(args) -> int:
    for sc in builtin_scenarios():
        p = sc.sim
        lock = f" lockdown {p.lockdown.trigger_fraction:g}/{p.lockdown.compliance:g}" if p.lockdown else ""
        extra = ""
        if sc.mode == Mode.PROTOCOL:
            extra = (f" notified speed x{p.notified_speed_factor:.4g} prob x{p.notified_prob_factor:.4g}"
                     f" via {sc.protocol.model.ue_ue.value}")
        print(f"{sc.name}\t{sc.mode.value}\tp={p.infection_prob:g} speed={p.avg_speed:g}{lock}{extra}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    scenarios = ctio.parse_config(args.config)
    print(f"ok: {len(scenarios)} scenario(s): {', '.join(sc.name for sc in scenarios)}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {"run": _cmd_run, "ode": _cmd_ode, "scenarios": _cmd_scenarios, "validate": _cmd_validate}
    try:
        return handler[args.command](args)
    except ctio.ConfigError as exc:
        print(f"ctsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"ctsim: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
