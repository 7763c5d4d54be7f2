"""Command-line front end.

Subcommands:

* ``run``         — paired-seed controller comparison from a config file
* ``crlb-sweep``  — localization noise floor vs constellation size
* ``ingest-tle``  — turn a two-satellite element-set file into a replay CSV
* ``serve``       — wire-protocol environment server for external trainers
* ``eval-policy`` — roll episodes under a saved policy and report rewards
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as cfgmod
from . import harness
from .env import EpisodeConfig
from .ephemeris import build_trajectory, parse_tle, relative_hill_track, write_scenario
from .policy import GateConfig, WeightFormatError, load_weights
from .server import serve_env


def _parse_int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evasim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="paired-seed controller comparison")
    run.add_argument("--config", required=True, help="experiment config JSON")
    run.add_argument("--out-dir", default="results", help="directory for output CSVs")
    run.add_argument("--runs", type=int, help="override runs per seed")
    run.add_argument("--seeds", type=_parse_int_list, help="override base seeds, e.g. 1,2,3")
    run.add_argument("--controllers", help="override controller list, e.g. grs,dvo")
    run.add_argument("--weights", help="override policy weight file")
    run.add_argument("--alpha", type=float, help="override noise scale in [0,1]")
    run.add_argument("--max-steps", type=int, help="override episode length cap")
    run.add_argument(
        "--stochastic", action="store_true", help="sample the policy instead of its mean"
    )

    sweep = sub.add_parser("crlb-sweep", help="noise floor vs constellation size")
    sweep.add_argument("--sizes", type=_parse_int_list, default=list(harness.SWEEP_SIZES))
    sweep.add_argument("--epochs", type=int, default=300)
    sweep.add_argument("--sigma-d", type=float, default=None, help="timing jitter [s]")
    sweep.add_argument(
        "--beam", type=float, default=harness.SWEEP_BEAM_HALF_ANGLE, help="half-angle [rad]"
    )
    sweep.add_argument("--seed", type=int, default=1)
    sweep.add_argument("--out", help="write the table as CSV here")

    tle = sub.add_parser("ingest-tle", help="element sets -> replay scenario CSV")
    tle.add_argument("--input", required=True, help="text file of two-line element sets")
    tle.add_argument("--out", required=True, help="scenario CSV to write")
    tle.add_argument("--mouse", type=int, help="satellite number of the reference craft")
    tle.add_argument("--cat", type=int, help="satellite number of the tracked craft")
    tle.add_argument("--dt", type=float, default=120.0, help="output cadence [s]")
    tle.add_argument("--prop-step", type=float, default=3.0, help="propagation grid [s]")
    tle.add_argument("--until", type=float, help="extend past the last epoch [s]")

    srv = sub.add_parser("serve", help="wire-protocol environment server")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=7755)
    srv.add_argument("--config", help="experiment config JSON (episode section used)")

    ev = sub.add_parser("eval-policy", help="roll episodes under saved weights")
    ev.add_argument("--weights", required=True)
    ev.add_argument("--config", help="experiment config JSON")
    ev.add_argument("--episodes", type=int, default=20)
    ev.add_argument("--seed", type=int, default=1)
    ev.add_argument("--alpha", type=float, help="override noise scale in [0,1]")
    ev.add_argument("--stochastic", action="store_true")
    ev.add_argument("--out", help="write per-episode metrics CSV here")
    return p


def _apply_run_overrides(cfg: cfgmod.ExperimentConfig, args) -> cfgmod.ExperimentConfig:
    update = {}
    if args.runs is not None:
        update["runs"] = args.runs
    if args.seeds is not None:
        update["seeds"] = args.seeds
    if args.controllers is not None:
        update["controllers"] = [tok.strip() for tok in args.controllers.split(",") if tok.strip()]
    if args.weights is not None:
        update["weights"] = args.weights
    if args.stochastic:
        update["deterministic"] = False
    ep_update = {}
    if args.alpha is not None:
        ep_update["alpha"] = args.alpha
    if args.max_steps is not None:
        ep_update["max_steps"] = args.max_steps
    if ep_update:
        update["episode"] = cfg.episode.model_copy(update=ep_update)
    if not update:
        return cfg
    return cfgmod.validate_config(cfg.model_copy(update=update).model_dump())


def _cmd_run(args) -> int:
    cfg = _apply_run_overrides(cfgmod.load_config(args.config), args)
    episode_config = cfgmod.to_episode_config(cfg)
    controllers = cfgmod.build_controllers(cfg)
    result = harness.run_experiment(
        episode_config, controllers, runs=cfg.runs, seeds=cfg.seeds
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    harness.write_results_csv(out_dir / "results.csv", result)
    harness.write_runs_csv(out_dir / "runs.csv", result)
    print(f"{'controller':<12}{'episodes':>9}{'reward':>18}{'cutoff%':>9}")
    for row in result.results:
        print(
            f"{row['controller']:<12}{row['episodes']:>9}"
            f"{row['mean_reward']:>10.2f} ± {row['std_reward']:<6.2f}"
            f"{100 * row['cutoff_fraction']:>8.1f}"
        )
    print(f"wrote {out_dir / 'results.csv'} and {out_dir / 'runs.csv'}")
    return 0


def _cmd_crlb_sweep(args) -> int:
    kwargs = {}
    if args.sigma_d is not None:
        kwargs["sigma_d"] = args.sigma_d
    rows = harness.crlb_sweep(
        sizes=args.sizes,
        n_epochs=args.epochs,
        beam_half_angle=args.beam,
        seed=args.seed,
        **kwargs,
    )
    print(f"{'size':>6}{'sigma_x_km':>14}{'sigma_y_km':>14}{'sigma_z_km':>14}")
    for size, sx, sy, sz in rows:
        print(f"{size:>6}{sx:>14.4f}{sy:>14.4f}{sz:>14.4f}")
    if args.out:
        harness.write_sweep_csv(args.out, rows)
        print(f"wrote {args.out}")
    return 0


def _cmd_ingest_tle(args) -> int:
    text = Path(args.input).read_text(encoding="utf-8")
    records = parse_tle(text)
    order: list[int] = []
    for rec in records:
        if rec.satellite_id not in order:
            order.append(rec.satellite_id)
    mouse_id, cat_id = args.mouse, args.cat
    if mouse_id is None or cat_id is None:
        if len(order) != 2:
            raise ValueError(
                f"file holds satellites {order}; pick two with --mouse and --cat"
            )
        mouse_id = mouse_id if mouse_id is not None else order[0]
        cat_id = cat_id if cat_id is not None else (order[1] if order[1] != mouse_id else order[0])
    if mouse_id == cat_id:
        raise ValueError("--mouse and --cat must differ")
    by_id = {
        sat: [r for r in records if r.satellite_id == sat] for sat in (mouse_id, cat_id)
    }
    for sat, recs in by_id.items():
        if not recs:
            raise ValueError(f"no element sets for satellite {sat} in {args.input}")

    ratio = args.dt / args.prop_step
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ValueError("--dt must be a whole multiple of --prop-step")
    stride = int(round(ratio))

    until = None
    if args.until is not None:
        # flag is relative to the newest epoch; trajectories want absolute time
        until = max(r.epoch for recs in by_id.values() for r in recs) + args.until
    m_times, m_pos = build_trajectory(by_id[mouse_id], dt=args.prop_step, until=until)
    c_times, c_pos = build_trajectory(by_id[cat_id], dt=args.prop_step, until=until)
    t0 = max(m_times[0], c_times[0])
    t1 = min(m_times[-1], c_times[-1])
    keep = (m_times >= t0 - 1e-9) & (m_times <= t1 + 1e-9)
    if keep.sum() < 2:
        raise ValueError("satellite tracks do not overlap in time")
    times, hill, flags = relative_hill_track(
        m_times[keep], m_pos[keep], c_times, c_pos
    )
    if flags.any():
        print(
            f"note: {int(flags.sum())} of {len(flags)} samples depart from circular "
            "speed beyond tolerance; the local-frame mapping is approximate there",
            file=sys.stderr,
        )
    times = times[::stride] - times[0]
    hill = hill[::stride]
    write_scenario(args.out, times, hill)
    print(f"wrote {len(times)} samples at {args.dt:g} s to {args.out}")
    return 0


def _episode_config_from(args) -> EpisodeConfig:
    if getattr(args, "config", None):
        return cfgmod.to_episode_config(cfgmod.load_config(args.config))
    return EpisodeConfig()


def _cmd_serve(args) -> int:
    server = serve_env(args.host, args.port, _episode_config_from(args))
    host, port = server.server_address[:2]
    print(f"serving environment on {host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def _cmd_eval_policy(args) -> int:
    weights = load_weights(args.weights)
    if args.config:
        cfg = cfgmod.load_config(args.config)
        episode_config = cfgmod.to_episode_config(cfg)
        gate = GateConfig(
            d_near=cfg.gate.d_near,
            d_far=cfg.gate.d_far,
            history_n=cfg.episode.history_n,
            decay=cfg.gate.decay,
            sigma_floor=cfg.gate.sigma_floor,
        )
    else:
        episode_config, gate = EpisodeConfig(), GateConfig()
    controller = harness.RlController(
        weights, gate=gate, deterministic=not args.stochastic
    )
    result = harness.run_experiment(
        episode_config,
        [controller],
        runs=args.episodes,
        seeds=[args.seed],
        alpha=args.alpha,
    )
    row = result.results[0]
    print(
        f"{args.episodes} episodes: reward {row['mean_reward']:.2f} ± {row['std_reward']:.2f} "
        f"(95% CI {row['ci95_lo']:.2f}..{row['ci95_hi']:.2f})"
    )
    if args.out:
        harness.write_runs_csv(args.out, result)
        print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "crlb-sweep": _cmd_crlb_sweep,
    "ingest-tle": _cmd_ingest_tle,
    "serve": _cmd_serve,
    "eval-policy": _cmd_eval_policy,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (cfgmod.ConfigError, WeightFormatError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
