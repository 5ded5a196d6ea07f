"""Command line interface: ``spearlab {train,eval,compare,calibrate-omega}``.

Exit codes: 0 success, 1 contract violation (including a declined
calibration), 2 configuration error.  ``SPEARLAB_OUT`` overrides the output
directory of every subcommand.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import TrainConfig, load_config
from .checkpoint import load_checkpoint
from .errors import CalibrationDeclined, ConfigError, ContractViolation
from . import harness

log = logging.getLogger("spearlab")


def _int_list(text: str) -> list[int]:
    """``"0,1,2"`` or ``"0-4"`` (inclusive) or a mix of both."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty list: {text!r}")
    return out


def _config(args, per_run: bool = True) -> TrainConfig:
    config = load_config(args.config) if args.config else TrainConfig()
    changes = {}
    if per_run and args.seed is not None:
        changes["seed"] = args.seed
    if per_run and args.variant:
        changes["variant"] = args.variant
    if getattr(args, "steps", None) is not None:
        changes["num_steps"] = args.steps
    return config.replace(**changes) if changes else config


def _out(args, default: str) -> Path:
    return harness.output_dir(args.out or default)


def cmd_train(args) -> int:
    config = _config(args)
    out = _out(args, f"runs/{config.variant}_seed{config.seed}")
    res = harness.run_train(harness.RunManifest(config, [config.seed]), out)
    if res.status != 0:
        print(f"error: {res.error}", file=sys.stderr)
        return res.status
    print(f"{len(res.records)} steps, final greedy success {res.final_success:.3f}; wrote {out}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    env_name = args.env or ckpt.env_name
    seeds = _int_list(args.seeds) if args.seeds else range(100)
    res = harness.run_eval(ckpt, env_name, seeds, args.max_turns)
    payload = {"env_name": env_name, "success_rate": res.success_rate,
               "mean_turns": res.mean_turns, "n_episodes": res.n_episodes}
    print(json.dumps(payload, sort_keys=True))
    if args.out or harness.OUT_ENV_VAR in os.environ:
        out = _out(args, ".")
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(payload, sort_keys=True) + "\n")
    return 0


def cmd_compare(args) -> int:
    config = _config(args, per_run=False)
    variants = [v.strip() for v in args.variant.split(",")] if args.variant else ["grpo", "drbot", "spear"]
    for v in variants:
        config.replace(variant=v)  # raises ConfigError on an unknown name
    seeds = args.seed or [0, 1, 2, 3, 4]
    out = _out(args, "runs/compare")
    records = harness.run_compare(config, variants, seeds, out, workers=args.workers)
    print(harness.format_compare_table(records), end="")
    return 0


def cmd_calibrate(args) -> int:
    config = _config(args)
    params = load_checkpoint(args.checkpoint).params if args.checkpoint else None
    if args.top_lb is not None or args.top_ub is not None:
        config = config.replace(
            omega_calib_top_lb=args.top_lb if args.top_lb is not None else config.omega_calib_top_lb,
            omega_calib_top_ub=args.top_ub if args.top_ub is not None else config.omega_calib_top_ub)
    omega = harness.calibrate_omega(config, params)
    fragment = "".join(f"{k} = {v}\n" for k, v in omega.items())
    print(fragment, end="")
    if args.out or harness.OUT_ENV_VAR in os.environ:
        out = _out(args, ".")
        out.mkdir(parents=True, exist_ok=True)
        (out / "omega.txt").write_text(fragment)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spearlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_list=False):
        p.add_argument("--config", help="key = value config file (defaults if omitted)")
        if seed_list:
            p.add_argument("--seed", type=_int_list, help="run seeds, e.g. 0-4 or 0,2,5")
            p.add_argument("--variant", help="comma separated variants (default: all three)")
        else:
            p.add_argument("--seed", type=int, help="override the run seed")
            p.add_argument("--variant", choices=["grpo", "drbot", "spear"])
        p.add_argument("--steps", type=int, help="override num_steps")
        p.add_argument("--out", help="output directory (SPEARLAB_OUT wins)")

    p = sub.add_parser("train", help="train one run")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", help="environment name (default: the checkpoint's)")
    p.add_argument("--seeds", help="task seeds, e.g. 0-99 (default)")
    p.add_argument("--max-turns", type=int, dest="max_turns")
    p.add_argument("--out", help="directory for eval.json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train several variants over several seeds")
    common(p, seed_list=True)
    p.add_argument("--workers", type=int, default=1, help="parallel runs")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("calibrate-omega", help="derive omega bounds from one rollout batch")
    common(p)
    p.add_argument("--checkpoint", help="policy to calibrate at (default: uniform)")
    p.add_argument("--top-lb", type=float, dest="top_lb", help="top fraction for omega_lb")
    p.add_argument("--top-ub", type=float, dest="top_ub", help="top fraction for omega_ub")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CalibrationDeclined as exc:
        print(f"calibration declined: {exc}", file=sys.stderr)
        return 1
    except (ContractViolation, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
