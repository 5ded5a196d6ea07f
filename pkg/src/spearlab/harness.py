"""Experiment execution: training runs, greedy evaluation, comparisons, omega calibration."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .advantage import group_advantage
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, config_hash, dump_config
from .env import make_env
from .errors import CalibrationDeclined, ContractViolation, SpearError
from .objectives import current_logp, round_half_up, token_batch, token_covariance
from .policy import PolicyParams
from .rollout import rollout_groups, score
from .trainer import Trainer, variant_flags
from . import rewards

log = logging.getLogger(__name__)

__all__ = [
    "RunManifest",
    "EvalResult",
    "RunResult",
    "output_dir",
    "greedy_rollout",
    "run_eval",
    "run_train",
    "run_compare",
    "format_compare_table",
    "omega_from_covariances",
    "calibrate_omega",
]

OUT_ENV_VAR = "SPEARLAB_OUT"


def output_dir(default) -> Path:
    """The output directory; the ``SPEARLAB_OUT`` environment variable wins."""
    return Path(os.environ.get(OUT_ENV_VAR) or default)


@dataclass
class RunManifest:
    config: TrainConfig
    seeds: list[int] = field(default_factory=list)
    start_time: str = ""

    @property
    def env_name(self) -> str:
        return self.config.env_name

    @property
    def variant(self) -> str:
        return self.config.variant

    def as_dict(self) -> dict:
        return {
            "config": dump_config(self.config),
            "config_hash": config_hash(self.config),
            "seeds": self.seeds or [self.config.seed],
            "env_name": self.env_name,
            "variant": self.variant,
            "code_version": __version__,
            "start_time": self.start_time,
        }


@dataclass
class EvalResult:
    success_rate: float
    mean_turns: float
    n_episodes: int


@dataclass
class RunResult:
    status: int
    out_dir: Path | None
    records: list
    final_success: float | None = None
    error: str = ""


def greedy_rollout(env, params, task_seed: int) -> tuple[bool, int]:
    """Argmax rollout; ties go to the lowest action index."""
    state = env.reset(task_seed)
    while True:
        out = env.step(state, int(np.argmax(params.logits[state.state_index])))
        state = out.next_state
        if out.done:
            return out.success, state.turn


def run_eval(checkpoint, env_name: str | None = None, seeds: Sequence[int] = range(100),
             max_turns: int | None = None) -> EvalResult:
    """Greedy success rate of a checkpoint (or params) over ``seeds``; no learning."""
    if isinstance(checkpoint, (str, Path)):
        checkpoint = load_checkpoint(checkpoint)
    if isinstance(checkpoint, Checkpoint):
        env_name = env_name or checkpoint.env_name
        params = checkpoint.params
    else:
        params = checkpoint
    env = make_env(env_name, max_turns)
    expected = (env.state_count, env.action_count)
    if params.shape != expected:
        raise ContractViolation(
            f"checkpoint dimensions {params.shape} do not match {env_name}: expected {expected}")
    seeds = list(seeds)
    wins, turns = 0, 0
    for s in seeds:
        ok, n = greedy_rollout(env, params, s)
        wins += ok
        turns += n
    return EvalResult(wins / len(seeds), turns / len(seeds), len(seeds))


def _eval_seeds(config: TrainConfig) -> range:
    hi = min(config.env_seed_hi, config.env_seed_lo + config.eval_seeds - 1)
    return range(config.env_seed_lo, hi + 1)


def run_train(manifest: RunManifest | TrainConfig, out_dir=None, num_steps: int | None = None) -> RunResult:
    """Train, streaming one metrics line per step, then write a checkpoint.

    Files: ``metrics.jsonl`` (deterministic fields only), ``timing.jsonl``
    (wall-clock per step), ``checkpoint.bin``, ``manifest.json``,
    ``config.txt`` and ``eval.json``.  Returns status 0 on success and 1 on
    a contract violation; partial logs are flushed either way.
    """
    if isinstance(manifest, TrainConfig):
        manifest = RunManifest(manifest)
    config = manifest.config
    manifest.start_time = manifest.start_time or time.strftime("%Y-%m-%dT%H:%M:%S%z")
    out = Path(out_dir) if out_dir is not None else None
    records = []
    trainer = None
    metrics_fh = timing_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(json.dumps(manifest.as_dict(), indent=2, sort_keys=True) + "\n")
        (out / "config.txt").write_text(dump_config(config))
        metrics_fh = open(out / "metrics.jsonl", "w")
        timing_fh = open(out / "timing.jsonl", "w")
    try:
        trainer = Trainer(config)
        for _ in range(config.num_steps if num_steps is None else num_steps):
            rec = trainer.train_step().record
            records.append(rec)
            if metrics_fh is not None:
                metrics_fh.write(json.dumps(rec.as_dict(timing=False)) + "\n")
                metrics_fh.flush()
                timing_fh.write(json.dumps({"step": rec.step, "wall_ms": rec.wall_ms}) + "\n")
                timing_fh.flush()
    except ContractViolation as exc:
        log.error("run aborted: %s", exc)
        return RunResult(1, out, records, error=str(exc))
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
            timing_fh.close()
    result = run_eval(trainer.params, config.env_name, _eval_seeds(config), config.env_max_turns)
    if out is not None:
        save_checkpoint(out / "checkpoint.bin",
                        Checkpoint(trainer.params, config.env_name, config_hash(config)))
        (out / "eval.json").write_text(json.dumps(asdict(result), sort_keys=True) + "\n")
    return RunResult(0, out, records, result.success_rate)


def _compare_job(args):
    config, out_dir = args
    try:
        res = run_train(config, out_dir)
    except SpearError as exc:
        return config.variant, config.seed, None, [], str(exc)
    if res.status != 0:
        return config.variant, config.seed, None, [], res.error
    return config.variant, config.seed, res.final_success, [r.success_rate for r in res.records], ""


def run_compare(config: TrainConfig, variants: Sequence[str], seeds: Sequence[int],
                out_dir=None, workers: int = 1) -> list[dict]:
    """Train every (variant, seed) pair and summarise final greedy success.

    Returns structured records: one ``run`` record per pair (with the
    success-rate series) and one ``summary`` record per variant, sorted by
    variant name.  A failed run is reported with ``status="failed"`` and
    excluded from the median.
    """
    if not variants or not seeds:
        raise ContractViolation("compare needs at least one variant and one seed")
    out = Path(out_dir) if out_dir is not None else None
    jobs = []
    for v in sorted(set(variants)):
        for s in seeds:
            run_dir = out / f"{v}_seed{s}" if out is not None else None
            jobs.append((config.replace(variant=v, seed=int(s)), run_dir))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_compare_job, jobs))
    else:
        results = [_compare_job(j) for j in jobs]

    records = []
    by_variant: dict[str, list] = {}
    for variant, seed, final, series, error in results:
        records.append({
            "kind": "run", "variant": variant, "seed": seed,
            "status": "ok" if final is not None else "failed",
            "final_success": final, "success_series": series, "error": error,
        })
        by_variant.setdefault(variant, []).append((seed, final))
    for variant in sorted(by_variant):
        finals = [f for _, f in by_variant[variant] if f is not None]
        records.append({
            "kind": "summary", "variant": variant,
            "median_final_success": float(np.median(finals)) if finals else None,
            "per_seed": {str(s): f for s, f in by_variant[variant]},
        })
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "compare.jsonl", "w") as fh:
            for r in records:
                fh.write(json.dumps(r) + "\n")
        (out / "compare.txt").write_text(format_compare_table(records))
    return records


def format_compare_table(records: Sequence[dict]) -> str:
    rows = [r for r in records if r["kind"] == "summary"]
    seeds = sorted({s for r in rows for s in r["per_seed"]}, key=int)
    header = ["variant", "median"] + [f"seed{s}" for s in seeds]
    table = [header]
    for r in rows:
        med = r["median_final_success"]
        cells = [r["variant"], "failed" if med is None else f"{med:.3f}"]
        for s in seeds:
            v = r["per_seed"].get(s)
            cells.append("failed" if v is None else f"{v:.3f}")
        table.append(cells)
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    return "".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() + "\n" for row in table)


def omega_from_covariances(covariances, top_lb: float, top_ub: float) -> dict:
    """Rounded means of the top ``top_lb`` and top ``top_ub`` fractions of covariances."""
    cov = np.sort(np.asarray(covariances, dtype=np.float64))[::-1]
    if cov.size == 0 or not np.any(cov != 0.0):
        raise CalibrationDeclined("all token covariances are zero; nothing to calibrate")

    def top_mean(frac):
        k = max(1, math.ceil(frac * cov.size - 1e-9))
        return float(cov[:k].mean())

    return {"omega_lb": round_half_up(top_mean(top_lb)), "omega_ub": round_half_up(top_mean(top_ub))}


def calibrate_omega(config: TrainConfig, params: PolicyParams | None = None) -> dict:
    """One rollout batch at the initial policy; returns ``{"omega_lb", "omega_ub"}``."""
    trainer = Trainer(config, params=params)
    flags = variant_flags(config)
    snapshot = trainer.params.snapshot()
    groups = rollout_groups(trainer.env, snapshot, trainer.task_seeds(0), config.G, config.seed, 0)
    mu0 = rewards.mu(0, config.T_decay) if flags.curricula else 0.0
    items, adv = [], []
    for g in groups:
        r = np.array([score(t, mu0).total for t in g])
        if r.std() == 0.0:
            a = np.zeros_like(r)
        else:
            a = group_advantage(r, flags.std_norm)
        items.extend(g)
        adv.extend(a)
    tb = token_batch(items, adv)
    if len(tb) == 0:
        raise CalibrationDeclined("rollout batch has no learnable tokens")
    cov = token_covariance(current_logp(snapshot.logits, tb.states, tb.actions), tb.advantage)
    return omega_from_covariances(cov, config.omega_calib_top_lb, config.omega_calib_top_ub)
