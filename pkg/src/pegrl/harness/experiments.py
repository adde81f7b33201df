"""Experiment commands: train, eval sweeps, transfer and ablation comparisons."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import yaml

from ..nn.checkpoint import load_blocks
from ..nn.nets import ACTION_DIM
from .config import VARIANTS, ConfigError, ExperimentConfig, load_config, replace_section
from .train import (
    Trainer,
    agent_policy,
    evaluate,
    make_agent,
    make_env,
    read_csv,
    steps_to_threshold,
)

log = logging.getLogger(__name__)

SUCCESS_THRESHOLD = 0.8
REPORT_SCHEMA = "pegrl-eval-report/1"


def cmd_train(cfg: ExperimentConfig, out_dir=None, resume=None) -> dict:
    """Train one run per seed. Returns {seed: [(step, EvalReport), ...]}."""
    if resume is not None:
        run_dir = find_run_config(resume).parent
        ckpt = Path(resume) / "latest" if (Path(resume) / "latest").is_dir() else Path(resume)
        seed = yaml.safe_load((ckpt / "trainer_state.yaml").read_text())["seed"]
        return {seed: Trainer(cfg, seed, run_dir).run(resume_from=resume)}
    out = Path(out_dir or cfg.train.out_dir)
    results = {}
    for seed in cfg.train.seeds:
        run_dir = out / f"seed_{seed}"
        results[seed] = Trainer(cfg, seed, run_dir).run()
    return results


# -- evaluation ------------------------------------------------------------

def find_run_config(checkpoint) -> Path:
    """config.yaml of the run directory that holds `checkpoint`."""
    p = Path(checkpoint).resolve()
    for parent in list(p.parents)[:4]:
        if (parent / "config.yaml").is_file():
            return parent / "config.yaml"
    raise ConfigError(f"no config.yaml found above {checkpoint}; pass --config")


def load_agent(checkpoint, cfg: ExperimentConfig, seed: int = 0):
    path = Path(checkpoint)
    if path.is_dir():
        path = path / "latest" / "agent.ckpt" if (path / "latest").is_dir() else path / "agent.ckpt"
    agent = make_agent(cfg, seed)
    agent.load_state_blocks(load_blocks(path))
    return agent


def scripted_insert_policy(cfg: ExperimentConfig) -> Callable:
    """Hand-tuned constant action: position control across the hole, force
    control along the insertion axis with the stiffest force gain."""
    a = np.zeros(ACTION_DIM)
    a[6 + 6:6 + 12] = 1.0        # force gains at the top of their range
    a[6 + 12:6 + 18] = 1.0       # selection: position control ...
    a[6 + 12 + 2] = -1.0         # ... except force control along the hole axis
    return lambda p, f: a


@dataclass
class SweepRow:
    offset_mm: float
    offset_deg: float
    success_rate: float
    mean_steps: float
    mean_seconds: float
    compute_seconds: float


def cmd_eval(cfg: ExperimentConfig, policy: Callable, n_episodes: int = 20,
             offsets_mm: Sequence[float] = (0.0,), offsets_deg: Sequence[float] = (0.0,), out_dir=None,
             seed: Optional[int] = None, traces: bool = True) -> list:
    """Success rate, mean steps and seconds for each goal offset (x axis of the hole frame)."""
    seed = cfg.train.eval_seed if seed is None else seed
    rows = []
    out = Path(out_dir) if out_dir is not None else None
    for mm in offsets_mm:
        for deg in offsets_deg:
            ranges = replace(cfg.ranges, goal_bias_position=(mm * 1e-3, 0.0, 0.0),
                             goal_bias_rotation_deg=(deg, 0.0, 0.0))
            env = make_env(cfg, np.random.default_rng(0), ranges)
            tdir = out / f"traces_{mm:g}mm_{deg:g}deg" if (out is not None and traces) else None
            rep = evaluate(policy, env, n_episodes, seed, trace_dir=tdir)
            rows.append(SweepRow(mm, deg, rep.success_rate, rep.mean_steps, rep.mean_seconds,
                                 rep.compute_seconds_per_episode))
            log.info("offset %.2f mm %.2f deg: success %.2f, %.1f steps", mm, deg, rep.success_rate, rep.mean_steps)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval_report.csv", "w", newline="") as fh:
            fh.write(f"# schema: {REPORT_SCHEMA}\n")
            w = csv.writer(fh)
            w.writerow(["offset_mm", "offset_deg", "success_rate", "mean_steps", "mean_seconds",
                        "compute_seconds_per_episode"])
            for r in rows:
                w.writerow([r.offset_mm, r.offset_deg, r.success_rate, r.mean_steps, r.mean_seconds,
                            r.compute_seconds])
    return rows


# -- transfer --------------------------------------------------------------

@dataclass
class TransferReport:
    source_final_success: float
    finetune_steps: Optional[int]
    scratch_steps: Optional[int]
    budget: int
    finetune_curve: list = field(default_factory=list)
    scratch_curve: list = field(default_factory=list)

    @property
    def ratio(self) -> float:
        """Fine-tune over scratch steps-to-threshold; a miss counts as the budget."""
        f = self.budget if self.finetune_steps is None else self.finetune_steps
        s = self.budget if self.scratch_steps is None else self.scratch_steps
        return f / s if s > 0 else float("inf")

    def to_dict(self) -> dict:
        return {
            "source_final_success": self.source_final_success,
            "finetune_steps_to_threshold": self.finetune_steps,
            "scratch_steps_to_threshold": self.scratch_steps,
            "budget": self.budget,
            "ratio": self.ratio,
            "finetune_curve": [[int(s), float(r)] for s, r in self.finetune_curve],
            "scratch_curve": [[int(s), float(r)] for s, r in self.scratch_curve],
        }


def cmd_transfer(source: ExperimentConfig, target: ExperimentConfig, out_dir, seed: Optional[int] = None,
                 source_checkpoint=None) -> TransferReport:
    """Pretrain on the source, then fine-tune and train from scratch on the target with equal budgets."""
    out = Path(out_dir)
    seed = source.train.seeds[0] if seed is None else seed
    if source_checkpoint is None:
        evals = Trainer(source, seed, out / "source").run()
        source_checkpoint = out / "source" / "checkpoints" / "latest" / "agent.ckpt"
        src_success = evals[-1][1].success_rate if evals else float("nan")
    else:
        src_success = float("nan")
    budget = target.train.total_steps

    # fine-tuning acts with the pretrained policy from the first step
    ft_cfg = replace_section(target, sac={"warmup_steps": 0}, train={"eval_at_start": True})
    tuner = Trainer(ft_cfg, seed, out / "finetune")
    pre = load_blocks(source_checkpoint)
    tuner.agent.load_state_blocks(pre)
    ft_evals = tuner.run()

    scratch_evals = Trainer(target, seed, out / "scratch").run()
    curve = lambda ev: [(s, r.success_rate) for s, r in ev]
    rep = TransferReport(src_success, steps_to_threshold(ft_evals, SUCCESS_THRESHOLD),
                         steps_to_threshold(scratch_evals, SUCCESS_THRESHOLD), budget,
                         curve(ft_evals), curve(scratch_evals))
    (out / "transfer_report.yaml").write_text(yaml.safe_dump(rep.to_dict(), sort_keys=False))
    return rep


# -- ablation --------------------------------------------------------------

def return_auc(metrics_csv, budget: int) -> float:
    """Area under the training-return curve (episode return held until the
    next episode ends), normalized by the step budget."""
    _, header, rows = read_csv(metrics_csv)
    i, j = header.index("step"), header.index("return")
    steps = np.array([int(r[i]) for r in rows], dtype=float)
    rets = np.array([float(r[j]) for r in rows])
    if len(steps) == 0:
        return 0.0
    edges = np.minimum(np.r_[steps, budget], budget)
    widths = np.diff(edges)
    return float((rets * widths).sum() / budget)


@dataclass
class AblationResult:
    variant: str
    seed: int
    steps_to_threshold: Optional[int]
    return_auc: float
    curve: list


def cmd_ablate(cfg: ExperimentConfig, variants: Sequence[str], out_dir, seeds: Optional[Sequence[int]] = None,
               ) -> list:
    """Train each variant with identical seeds and budget."""
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variant(s) {bad}; choose from {VARIANTS}")
    out = Path(out_dir)
    seeds = cfg.train.seeds if seeds is None else seeds
    results = []
    for v in variants:
        vcfg = replace_section(cfg, train={"variant": v})
        for seed in seeds:
            run = out / v / f"seed_{seed}"
            evals = Trainer(vcfg, seed, run).run()
            results.append(AblationResult(v, seed, steps_to_threshold(evals, SUCCESS_THRESHOLD),
                                          return_auc(run / "metrics.csv", cfg.train.total_steps),
                                          [(s, r.success_rate) for s, r in evals]))
    summary = [{"variant": r.variant, "seed": r.seed, "steps_to_threshold": r.steps_to_threshold,
                "return_auc": r.return_auc, "curve": [[int(s), float(x)] for s, x in r.curve]} for r in results]
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation_report.yaml").write_text(yaml.safe_dump(summary, sort_keys=False))
    return results
