"""Rollout/learn loop with periodic deterministic evaluation and exact resume."""
from __future__ import annotations

import csv
import logging
import pickle
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import yaml

from ..env import PREV_ACTION_SLICE, FG_SLOT, InsertionEnv, Status, TraceWriter
from ..nn.checkpoint import load_blocks, save_blocks
from ..nn.nets import ACTION_DIM, PROPRIO_DIM
from ..sac.agent import NonFiniteLossError, SACAgent
from ..sac.replay import PrioritizedReplay, Transition
from .config import ExperimentConfig, dump_config, replace_section

log = logging.getLogger(__name__)

POLICY_HZ = 20.0
METRICS_SCHEMA = "pegrl-metrics/1"
EVALS_SCHEMA = "pegrl-evals/1"
METRICS_HEADER = ["step", "episode", "return", "length", "success", "status", "peak_force",
                  "critic1", "critic2", "actor", "alpha", "entropy"]
EVALS_HEADER = ["step", "success_rate", "mean_steps", "mean_seconds", "mean_return", "collision_rate",
                "mean_peak_force"]


class TrainingHalted(RuntimeError):
    def __init__(self, msg: str, checkpoint: Optional[Path]):
        super().__init__(msg)
        self.checkpoint = checkpoint


def variant_setup(cfg: ExperimentConfig):
    """Network config and observation mask for an ablation variant."""
    mask = np.ones(PROPRIO_DIM)
    net = cfg.net
    v = cfg.train.variant
    if v == "mlp-policy":
        net = replace_section(cfg, net={"policy": "mlp"}).net
    elif v == "no-prev-action":
        mask[PREV_ACTION_SLICE] = 0.0
    elif v == "no-Fg-input":
        mask[FG_SLOT] = 0.0
    return net, (None if v in ("full", "mlp-policy") else mask)


def make_env(cfg: ExperimentConfig, rng: np.random.Generator, ranges=None) -> InsertionEnv:
    return InsertionEnv(cfg.build_scene(), cfg.ranges if ranges is None else ranges, episode=cfg.episode,
                        sim_cfg=cfg.sim, param_ranges=cfg.params, rng=rng)


def make_agent(cfg: ExperimentConfig, seed: int) -> SACAgent:
    net, mask = variant_setup(cfg)
    return SACAgent(cfg.sac, net, obs_mask=mask, rng=np.random.default_rng(np.random.SeedSequence([seed, 1])))


# -- evaluation --------------------------------------------------------------

@dataclass
class EpisodeSummary:
    status: str
    steps: int
    ret: float
    peak_force: float


@dataclass
class EvalReport:
    success_rate: float
    mean_steps: float
    mean_seconds: float
    mean_return: float
    collision_rate: float
    mean_peak_force: float
    compute_seconds_per_episode: float
    episodes: list = field(default_factory=list)

    def row(self, step: int) -> list:
        return [step, self.success_rate, self.mean_steps, self.mean_seconds, self.mean_return,
                self.collision_rate, self.mean_peak_force]


def evaluate(policy: Callable, env: InsertionEnv, n_episodes: int, seed: int, trace_dir=None) -> EvalReport:
    """Run `policy(proprio, ft) -> action` for n episodes on scenarios drawn from `seed`.

    Scenario draws use their own generator, so every evaluation with the same
    seed sees the same initial conditions."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    eps = []
    t0 = time.perf_counter()
    for k in range(n_episodes):
        obs = env.reset(env.draw_scenario(rng))
        writer = None
        if trace_dir is not None:
            Path(trace_dir).mkdir(parents=True, exist_ok=True)
            writer = TraceWriter(Path(trace_dir) / f"episode_{k:03d}.csv")
        ret, peak = 0.0, 0.0
        while True:
            a = policy(obs.proprio, obs.ft)
            res = env.step(a)
            if writer is not None:
                writer.write(env, a, res)
            ret += res.reward
            peak = max(peak, res.info["peak_force"])
            obs = res.obs
            if res.status.done:
                break
        if writer is not None:
            writer.close()
        eps.append(EpisodeSummary(res.status.value, env.t, ret, peak))
    wall = (time.perf_counter() - t0) / n_episodes
    steps = np.array([e.steps for e in eps], dtype=float)
    return EvalReport(
        success_rate=float(np.mean([e.status == Status.SUCCESS.value for e in eps])),
        mean_steps=float(steps.mean()),
        mean_seconds=float(steps.mean() / POLICY_HZ),
        mean_return=float(np.mean([e.ret for e in eps])),
        collision_rate=float(np.mean([e.status == Status.COLLISION.value for e in eps])),
        mean_peak_force=float(np.mean([e.peak_force for e in eps])),
        compute_seconds_per_episode=wall,
        episodes=eps,
    )


def agent_policy(agent: SACAgent) -> Callable:
    return lambda p, f: agent.act(p, f, deterministic=True)


# -- CSV helpers -------------------------------------------------------------

def _open_csv(path: Path, schema: str, header: list, keep_rows: Optional[int] = None):
    """Open for appending; create with schema and header, or truncate to keep_rows data rows."""
    if keep_rows is None or not path.exists():
        fh = open(path, "w", newline="")
        fh.write(f"# schema: {schema}\n")
        csv.writer(fh).writerow(header)
        fh.flush()
        return fh
    lines = path.read_bytes().splitlines(keepends=True)
    path.write_bytes(b"".join(lines[:2 + keep_rows]))
    return open(path, "a", newline="")


def read_csv(path) -> tuple:
    """Returns (schema, header, rows)."""
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# schema:"):
            raise ValueError(f"{path}: row 1: missing schema line")
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: missing header row")
    return first.split(":", 1)[1].strip(), rows[0], rows[1:]


# -- trainer -----------------------------------------------------------------

class Trainer:
    def __init__(self, cfg: ExperimentConfig, seed: int, out_dir):
        self.cfg, self.seed = cfg, seed
        self.out = Path(out_dir)
        self.ckpt_dir = self.out / "checkpoints"
        self.agent = make_agent(cfg, seed)
        ss = np.random.SeedSequence([seed, 0])
        env_ss, buf_ss, act_ss = ss.spawn(3)
        tc = cfg.train
        self.envs = [make_env(cfg, np.random.default_rng(s)) for s in env_ss.spawn(tc.workers)]
        dtype = np.dtype(cfg.net.dtype)
        self.buffer = PrioritizedReplay(cfg.sac.buffer_capacity, cfg.sac.per_alpha, np.random.default_rng(buf_ss),
                                        dtype=dtype)
        self.action_rng = np.random.default_rng(act_ss)
        self.step = 0
        self.episodes = 0
        self.next_eval = tc.eval_every
        self.report = None
        self.metrics_rows = 0
        self.eval_rows = 0
        self.evals: list = []
        self.obs = None
        self.ep_stats = None
        self.last_checkpoint: Optional[Path] = None
        self._metrics = self._evals = None

    # -- public -------------------------------------------------------------
    def run(self, total_steps: Optional[int] = None, resume_from=None) -> list:
        tc = self.cfg.train
        total = tc.total_steps if total_steps is None else total_steps
        self.out.mkdir(parents=True, exist_ok=True)
        dump_config(self.cfg, self.out / "config.yaml")
        if resume_from is not None:
            self._load(Path(resume_from))
            self._metrics = _open_csv(self.out / "metrics.csv", METRICS_SCHEMA, METRICS_HEADER, self.metrics_rows)
            self._evals = _open_csv(self.out / "evals.csv", EVALS_SCHEMA, EVALS_HEADER, self.eval_rows)
        else:
            self._metrics = _open_csv(self.out / "metrics.csv", METRICS_SCHEMA, METRICS_HEADER)
            self._evals = _open_csv(self.out / "evals.csv", EVALS_SCHEMA, EVALS_HEADER)
            self.obs = [e.reset() for e in self.envs]
            self.ep_stats = [[0.0, 0, 0.0] for _ in self.envs]
            self._checkpoint()
            if tc.eval_at_start and total > 0:
                self.next_eval = 0
        try:
            self._loop(total)
        finally:
            self._metrics.close()
            self._evals.close()
        return self.evals

    @property
    def beta(self) -> float:
        s = self.cfg.sac
        frac = min(1.0, self.step / max(1, self.cfg.train.total_steps))
        return s.per_beta_start + frac * (s.per_beta_end - s.per_beta_start)

    # -- internals ------------------------------------------------------------
    def _loop(self, total: int):
        cfg, tc = self.cfg, self.cfg.train
        if self.step == 0 and self.next_eval == 0 and self._evaluate_and_checkpoint():
            return
        while self.step < total:
            if self.step < cfg.sac.warmup_steps:
                actions = self.action_rng.uniform(-1.0, 1.0, (len(self.envs), ACTION_DIM))
            else:
                p = np.stack([o.proprio for o in self.obs])
                f = np.stack([o.ft for o in self.obs])
                actions = self.agent.act(p, f) if len(self.envs) > 1 else self.agent.act(p[0], f[0])[None]
            for i, env in enumerate(self.envs):
                self._env_step(i, env, actions[i])
                if self.step % tc.update_every == 0:
                    self._learn()
                if self.step >= self.next_eval:
                    done = self._evaluate_and_checkpoint()
                    if done:
                        return
                if self.step >= total:
                    break

    def _env_step(self, i: int, env: InsertionEnv, action):
        obs = self.obs[i]
        res = env.step(action)
        self.buffer.insert(Transition(obs.proprio, obs.ft, action, res.reward, res.obs.proprio, res.obs.ft,
                                      res.status.terminal, res.status is Status.TIMEOUT))
        self.step += 1
        st = self.ep_stats[i]
        st[0] += res.reward
        st[1] += 1
        st[2] = max(st[2], res.info["peak_force"])
        if res.status.done:
            self.episodes += 1
            r = self.report
            losses = [r.critic1, r.critic2, r.actor, r.alpha, r.entropy] if r else [""] * 5
            csv.writer(self._metrics).writerow(
                [self.step, self.episodes, st[0], st[1], int(res.status is Status.SUCCESS), res.status.value,
                 st[2], *losses])
            self.metrics_rows += 1
            self.obs[i] = env.reset()
            self.ep_stats[i] = [0.0, 0, 0.0]
        else:
            self.obs[i] = res.obs

    def _learn(self):
        s = self.cfg.sac
        if self.step <= s.warmup_steps or len(self.buffer) < s.batch_size:
            return
        for _ in range(s.updates_per_step):
            batch, weights, idx = self.buffer.sample(s.batch_size, self.beta)
            try:
                self.report = self.agent.update(batch, weights)
            except NonFiniteLossError as exc:
                self._metrics.flush()
                raise TrainingHalted(f"halted at step {self.step}: {exc}", self.last_checkpoint) from exc
            self.buffer.update_priorities(idx, self.report.priorities)

    def _evaluate_and_checkpoint(self) -> bool:
        tc = self.cfg.train
        env = make_env(self.cfg, np.random.default_rng(0))
        rep = evaluate(agent_policy(self.agent), env, tc.eval_episodes, tc.eval_seed)
        csv.writer(self._evals).writerow(rep.row(self.step))
        self.eval_rows += 1
        self.evals.append((self.step, rep))
        log.info("step %d: success %.2f, mean steps %.1f, return %.1f", self.step, rep.success_rate,
                 rep.mean_steps, rep.mean_return)
        self.next_eval = (self.step // tc.eval_every + 1) * tc.eval_every
        self._checkpoint()
        return tc.stop_at_success is not None and rep.success_rate >= tc.stop_at_success

    def _checkpoint(self):
        self._metrics.flush()
        self._evals.flush()
        self.ckpt_dir.mkdir(parents=True, exist_ok=True)
        save_blocks(self.ckpt_dir / f"step_{self.step:08d}.ckpt", self.agent.state_blocks())
        tmp = self.ckpt_dir / "latest.tmp"
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir()
        save_blocks(tmp / "agent.ckpt", self.agent.state_blocks())
        np.savez(tmp / "replay.npz", **self.buffer.state_arrays())
        state = {
            "step": self.step, "episodes": self.episodes, "next_eval": self.next_eval,
            "alpha": self.agent.alpha, "per_beta": self.beta,
            "metrics_rows": self.metrics_rows, "eval_rows": self.eval_rows, "seed": self.seed,
            "ep_stats": [[float(r), int(n), float(pk)] for r, n, pk in self.ep_stats],
            "rng": {"agent": self.agent.rng.bit_generator.state, "action": self.action_rng.bit_generator.state,
                    "buffer": self.buffer.rng.bit_generator.state},
            "evals": [r.row(s) for s, r in self.evals],
        }
        (tmp / "trainer_state.yaml").write_text(yaml.safe_dump(state, sort_keys=False))
        # environment objects (scene, robot state, filters, generators) and the pending observations
        with open(tmp / "envs.pkl", "wb") as fh:
            pickle.dump({"envs": self.envs, "obs": self.obs, "report": self.report}, fh)
        latest = self.ckpt_dir / "latest"
        if latest.exists():
            shutil.rmtree(latest)
        tmp.rename(latest)
        self.last_checkpoint = latest

    def _load(self, path: Path):
        if (path / "latest").is_dir():
            path = path / "latest"
        self.agent.load_state_blocks(load_blocks(path / "agent.ckpt"))
        with np.load(path / "replay.npz") as z:
            self.buffer.load_state_arrays({k: z[k] for k in z.files})
        st = yaml.safe_load((path / "trainer_state.yaml").read_text())
        with open(path / "envs.pkl", "rb") as fh:
            pk = pickle.load(fh)
        self.step, self.episodes, self.next_eval = st["step"], st["episodes"], st["next_eval"]
        self.metrics_rows, self.eval_rows = st["metrics_rows"], st["eval_rows"]
        self.ep_stats = st["ep_stats"]
        self.envs, self.obs, self.report = pk["envs"], pk["obs"], pk["report"]
        self.agent.rng.bit_generator.state = st["rng"]["agent"]
        self.action_rng.bit_generator.state = st["rng"]["action"]
        self.buffer.rng.bit_generator.state = st["rng"]["buffer"]
        self.evals = [(row[0], EvalReport(*row[1:], compute_seconds_per_episode=float("nan")))
                      for row in st["evals"]]
        self.last_checkpoint = path


def steps_to_threshold(evals: list, threshold: float = 0.8) -> Optional[int]:
    for step, rep in evals:
        rate = rep.success_rate if hasattr(rep, "success_rate") else rep
        if rate >= threshold:
            return step
    return None


def read_evals(path) -> list:
    """[(step, success_rate)] from an evals CSV."""
    _, header, rows = read_csv(path)
    i, j = header.index("step"), header.index("success_rate")
    return [(int(r[i]), float(r[j])) for r in rows]
