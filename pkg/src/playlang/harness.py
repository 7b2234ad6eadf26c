"""Benchmarks: valid instruction chains, seeded rollouts, aggregation.

A benchmark is a list of task chains plus per-task instruction pools. A
rollout conditions the policy on one subtask at a time, advances when the
subtask's predicate fires (after a short grace delay), and kills the whole
episode when a subtask times out. Scores are fractions of subtasks
completed; aggregation reports a 95% t-interval over the seed axis.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .env import (
    ARM_SPEED, TASKS, Action, EnvState, PlaygroundEnv, observation,
    task_satisfied,
)
from .language import SynonymLexicon, eval_instruction
from .oracle import ScriptRunner, run_script_on_env, sample_reference_states
from .seeding import rng_for, stable_hash

TIMEOUT_TICKS = 240
ADVANCE_DELAY = 15

# two-sided 95% t critical values by degrees of freedom
_T95 = {1: 12.706, 2: 4.303, 3: 3.182, 4: 2.776, 5: 2.571, 6: 2.447,
        7: 2.365, 8: 2.306, 9: 2.262, 10: 2.228}


class HarnessError(RuntimeError):
    pass


def t_interval(values) -> tuple:
    """Mean and 95% half-width of a small sample, treating entries as iid
    means. One value (or none) gets a zero width."""
    vals = [float(v) for v in values]
    mean = float(np.mean(vals)) if vals else 0.0
    n = len(vals)
    if n < 2:
        return mean, 0.0
    t = _T95.get(n - 1)
    if t is None:
        raise HarnessError(f"no t value tabulated for {n} samples")
    sd = float(np.std(vals, ddof=1))
    return mean, t * sd / np.sqrt(n)


def load_chain_rules() -> dict:
    raw = resources.files("playlang.assets").joinpath("chain_rules.json").read_text()
    return json.loads(raw)


def _valid_extension(chain, nxt, rules) -> bool:
    if rules.get("no_immediate_repeat") and chain and chain[-1] == nxt:
        return False
    equiv = rules.get("articulation_equivalents", {})
    for a, b in rules.get("toggle_pairs", ()):
        if nxt in (a, b):
            other = b if nxt == a else a
            # a second open (or close) needs the opposite move in between;
            # tasks listed as equivalents count as the move they imply
            for prev in reversed(chain):
                ev = equiv.get(prev, prev)
                if ev == nxt:
                    return False
                if ev == other:
                    break
    if nxt in rules.get("container_placements", ()):
        resets = set(rules.get("placement_resets", ()))
        # putting the block in the same container again only counts once
        # it has been picked back up in between
        for prev in reversed(chain):
            if prev == nxt:
                return False
            if prev in resets:
                break
    return True


def enumerate_chains(tasks, n_stages: int, rules: dict | None = None) -> list:
    if n_stages < 1:
        raise HarnessError("chains need at least one stage")
    rules = load_chain_rules() if rules is None else rules
    ordered = sorted(tasks)
    chains = [()]
    for _ in range(n_stages):
        chains = [c + (t,) for c in chains for t in ordered
                  if _valid_extension(c, t, rules)]
    return chains


def subsample_chains(chains, k: int, seed: int) -> list:
    if k >= len(chains):
        return list(chains)
    pick = rng_for("chain-subsample", seed).permutation(len(chains))[:k]
    return [chains[i] for i in sorted(pick)]


@dataclass
class BenchmarkSpec:
    name: str
    chains: list
    pools: dict
    init_mode: str = "neutral"
    timeout_ticks: int = TIMEOUT_TICKS
    advance_delay: int = ADVANCE_DELAY
    seeds: list = field(default_factory=lambda: [0, 1, 2])

    def __post_init__(self):
        if self.init_mode not in ("neutral", "correlated"):
            raise HarnessError(f"bad init mode {self.init_mode!r}")
        for chain in self.chains:
            for task in chain:
                if task not in self.pools or not self.pools[task]:
                    raise HarnessError(f"no instruction pool for {task!r}")

    def to_dict(self) -> dict:
        return {"name": self.name, "chains": [list(c) for c in self.chains],
                "pools": self.pools, "init_mode": self.init_mode,
                "timeout_ticks": self.timeout_ticks,
                "advance_delay": self.advance_delay, "seeds": list(self.seeds)}

    @staticmethod
    def from_dict(d) -> "BenchmarkSpec":
        d = dict(d)
        d["chains"] = [tuple(c) for c in d["chains"]]
        return BenchmarkSpec(**d)


def build_benchmark(name, n_stages, lexicon: SynonymLexicon, seed=0,
                    max_chains=None, init_mode="neutral", seeds=(0, 1, 2),
                    pool_size=6, ood=False, tasks=TASKS) -> BenchmarkSpec:
    chains = enumerate_chains(tasks, n_stages)
    if max_chains is not None:
        chains = subsample_chains(chains, max_chains, seed)
    pools = {}
    for task in sorted(set(t for c in chains for t in c)):
        rng = rng_for("bench-pool", name, task, seed)
        pool = []
        while len(pool) < pool_size:
            text = eval_instruction(task, lexicon, rng, ood=ood)
            if text not in pool:
                pool.append(text)
        pools[task] = pool
    return BenchmarkSpec(name=name, chains=chains, pools=pools,
                         init_mode=init_mode, seeds=list(seeds))


def build_ood_benchmark(lexicon: SynonymLexicon, seed=0, seeds=(0, 1, 2),
                        pool_size=6) -> BenchmarkSpec:
    """Single-instruction benchmark whose pools hold held-out synonym
    variants; every sentence carries out-of-vocabulary words."""
    for cls, lists in lexicon.classes.items():
        if not lists["holdout"]:
            raise HarnessError(f"lexicon class {cls} has no held-out synonyms")
    return build_benchmark("multi-ood", 1, lexicon, seed=seed, seeds=seeds,
                           pool_size=pool_size, ood=True)


# ---- policy adapters -------------------------------------------------------------


class InstructionAdapter:
    """Conditions a trained policy with sentences from the benchmark pools."""

    def __init__(self, policy):
        self.policy = policy
        self.last_instruction = None

    def condition(self, task, env, rng, pools):
        pool = pools[task]
        self.last_instruction = pool[int(rng.integers(len(pool)))]
        self.policy.set_instruction(self.last_instruction)

    def act(self, obs, state):
        return self.policy.act(obs)


class GoalAdapter:
    """Conditions a trained policy on a goal observation, synthesized by
    silently rolling the scripted expert forward in a cloned environment."""

    def __init__(self, policy, sim_cap=300):
        self.policy = policy
        self.sim_cap = sim_cap

    def condition(self, task, env, rng, pools):
        sim = PlaygroundEnv()
        sim.reset("correlated", reference=env.state)
        script_rng = rng_for("goal-sim", task, int(rng.integers(1 << 31)))
        run_script_on_env(sim, task, script_rng, cap=self.sim_cap,
                          strict=False, allow_open=True)
        self.policy.set_goal(observation(sim.state))

    def act(self, obs, state):
        return self.policy.act(obs)


class OracleAdapter:
    """The scripted expert, driven through the same rollout loop."""

    def __init__(self, seed=0):
        self._runner = ScriptRunner(seed)

    def condition(self, task, env, rng, pools):
        self._runner.set_task(task)

    def act(self, obs, state):
        return self._runner.act(state)


class RandomAdapter:
    """Uniform actions inside the env clamp box."""

    def __init__(self, seed=0):
        self._rng = rng_for("random-policy", seed)

    def condition(self, task, env, rng, pools):
        pass

    def act(self, obs, state):
        dx, dy = self._rng.uniform(-ARM_SPEED, ARM_SPEED, 2)
        return Action(float(dx), float(dy), float(self._rng.uniform()))


# ---- rollouts --------------------------------------------------------------------


def run_chain(adapter, chain, spec: BenchmarkSpec, chain_idx: int, seed: int,
              ref_state: EnvState | None = None) -> dict:
    """Roll one chain. Returns {chain, seed, subtasks, ticks}; the fraction
    completed is len([s for s in subtasks if s]) / len(chain)."""
    env = PlaygroundEnv()
    env_seed = stable_hash(f"{spec.name}|{chain_idx}|{seed}")
    if spec.init_mode == "neutral":
        obs = env.reset("neutral", seed=env_seed)
    else:
        if ref_state is None:
            raise HarnessError("correlated init needs a reference state")
        obs = env.reset("correlated", reference=ref_state)
    rng = rng_for("rollout", spec.name, chain_idx, seed)
    results = []
    total_ticks = 0
    for task in chain:
        seg_start = env.state.copy()
        adapter.condition(task, env, rng, spec.pools)
        done = False
        for _ in range(spec.timeout_ticks):
            obs, _ = env.step(adapter.act(obs, env.state))
            total_ticks += 1
            if task_satisfied(task, seg_start, env.state):
                done = True
                break
        results.append(done)
        if not done:
            break  # timeout ends the whole episode
        for _ in range(spec.advance_delay):
            obs, _ = env.step(adapter.act(obs, env.state))
            total_ticks += 1
    while len(results) < len(chain):
        results.append(False)
    return {"chain": list(chain), "seed": seed, "subtasks": results,
            "ticks": total_ticks}


@dataclass
class EvalResult:
    benchmark: str
    rows: list

    @property
    def seeds(self) -> list:
        return sorted({r["seed"] for r in self.rows})

    def fraction(self, row) -> float:
        return sum(row["subtasks"]) / len(row["subtasks"])

    def per_seed_means(self) -> dict:
        out = {}
        for s in self.seeds:
            fr = [self.fraction(r) for r in self.rows if r["seed"] == s]
            out[s] = float(np.mean(fr))
        return out

    def per_chain_fractions(self) -> dict:
        out = {}
        for r in self.rows:
            out.setdefault(tuple(r["chain"]), []).append(self.fraction(r))
        return {c: float(np.mean(v)) for c, v in out.items()}

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.per_seed_means().values())))

    @property
    def half_width(self) -> float:
        return t_interval(self.per_seed_means().values())[1]

    def to_dict(self) -> dict:
        return {"benchmark": self.benchmark, "rows": self.rows,
                "mean": self.mean, "half_width": self.half_width,
                "per_seed": {str(k): v for k, v in self.per_seed_means().items()}}

    @staticmethod
    def from_dict(d) -> "EvalResult":
        return EvalResult(d["benchmark"], d["rows"])


def run_benchmark(make_adapter, spec: BenchmarkSpec, on_row=None) -> EvalResult:
    """make_adapter(seed) -> adapter; evaluates every chain for every seed.
    Chains are independent, so ordering cannot affect the result; rows come
    back in (seed, chain) order."""
    refs = None
    if spec.init_mode == "correlated":
        refs = sample_reference_states(min(64, max(8, len(spec.chains))),
                                       stable_hash(f"bench-refs|{spec.name}"))
    rows = []
    for seed in spec.seeds:
        adapter = make_adapter(seed)
        for idx, chain in enumerate(spec.chains):
            ref = refs[(idx + seed) % len(refs)] if refs is not None else None
            row = run_chain(adapter, chain, spec, idx, seed, ref_state=ref)
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return EvalResult(spec.name, rows)
