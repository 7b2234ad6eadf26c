"""Optimization loop over one or more context datasets.

Each step draws one batch per dataset, builds every loss on a single tape,
averages them, and applies one Adam update. Datasets therefore share the
policy and their encoders train together.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph
from .data import W_HIGH, W_LOW, ObsStats, PlayCorpus, enumerate_windows
from .nets import (
    ModelSpec, collect_grads, encode_context_g, gcbc_loss_g, init_params,
    lmp_loss_g, zero_grads,
)
from .optim import AdamState, adam_step
from .seeding import rng_for


class TrainError(RuntimeError):
    pass


@dataclass
class TrainSettings:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 2e-4
    seed: int = 0
    pad_to: int = W_HIGH
    log_every: int = 50


class GoalWindowSampler:
    """Uniform over every hindsight window in the corpus."""

    kind = "goal"

    def __init__(self, corpus: PlayCorpus, w_low=W_LOW, w_high=W_HIGH):
        self.corpus = corpus
        self.eps, self.starts, self.widths = enumerate_windows(
            corpus.obs_counts.tolist(), w_low, w_high)
        if len(self.eps) == 0:
            raise TrainError("corpus has no windows at these widths")

    def __len__(self):
        return len(self.eps)

    def sample(self, rng, batch_size, pad_to):
        idx = rng.integers(len(self.eps), size=batch_size)
        return self.corpus.window_batch(self.eps[idx], self.starts[idx],
                                        self.widths[idx], pad_to)


class LangWindowSampler:
    """Annotated windows with their sentences pre-encoded, either as token
    ids (kind 'lang') or frozen sentence vectors (kind 'lang_pretrained')."""

    def __init__(self, corpus: PlayCorpus, rows, encode_fn, kind="lang"):
        if kind not in ("lang", "lang_pretrained"):
            raise TrainError(f"bad language sampler kind {kind!r}")
        if not rows:
            raise TrainError("no annotated rows")
        self.kind = kind
        self.corpus = corpus
        self.eps = np.array([r.ep for r in rows], dtype=np.int32)
        self.starts = np.array([r.start for r in rows], dtype=np.int32)
        self.widths = np.array([r.width for r in rows], dtype=np.int32)
        self.encoded = np.stack([encode_fn(r.instruction) for r in rows])

    def __len__(self):
        return len(self.eps)

    def sample(self, rng, batch_size, pad_to):
        idx = rng.integers(len(self.eps), size=batch_size)
        batch = self.corpus.window_batch(self.eps[idx], self.starts[idx],
                                         self.widths[idx], pad_to)
        key = "tokens" if self.kind == "lang" else "embed"
        batch[key] = self.encoded[idx]
        return batch


class Trainer:
    def __init__(self, spec: ModelSpec, datasets, settings: TrainSettings,
                 params=None, stats: ObsStats | None = None):
        if not datasets:
            raise TrainError("need at least one dataset")
        names = [name for name, _ in datasets]
        if len(set(names)) != len(names):
            raise TrainError(f"duplicate dataset names {names}")
        self.spec = spec
        self.datasets = list(datasets)
        self.settings = settings
        self.stats = stats
        self.params = params if params is not None else init_params(spec, settings.seed)
        self.opt = AdamState(self.params, lr=settings.lr)
        self.rng = rng_for("train", settings.seed)
        self.step_count = 0
        self.history: list[dict] = []

    def step(self) -> dict:
        g = Graph()
        total = None
        record = {"step": self.step_count}
        for name, sampler in self.datasets:
            batch = sampler.sample(self.rng, self.settings.batch_size,
                                   self.settings.pad_to)
            if self.stats is not None:
                batch["obs"] = self.stats.normalize(batch["obs"])
                batch["goal"] = self.stats.normalize(batch["goal"])
            z = encode_context_g(g, self.params, self.spec, sampler.kind, batch)
            if self.spec.head == "lmp":
                eps = self.rng.normal(
                    size=(batch["mask"].shape[0], self.spec.plan_dim))
                loss, parts = lmp_loss_g(g, self.params, self.spec, batch, z, eps)
            else:
                loss, parts = gcbc_loss_g(g, self.params, self.spec, batch, z)
            record[f"{name}/nll"] = parts["nll"]
            record[f"{name}/kl"] = parts["kl"]
            total = loss if total is None else total + loss
        total = total * (1.0 / len(self.datasets))
        record["loss"] = float(total.data)
        zero_grads(self.params)
        g.backward(total)
        adam_step(self.params, collect_grads(self.params), self.opt)
        self.step_count += 1
        return record

    def run(self, steps=None, on_log=None) -> list:
        steps = self.settings.steps if steps is None else steps
        t0 = time.time()
        for _ in range(steps):
            record = self.step()
            if self.step_count % self.settings.log_every == 0 or \
                    self.step_count == steps:
                record["elapsed_s"] = round(time.time() - t0, 3)
                self.history.append(record)
                if on_log is not None:
                    on_log(record)
        return self.history
