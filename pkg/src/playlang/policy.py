"""Inference-time policy: numpy forward pass over trained parameters.

The policy is conditioned once (on a sentence or a goal observation) and
then stepped tick by tick. With the latent-plan head it draws a fresh plan
from the prior every `replan_every` ticks and resets its recurrent state at
the same boundary.
"""

from __future__ import annotations

import numpy as np

from .data import ObsStats, unit_to_actions
from .env import Action
from .language import SynonymLexicon, Vocabulary, pretrained_embed
from .nets import (
    ModelSpec, encode_context_np, gru_step_np, head_mean_np, head_sample_np,
    prior_np,
)
from .seeding import rng_for


class PolicyError(RuntimeError):
    pass


class Policy:
    def __init__(self, params, spec: ModelSpec, vocab: Vocabulary = None,
                 lexicon: SynonymLexicon = None, seed: int = 0,
                 replan_every: int = 16, stats: ObsStats | None = None,
                 sample_actions: bool = False):
        self.params = params
        self.spec = spec
        self.vocab = vocab
        self.lexicon = lexicon
        self.stats = stats
        self.sample_actions = bool(sample_actions)
        self.replan_every = int(replan_every)
        if self.replan_every < 1:
            raise PolicyError("replan_every must be >= 1")
        self.rng = rng_for("policy", seed)
        self.z_ctx = None
        self.reset()

    # ---- conditioning ----------------------------------------------------

    def set_instruction(self, text: str):
        if "lang" in self.spec.contexts:
            if self.vocab is None:
                raise PolicyError("scratch language model needs a vocabulary")
            batch = {"tokens": self.vocab.encode(text)[None]}
            self.z_ctx = encode_context_np(self.params, self.spec, "lang", batch)
        elif "lang_pretrained" in self.spec.contexts:
            if self.lexicon is None:
                raise PolicyError("pretrained-embedding model needs a lexicon")
            batch = {"embed": pretrained_embed(text, self.lexicon)[None]}
            self.z_ctx = encode_context_np(self.params, self.spec,
                                           "lang_pretrained", batch)
        else:
            raise PolicyError("model was not trained with a language context")
        self.reset()

    def set_goal(self, goal_obs: np.ndarray):
        if "goal" not in self.spec.contexts:
            raise PolicyError("model was not trained with a goal context")
        goal = np.asarray(goal_obs, np.float32).reshape(1, self.spec.obs_dim)
        if self.stats is not None:
            goal = self.stats.normalize(goal)
        self.z_ctx = encode_context_np(self.params, self.spec, "goal",
                                       {"goal": goal})
        self.reset()

    # ---- stepping --------------------------------------------------------

    def reset(self):
        """Clear recurrent state and any cached plan; keeps conditioning."""
        self.h = np.zeros((1, self.spec.hidden), np.float32)
        self.plan = None
        self.ticks_since_plan = 0

    def _replan(self, obs_row: np.ndarray):
        mu, log_s = prior_np(self.params, self.spec, obs_row, self.z_ctx)
        eps = self.rng.normal(size=mu.shape)
        self.plan = (mu + np.exp(log_s) * eps).astype(np.float32)
        self.h = np.zeros((1, self.spec.hidden), np.float32)
        self.ticks_since_plan = 0

    def act(self, obs: np.ndarray) -> Action:
        if self.z_ctx is None:
            raise PolicyError("condition the policy before stepping it")
        row = np.asarray(obs, np.float32).reshape(1, self.spec.obs_dim)
        if self.stats is not None:
            row = self.stats.normalize(row)
        if self.spec.head == "lmp":
            if self.plan is None or self.ticks_since_plan >= self.replan_every:
                self._replan(row)
            x = np.concatenate([row, self.z_ctx, self.plan], axis=1)
            rnn = "dec_rnn"
        else:
            x = np.concatenate([row, self.z_ctx], axis=1)
            rnn = "gcbc_rnn"
        self.h = gru_step_np(self.params, rnn, x, self.h, self.spec.hidden)
        self.ticks_since_plan += 1
        if self.sample_actions:
            unit = head_sample_np(self.params, self.spec, self.h, self.rng)
        else:
            unit = head_mean_np(self.params, self.spec, self.h)
        return Action.from_array(unit_to_actions(unit)[0])
