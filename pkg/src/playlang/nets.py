"""Model: context encoders, recurrent policy heads, losses.

Every context type (goal observation, instruction tokens, frozen sentence
vector) gets its own encoder ending in the same small latent goal space; one
recurrent policy decodes actions conditioned on that latent. Heads:

  gcbc  behavior cloning straight from [observation; latent goal]
  lmp   a sequence CVAE: a recurrent posterior reads the whole window,
        an MLP prior predicts the plan from start and goal, the decoder
        conditions on both the latent goal and a sampled plan

Actions live in [0,1]^3 and each dim is scored by a discretized logistic
over 256 bins (outer bins open-ended, so the 256 masses always sum to 1).

Graph builders compute training losses on the autodiff tape. Each builder
has a plain-numpy twin used by the inference fast path; test_nets pins the
two paths together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Graph, Tensor, Var
from .seeding import rng_for

BINS = 256
LOG_SCALE_MIN = -5.0
LOG_SCALE_MAX = 2.0
HEAD_SCALE_INIT = math.log(0.15)


class ModelError(ValueError):
    pass


@dataclass
class ModelSpec:
    contexts: tuple = ("goal",)
    head: str = "lmp"
    hidden: int = 128
    z_dim: int = 16
    plan_dim: int = 8
    emb_dim: int = 8
    vocab_size: int = 0
    obs_dim: int = 13
    act_dim: int = 3
    pretrained_dim: int = 64
    beta: float = 0.01

    def __post_init__(self):
        if self.head not in ("lmp", "gcbc"):
            raise ModelError(f"unknown head {self.head!r}")
        bad = set(self.contexts) - {"goal", "lang", "lang_pretrained"}
        if bad or not self.contexts:
            raise ModelError(f"bad context set {self.contexts!r}")
        if "lang" in self.contexts and self.vocab_size <= 0:
            raise ModelError("lang context needs vocab_size")

    def to_dict(self) -> dict:
        return {"contexts": list(self.contexts), "head": self.head,
                "hidden": self.hidden, "z_dim": self.z_dim,
                "plan_dim": self.plan_dim, "emb_dim": self.emb_dim,
                "vocab_size": self.vocab_size, "obs_dim": self.obs_dim,
                "act_dim": self.act_dim, "pretrained_dim": self.pretrained_dim,
                "beta": self.beta}

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        d = dict(d)
        d["contexts"] = tuple(d["contexts"])
        return ModelSpec(**d)


# ---- initialization ----------------------------------------------------------


def _glorot(rng, fan_in, fan_out, dtype):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out)).astype(dtype)


def _add_mlp(params, name, sizes, rng, dtype):
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"{name}.w{i}"] = Tensor(_glorot(rng, a, b, dtype),
                                        requires_grad=True, dtype=dtype)
        params[f"{name}.b{i}"] = Tensor(np.zeros(b, dtype), requires_grad=True,
                                        dtype=dtype)


def _add_gru(params, name, in_dim, H, rng, dtype):
    params[f"{name}.w_zr"] = Tensor(_glorot(rng, in_dim + H, 2 * H, dtype),
                                    requires_grad=True, dtype=dtype)
    b_zr = np.zeros(2 * H, dtype)
    b_zr[:H] = 1.0  # bias the update gate toward carrying state
    params[f"{name}.b_zr"] = Tensor(b_zr, requires_grad=True, dtype=dtype)
    params[f"{name}.w_n"] = Tensor(_glorot(rng, in_dim + H, H, dtype),
                                   requires_grad=True, dtype=dtype)
    params[f"{name}.b_n"] = Tensor(np.zeros(H, dtype), requires_grad=True,
                                   dtype=dtype)


def init_params(spec: ModelSpec, seed: int, dtype=np.float32) -> dict:
    rng = rng_for("init", seed)
    p: dict[str, Tensor] = {}
    H, Z = spec.hidden, spec.z_dim
    if "goal" in spec.contexts:
        _add_mlp(p, "goal_enc", [spec.obs_dim, H, H, Z], rng, dtype)
    if "lang" in spec.contexts:
        table = rng.normal(0.0, 0.1, (spec.vocab_size, spec.emb_dim)).astype(dtype)
        p["lang_emb.table"] = Tensor(table, requires_grad=True, dtype=dtype)
        _add_mlp(p, "lang_enc", [spec.emb_dim, H, Z], rng, dtype)
    if "lang_pretrained" in spec.contexts:
        _add_mlp(p, "transfer_enc", [spec.pretrained_dim, H, Z], rng, dtype)

    head_in = np.zeros(2 * spec.act_dim, dtype)
    head_in[spec.act_dim:] = HEAD_SCALE_INIT
    if spec.head == "lmp":
        _add_gru(p, "post_rnn", spec.obs_dim + spec.act_dim, H, rng, dtype)
        _add_mlp(p, "post_out", [H, 2 * spec.plan_dim], rng, dtype)
        _add_mlp(p, "prior", [spec.obs_dim + Z, H, H, 2 * spec.plan_dim], rng, dtype)
        _add_gru(p, "dec_rnn", spec.obs_dim + Z + spec.plan_dim, H, rng, dtype)
    else:
        _add_gru(p, "gcbc_rnn", spec.obs_dim + Z, H, rng, dtype)
    _add_mlp(p, "head", [H, 2 * spec.act_dim], rng, dtype)
    p["head.b0"] = Tensor(head_in, requires_grad=True, dtype=dtype)
    return p


def zero_grads(params: dict) -> None:
    for t in params.values():
        t.grad = None


def collect_grads(params: dict) -> dict:
    return {k: t.grad for k, t in params.items() if t.grad is not None}


# ---- graph builders ------------------------------------------------------------


def mlp_g(g: Graph, params, name, x: Var, n_layers: int) -> Var:
    for i in range(n_layers):
        x = g.add(g.matmul(x, g.leaf(params[f"{name}.w{i}"])),
                  g.leaf(params[f"{name}.b{i}"]))
        if i + 1 < n_layers:
            x = g.relu(x)
    return x


def gru_step_g(g: Graph, params, name, x: Var, h: Var, H: int) -> Var:
    xh = g.concat([x, h], axis=1)
    zr = g.sigmoid(g.add(g.matmul(xh, g.leaf(params[f"{name}.w_zr"])),
                         g.leaf(params[f"{name}.b_zr"])))
    z, r = zr[:, :H], zr[:, H:]
    xn = g.concat([x, r * h], axis=1)
    n = g.tanh(g.add(g.matmul(xn, g.leaf(params[f"{name}.w_n"])),
                     g.leaf(params[f"{name}.b_n"])))
    return n + z * (h - n)


def encode_context_g(g: Graph, params, spec: ModelSpec, kind: str, batch) -> Var:
    if kind == "goal":
        return mlp_g(g, params, "goal_enc", g.constant(batch["goal"]), 3)
    if kind == "lang":
        ids = np.asarray(batch["tokens"])
        emb = g.embedding(g.leaf(params["lang_emb.table"]), ids)
        m = (ids != 0).astype(g.dtype)[:, :, None]
        counts = np.maximum(m.sum(axis=1), 1.0)
        pooled = g.div(g.sum(emb * g.constant(m), axis=1), g.constant(counts))
        return mlp_g(g, params, "lang_enc", pooled, 2)
    if kind == "lang_pretrained":
        return mlp_g(g, params, "transfer_enc", g.constant(batch["embed"]), 2)
    raise ModelError(f"unknown context kind {kind!r}")


def _bin_edges(u: np.ndarray, dtype):
    """Per-target lower/upper bin edges plus open-end masks."""
    b = np.clip(np.floor(u * BINS), 0, BINS - 1)
    lower = (b / BINS).astype(dtype)
    upper = ((b + 1) / BINS).astype(dtype)
    lo_mask = (b > 0).astype(dtype)
    hi_mask = (b < BINS - 1).astype(dtype)
    return lower, upper, lo_mask, hi_mask


def disc_logistic_logp_g(g: Graph, raw: Var, target_unit: np.ndarray, act_dim: int) -> Var:
    """Log P(target bin) per (row, action dim). raw is the head output
    [mu logits | log scales]."""
    mu = g.sigmoid(raw[:, :act_dim])
    log_s = g.clip(raw[:, act_dim:], LOG_SCALE_MIN, LOG_SCALE_MAX)
    inv_s = g.exp(g.neg(log_s))
    lower, upper, lo_mask, hi_mask = _bin_edges(target_unit, g.dtype)
    z_u = g.mul(g.sub(g.constant(upper), mu), inv_s)
    z_l = g.mul(g.sub(g.constant(lower), mu), inv_s)
    # open outer bins: upper CDF pinned to 1 on the last bin, lower to 0 on the first
    cdf_u = g.add(g.sigmoid(z_u) * g.constant(hi_mask), g.constant(1.0 - hi_mask))
    cdf_l = g.sigmoid(z_l) * g.constant(lo_mask)
    return g.log(g.sub(cdf_u, cdf_l) + 1e-7)


def kl_diag_g(g: Graph, mu_q: Var, log_q: Var, mu_p: Var, log_p: Var) -> Var:
    """KL(q || p) for diagonal Gaussians, summed over dims -> (B,)."""
    var_ratio = g.exp((log_q - log_p) * 2.0)
    delta = mu_q - mu_p
    sq = delta * delta * g.exp(log_p * (-2.0))
    per_dim = (log_p - log_q) + (var_ratio + sq) * 0.5 - 0.5
    return g.sum(per_dim, axis=1)


def _masked_nll(g, params, spec, batch, step_input_fn):
    """Shared decoder rollout: sum of masked action log-probs over the
    window, normalized per valid step and dim. Action t pairs obs t with
    obs t+1, so its validity column is mask[:, t+1]."""
    act, mask = batch["actions"], batch["mask"]
    amask = mask[:, 1:]
    B, WA = act.shape[:2]
    h = g.constant(np.zeros((B, spec.hidden), g.dtype))
    rnn = "dec_rnn" if spec.head == "lmp" else "gcbc_rnn"
    total = None
    for t in range(WA):
        if not amask[:, t].any():
            break
        x = step_input_fn(t)
        h = gru_step_g(g, params, rnn, x, h, spec.hidden)
        raw = g.add(g.matmul(h, g.leaf(params["head.w0"])), g.leaf(params["head.b0"]))
        logp = disc_logistic_logp_g(g, raw, act[:, t], spec.act_dim)
        total_t = g.sum(logp * g.constant(amask[:, t:t + 1]))
        total = total_t if total is None else total + total_t
    denom = float(max(amask.sum() * spec.act_dim, 1.0))
    return g.neg(total) * (1.0 / denom)


def gcbc_loss_g(g: Graph, params, spec: ModelSpec, batch, z_ctx: Var):
    obs = batch["obs"]

    def step_input(t):
        return g.concat([g.constant(obs[:, t]), z_ctx], axis=1)

    nll = _masked_nll(g, params, spec, batch, step_input)
    return nll, {"nll": float(nll.data), "kl": 0.0}


def lmp_loss_g(g: Graph, params, spec: ModelSpec, batch, z_ctx: Var,
               plan_eps: np.ndarray):
    obs, act, mask = batch["obs"], batch["actions"], batch["mask"]
    amask = mask[:, 1:]
    B, WA = act.shape[:2]
    P = spec.plan_dim

    # posterior reads [obs; action] pairs and keeps the hidden state at
    # each row's final valid step
    h = g.constant(np.zeros((B, spec.hidden), g.dtype))
    h_last = g.constant(np.zeros((B, spec.hidden), g.dtype))
    for t in range(WA):
        if not amask[:, t].any():
            break
        x = g.constant(np.concatenate([obs[:, t], act[:, t]], axis=1))
        h = gru_step_g(g, params, "post_rnn", x, h, spec.hidden)
        nxt = amask[:, t + 1] if t + 1 < WA else np.zeros(B, amask.dtype)
        last = (amask[:, t] - nxt)[:, None]
        if last.any():
            h_last = h_last + h * g.constant(last.astype(g.dtype))
    stats = mlp_g(g, params, "post_out", h_last, 1)
    mu_q = stats[:, :P]
    log_q = g.clip(stats[:, P:], LOG_SCALE_MIN, LOG_SCALE_MAX)
    z_plan = mu_q + g.exp(log_q) * g.constant(plan_eps.astype(g.dtype))

    prior_in = g.concat([g.constant(obs[:, 0]), z_ctx], axis=1)
    pstats = mlp_g(g, params, "prior", prior_in, 3)
    mu_p = pstats[:, :P]
    log_p = g.clip(pstats[:, P:], LOG_SCALE_MIN, LOG_SCALE_MAX)
    kl = g.mean(kl_diag_g(g, mu_q, log_q, mu_p, log_p))

    def step_input(t):
        return g.concat([g.constant(obs[:, t]), z_ctx, z_plan], axis=1)

    nll = _masked_nll(g, params, spec, batch, step_input)
    loss = nll + kl * spec.beta
    return loss, {"nll": float(nll.data), "kl": float(kl.data)}


# ---- numpy twins (inference fast path) -------------------------------------------


def np_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mlp_np(params, name, x: np.ndarray, n_layers: int) -> np.ndarray:
    for i in range(n_layers):
        x = x @ params[f"{name}.w{i}"].data + params[f"{name}.b{i}"].data
        if i + 1 < n_layers:
            x = np.maximum(x, 0.0)
    return x


def gru_step_np(params, name, x: np.ndarray, h: np.ndarray, H: int) -> np.ndarray:
    xh = np.concatenate([x, h], axis=1)
    zr = np_sigmoid(xh @ params[f"{name}.w_zr"].data + params[f"{name}.b_zr"].data)
    z, r = zr[:, :H], zr[:, H:]
    xn = np.concatenate([x, r * h], axis=1)
    n = np.tanh(xn @ params[f"{name}.w_n"].data + params[f"{name}.b_n"].data)
    return n + z * (h - n)


def encode_context_np(params, spec: ModelSpec, kind: str, batch) -> np.ndarray:
    if kind == "goal":
        return mlp_np(params, "goal_enc", np.asarray(batch["goal"], np.float32), 3)
    if kind == "lang":
        ids = np.asarray(batch["tokens"])
        emb = params["lang_emb.table"].data[ids]
        m = (ids != 0).astype(np.float32)[:, :, None]
        pooled = (emb * m).sum(axis=1) / np.maximum(m.sum(axis=1), 1.0)
        return mlp_np(params, "lang_enc", pooled, 2)
    if kind == "lang_pretrained":
        return mlp_np(params, "transfer_enc", np.asarray(batch["embed"], np.float32), 2)
    raise ModelError(f"unknown context kind {kind!r}")


def prior_np(params, spec: ModelSpec, obs: np.ndarray, z_ctx: np.ndarray):
    stats = mlp_np(params, "prior", np.concatenate([obs, z_ctx], axis=1), 3)
    P = spec.plan_dim
    return stats[:, :P], np.clip(stats[:, P:], LOG_SCALE_MIN, LOG_SCALE_MAX)


def head_mean_np(params, spec: ModelSpec, h: np.ndarray) -> np.ndarray:
    """Deterministic decode: the logistic mean per action dim, in [0,1]."""
    raw = h @ params["head.w0"].data + params["head.b0"].data
    return np_sigmoid(raw[:, :spec.act_dim])


def head_sample_np(params, spec: ModelSpec, h: np.ndarray, rng) -> np.ndarray:
    """Stochastic decode: draw each dim from its logistic and clamp to the
    unit interval (the open outer bins absorb the tails). Mean decode rounds
    rare discrete transitions like gripper closing down to nothing; sampling
    keeps them at their true rate."""
    raw = h @ params["head.w0"].data + params["head.b0"].data
    mu = np_sigmoid(raw[:, :spec.act_dim])
    log_s = np.clip(raw[:, spec.act_dim:], LOG_SCALE_MIN, LOG_SCALE_MAX)
    u = rng.uniform(1e-6, 1.0 - 1e-6, size=mu.shape)
    x = mu + np.exp(log_s) * np.log(u / (1.0 - u))
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def kl_diag_np(mu_q, log_q, mu_p, log_p) -> np.ndarray:
    var_ratio = np.exp(2.0 * (log_q - log_p))
    sq = (mu_q - mu_p) ** 2 * np.exp(-2.0 * log_p)
    return ((log_p - log_q) + 0.5 * (var_ratio + sq) - 0.5).sum(axis=-1)


def disc_logistic_bin_probs(mu: float, log_s: float) -> np.ndarray:
    """All 256 bin masses for one dim, float64. Outer bins are open, so
    this telescopes to exactly 1."""
    s = math.exp(np.clip(log_s, LOG_SCALE_MIN, LOG_SCALE_MAX))
    edges = np.arange(1, BINS) / BINS
    cdf = 1.0 / (1.0 + np.exp(-(edges - mu) / s))
    cdf = np.concatenate([[0.0], cdf, [1.0]])
    return np.diff(cdf)
