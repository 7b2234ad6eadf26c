"""Training conditions over shared corpora, checkpoints, and score reports.

Every condition trains the same recurrent latent-plan model; they differ
only in which datasets feed it. That makes the comparison a statement about
data, not architecture:

    langlfp     goal windows from play  + annotated play windows
    transfer    same, but sentences arrive as frozen embedding vectors
    restricted  goal windows from a play subset matched to the demo tick
                budget; annotated windows still come from the full stream
    langbc      annotated windows from task demos, nothing else
    lfp         goal windows from play, no language at all

Language-conditioned models are scored by instruction-following; lfp is
scored by conditioning on a goal state a reference script reached in a
cloned environment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .data import (
    LangExample, ObsStats, PlayCorpus, compute_obs_stats, pair_with_language,
)
from .env import TASKS
from .harness import (
    BenchmarkSpec, EvalResult, GoalAdapter, InstructionAdapter, run_benchmark,
    t_interval,
)
from .language import (
    SynonymLexicon, Vocabulary, make_phrase_fn, pretrained_embed,
    training_vocabulary,
)
from .nets import ModelSpec
from .oracle import collect_demos, collect_play
from .policy import Policy
from .seeding import rng_for
from .storage import load_checkpoint, save_checkpoint
from .trainer import GoalWindowSampler, LangWindowSampler, Trainer, TrainSettings


class ExperimentError(RuntimeError):
    pass


CONDITIONS = ("langlfp", "transfer", "restricted", "langbc", "lfp")

# condition -> (display name, input, training source, task conditioning)
ROW_META = {
    "langlfp":    ("LangLfP", "states", "play", "text"),
    "transfer":   ("TransferLangLfP", "states", "play", "text, frozen embedder"),
    "restricted": ("Restricted LangLfP", "states", "restricted play", "text"),
    "langbc":     ("LangBC", "states", "task demos", "text"),
    "lfp":        ("LfP", "states", "play", "goal state"),
}


# ---------------------------------------------------------------------------
# corpora


@dataclass
class Corpora:
    """Everything the condition recipes draw from. Collected once per data
    seed and shared by all conditions so they differ only as intended."""
    play: list
    demos: list
    play_rows: list
    demo_rows: list
    lexicon: SynonymLexicon
    vocab: Vocabulary
    meta: dict = field(default_factory=dict)

    @property
    def demo_ticks(self) -> int:
        return sum(ep.length for ep in self.demos)


def collect_corpora(play_ticks=200_000, demos_per_task=30, pair_budget=2000,
                    demo_pair_budget=2000, seed=0,
                    lexicon: SynonymLexicon | None = None,
                    tasks=TASKS) -> Corpora:
    """Play stream, per-task demos, and annotation pools sized to the largest
    budget anyone will ask for; smaller budgets take prefixes."""
    lexicon = lexicon if lexicon is not None else SynonymLexicon.load()
    phrase = make_phrase_fn(lexicon)
    play = collect_play(play_ticks, seed=seed)
    demos = []
    for task in tasks:
        demos.extend(collect_demos(task, demos_per_task, seed=seed))
    play_rows = pair_with_language(play, pair_budget, phrase, seed=seed)
    demo_rows = pair_with_language(demos, demo_pair_budget, phrase,
                                   seed=seed + 1)
    meta = {"play_ticks": int(play_ticks),
            "demos_per_task": int(demos_per_task),
            "pair_budget": int(pair_budget),
            "demo_pair_budget": int(demo_pair_budget),
            "seed": int(seed)}
    return Corpora(play, demos, play_rows, demo_rows, lexicon,
                   training_vocabulary(lexicon), meta)


def restrict_episodes(episodes, tick_budget: int, seed: int = 0) -> list:
    """Random episode subset whose total tick count just reaches the budget.
    Subsampling happens at the episode level, before any relabeling, so the
    surviving stream is a plain shorter play stream."""
    if not episodes:
        raise ExperimentError("nothing to restrict")
    order = rng_for("restrict", seed).permutation(len(episodes))
    chosen, total = [], 0
    for i in order:
        chosen.append(int(i))
        total += episodes[i].length
        if total >= tick_budget:
            break
    return [episodes[i] for i in sorted(chosen)]


# ---------------------------------------------------------------------------
# condition recipes


def condition_contexts(name: str) -> tuple:
    table = {"langlfp": ("goal", "lang"),
             "transfer": ("goal", "lang_pretrained"),
             "restricted": ("goal", "lang"),
             "langbc": ("lang",),
             "lfp": ("goal",)}
    if name not in table:
        raise ExperimentError(f"unknown condition {name!r}")
    return table[name]


def make_model_spec(name: str, vocab: Vocabulary, hidden: int = 128) -> ModelSpec:
    contexts = condition_contexts(name)
    vocab_size = vocab.size if "lang" in contexts else 0
    return ModelSpec(contexts=contexts, head="lmp", hidden=hidden,
                     vocab_size=vocab_size)


def build_datasets(name: str, corpora: Corpora, k_pairs: int = 1000,
                   hidden: int = 128, restrict_seed: int = 0):
    """Returns (model spec, [(dataset name, sampler)], obs stats). Stats are
    computed over the episodes behind the condition's goal data (or its only
    data), since that is the state distribution the policy will live in."""
    vocab = corpora.vocab
    spec = make_model_spec(name, vocab, hidden)
    play = PlayCorpus(corpora.play)

    def lang_sampler(corpus, rows):
        if "lang_pretrained" in spec.contexts:
            embed = lambda text: pretrained_embed(text, corpora.lexicon)
            return LangWindowSampler(corpus, rows, embed, "lang_pretrained")
        return LangWindowSampler(corpus, rows, vocab.encode, "lang")

    if name == "lfp":
        return spec, [("play_goal", GoalWindowSampler(play))], \
            compute_obs_stats(corpora.play)
    if name == "langbc":
        rows = corpora.demo_rows[:k_pairs]
        if len(rows) < k_pairs:
            raise ExperimentError(
                f"demo pairs exhausted: {len(rows)} < {k_pairs}")
        demo_corpus = PlayCorpus(corpora.demos)
        return spec, [("demo_lang", lang_sampler(demo_corpus, rows))], \
            compute_obs_stats(corpora.demos)

    rows = corpora.play_rows[:k_pairs]
    if len(rows) < k_pairs:
        raise ExperimentError(f"play pairs exhausted: {len(rows)} < {k_pairs}")
    if name == "restricted":
        subset = restrict_episodes(corpora.play, corpora.demo_ticks,
                                   restrict_seed)
        return spec, [("play_goal", GoalWindowSampler(PlayCorpus(subset))),
                      ("play_lang", lang_sampler(play, rows))], \
            compute_obs_stats(subset)
    if name in ("langlfp", "transfer"):
        return spec, [("play_goal", GoalWindowSampler(play)),
                      ("play_lang", lang_sampler(play, rows))], \
            compute_obs_stats(corpora.play)
    raise ExperimentError(f"unknown condition {name!r}")


# ---------------------------------------------------------------------------
# training and checkpoints


@dataclass
class TrainedModel:
    params: dict
    spec: ModelSpec
    stats: ObsStats
    language: str | None      # "scratch", "pretrained", or None
    vocab: Vocabulary | None
    meta: dict = field(default_factory=dict)

    @property
    def uses_language(self) -> bool:
        return self.language is not None


def _language_mode(name: str):
    contexts = condition_contexts(name)
    if "lang" in contexts:
        return "scratch"
    if "lang_pretrained" in contexts:
        return "pretrained"
    return None


def metrics_row(record: dict, dataset_names, beta: float) -> dict:
    """One training-log line: total loss, per-dataset losses, and the mean
    reconstruction/KL split across datasets."""
    per, nlls, kls = {}, [], []
    for n in dataset_names:
        nll = float(record[f"{n}/nll"])
        kl = float(record.get(f"{n}/kl", 0.0))
        per[n] = nll + beta * kl
        nlls.append(nll)
        kls.append(kl)
    return {"step": int(record["step"]),
            "loss_total": float(record["loss"]),
            "loss_per_dataset": per,
            "kl": float(np.mean(kls)),
            "nll": float(np.mean(nlls))}


def train_condition(name: str, corpora: Corpora, *, steps=2000, seed=0,
                    k_pairs=1000, hidden=128, lr=2e-4, batch_size=32,
                    log_every=50, metrics_path=None, on_log=None) -> TrainedModel:
    spec, datasets, stats = build_datasets(name, corpora, k_pairs, hidden)
    settings = TrainSettings(steps=steps, batch_size=batch_size, lr=lr,
                             seed=seed, log_every=log_every)
    trainer = Trainer(spec, datasets, settings, stats=stats)
    names = [n for n, _ in datasets]

    sink = None
    if metrics_path is not None:
        Path(metrics_path).parent.mkdir(parents=True, exist_ok=True)
        sink = open(metrics_path, "w")

    def log(record):
        row = metrics_row(record, names, spec.beta)
        if sink is not None:
            sink.write(json.dumps(row) + "\n")
        if on_log is not None:
            on_log(row)

    try:
        trainer.run(on_log=log)
    finally:
        if sink is not None:
            sink.close()

    meta = {"condition": name, "steps": int(steps), "seed": int(seed),
            "k_pairs": int(k_pairs), "hidden": int(hidden), "lr": lr,
            "batch_size": int(batch_size), "datasets": names,
            "corpora": dict(corpora.meta),
            "final_loss": trainer.history[-1]["loss"] if trainer.history else None}
    vocab = corpora.vocab if "lang" in spec.contexts else None
    return TrainedModel(trainer.params, spec, stats, _language_mode(name),
                        vocab, meta)


def save_policy_checkpoint(path, model: TrainedModel) -> None:
    config = {"kind": "policy",
              "model_spec": model.spec.to_dict(),
              "language": model.language,
              "vocab": model.vocab.to_dict() if model.vocab is not None else None,
              "obs_stats": model.stats.to_dict(),
              "meta": model.meta}
    save_checkpoint(path, config, {k: t.data for k, t in model.params.items()})


def load_policy_checkpoint(path) -> TrainedModel:
    config, arrays = load_checkpoint(path)
    if config.get("kind") != "policy":
        raise ExperimentError(f"{path} is not a policy checkpoint")
    spec = ModelSpec.from_dict(config["model_spec"])
    params = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    vocab = Vocabulary.from_dict(config["vocab"]) if config.get("vocab") else None
    stats = ObsStats.from_dict(config["obs_stats"])
    return TrainedModel(params, spec, stats, config.get("language"), vocab,
                        config.get("meta", {}))


def checkpoint_name(name: str, *, hidden, k_pairs, steps, seed, lr=2e-4) -> str:
    return f"{name}-h{hidden}-k{k_pairs}-s{steps}-lr{lr:g}-t{seed}.ckpt"


def ensure_trained(cache_dir, name: str, corpora, **kw) -> TrainedModel:
    """Load the checkpoint for this exact configuration, or train and save
    it. `corpora` may be a zero-argument callable so callers can defer the
    expensive collection to the first cache miss."""
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    fname = checkpoint_name(name,
                            hidden=kw.get("hidden", 128),
                            k_pairs=kw.get("k_pairs", 1000),
                            steps=kw.get("steps", 2000),
                            seed=kw.get("seed", 0),
                            lr=kw.get("lr", 2e-4))
    path = cache_dir / fname
    if path.exists():
        return load_policy_checkpoint(path)
    if callable(corpora):
        corpora = corpora()
    kw.setdefault("metrics_path", str(path.with_suffix(".metrics.jsonl")))
    model = train_condition(name, corpora, **kw)
    save_policy_checkpoint(path, model)
    return model


# ---------------------------------------------------------------------------
# evaluation


def make_policy(model: TrainedModel, lexicon: SynonymLexicon, seed=0,
                replan_every=16) -> Policy:
    return Policy(model.params, model.spec, vocab=model.vocab,
                  lexicon=lexicon, seed=seed, stats=model.stats,
                  replan_every=replan_every)


def evaluate_model(model: TrainedModel, bench: BenchmarkSpec,
                   lexicon: SynonymLexicon, sim_cap=300, on_row=None) -> EvalResult:
    """Benchmark one trained model. Language models follow the instruction
    pools; goal-only models chase a simulated reference final state."""
    def make_adapter(seed):
        policy = make_policy(model, lexicon, seed=seed)
        if model.uses_language:
            return InstructionAdapter(policy)
        return GoalAdapter(policy, sim_cap=sim_cap)
    return run_benchmark(make_adapter, bench, on_row=on_row)


def score_models(models, bench, lexicon, sim_cap=300) -> dict:
    """Evaluate one model per training seed, then aggregate the per-model
    benchmark means with a t-interval over training seeds."""
    per_model = {}
    for seed, model in models.items():
        per_model[int(seed)] = evaluate_model(model, bench, lexicon,
                                              sim_cap=sim_cap)
    mean, hw = t_interval([r.mean for r in per_model.values()])
    return {"mean": mean, "half_width": hw,
            "per_train_seed": {s: r.mean for s, r in per_model.items()},
            "results": per_model}


# ---------------------------------------------------------------------------
# reports


def score_cell(entry) -> str:
    return f"{100 * entry['mean']:.1f} ± {100 * entry['half_width']:.1f}"


def render_table(rows, bench_names) -> str:
    """Plain text table: one row per condition, one score column per
    benchmark, percentages with half-widths."""
    headers = ["Method", "Input", "Training source", "Task conditioning"]
    headers += list(bench_names)
    body = []
    for row in rows:
        method, inp, source, cond = ROW_META[row["condition"]]
        cells = [method, inp, source, cond]
        for b in bench_names:
            entry = row["scores"].get(b)
            cells.append(score_cell(entry) if entry else "-")
        body.append(cells)
    widths = [max(len(headers[i]), *(len(r[i]) for r in body)) if body
              else len(headers[i]) for i in range(len(headers))]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    lines = [fmt(headers), fmt(["-" * w for w in widths])]
    lines += [fmt(r) for r in body]
    return "\n".join(lines) + "\n"


def build_report(scores: dict, bench_names) -> dict:
    """scores: condition -> benchmark -> score_models() output. Returns a
    JSON-ready report; the text table sits under 'table'."""
    rows = []
    for name in CONDITIONS:
        if name not in scores:
            continue
        method, inp, source, cond = ROW_META[name]
        entry = {"condition": name, "method": method, "input": inp,
                 "training_source": source, "task_conditioning": cond,
                 "scores": {}}
        for b in bench_names:
            if b in scores[name]:
                s = scores[name][b]
                entry["scores"][b] = {
                    "mean": s["mean"], "half_width": s["half_width"],
                    "per_train_seed": s["per_train_seed"]}
        rows.append(entry)
    return {"benchmarks": list(bench_names), "rows": rows,
            "table": render_table(rows, bench_names)}
