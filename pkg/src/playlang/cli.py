"""Command line for the pipeline: collect data, annotate it, train, score,
sweep, serve, and poke at artifacts.

Every run writes a manifest (config hash, input/output file hashes, seeds)
next to its outputs, and nothing here timestamps anything, so a rerun with
the same inputs produces byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, load_config
from .data import (
    LangExample, PlayCorpus, compute_obs_stats, pair_with_language,
    window_count,
)
from .env import TASKS
from .experiments import (
    CONDITIONS, Corpora, ExperimentError, TrainedModel, build_report,
    ensure_trained, evaluate_model, load_policy_checkpoint, make_policy,
    metrics_row, render_table, save_policy_checkpoint, score_models,
)
from .harness import (
    BenchmarkSpec, build_benchmark, build_ood_benchmark, load_chain_rules,
    t_interval,
)
from .language import (
    SynonymLexicon, make_phrase_fn, pretrained_embed, training_vocabulary,
)
from .nets import ModelSpec
from .oracle import collect_demos, collect_play
from .storage import (
    StorageError, load_checkpoint, load_episodes, load_pairs, save_episodes,
    save_pairs, write_manifest,
)
from .trainer import GoalWindowSampler, LangWindowSampler, Trainer, TrainSettings

BENCH_STAGES = {"multi": 1, "chain2": 2, "chain3": 3, "chain4": 4}


class CliError(RuntimeError):
    """User-facing operational failure; message printed without traceback."""


def _write_json(path, payload) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _stats_sidecar(path, episodes) -> None:
    _write_json(path, compute_obs_stats(episodes).to_dict())


# ---------------------------------------------------------------------------
# subcommands


def cmd_collect_play(args, cfg: Config, out: Path) -> int:
    episodes = collect_play(
        args.ticks, seed=args.seed, noise_sigma=cfg.oracle.noise_sigma,
        wander_ticks=(cfg.oracle.wander_ticks_min, cfg.oracle.wander_ticks_max))
    data = out / "play.jsonl"
    save_episodes(data, episodes)
    _stats_sidecar(out / "stats.json", episodes)
    write_manifest(out / "manifest.json", "collect-play", cfg.to_dict(),
                   outputs={"play": data, "stats": out / "stats.json"},
                   seeds=[args.seed])
    print(f"{len(episodes)} episodes, {sum(e.length for e in episodes)} ticks "
          f"-> {data}")
    return 0


def cmd_collect_demos(args, cfg: Config, out: Path) -> int:
    tasks = args.tasks.split(",") if args.tasks else list(TASKS)
    unknown = [t for t in tasks if t not in TASKS]
    if unknown:
        raise CliError(f"unknown tasks {unknown}")
    demos = []
    for task in tasks:
        demos.extend(collect_demos(task, args.per_task, seed=args.seed))
    data = out / "demos.jsonl"
    save_episodes(data, demos)
    _stats_sidecar(out / "stats.json", demos)
    write_manifest(out / "manifest.json", "collect-demos", cfg.to_dict(),
                   outputs={"demos": data, "stats": out / "stats.json"},
                   seeds=[args.seed])
    print(f"{len(demos)} demos over {len(tasks)} tasks -> {data}")
    return 0


def cmd_relabel(args, cfg: Config, out: Path) -> int:
    episodes = load_episodes(args.data)
    per_episode = [window_count(ep.length + 1, cfg.data.w_low, cfg.data.w_high)
                   for ep in episodes]
    summary = {"w_low": cfg.data.w_low, "w_high": cfg.data.w_high,
               "episodes": len(episodes), "per_episode": per_episode,
               "total_windows": int(sum(per_episode))}
    _write_json(out / "windows.json", summary)
    write_manifest(out / "manifest.json", "relabel", cfg.to_dict(),
                   inputs={"data": args.data},
                   outputs={"windows": out / "windows.json"})
    print(f"{summary['total_windows']} goal windows across "
          f"{len(episodes)} episodes -> {out / 'windows.json'}")
    return 0


def cmd_annotate(args, cfg: Config, out: Path) -> int:
    episodes = load_episodes(args.data)
    lexicon = SynonymLexicon.load()
    rows = pair_with_language(
        episodes, args.pairs if args.pairs else cfg.data.lang_pairs,
        make_phrase_fn(lexicon), seed=args.seed,
        motion_fraction=cfg.data.motion_fraction,
        w_low=cfg.data.w_low, w_high=cfg.data.w_high)
    data = out / "pairs.jsonl"
    save_pairs(data, rows)
    write_manifest(out / "manifest.json", "annotate", cfg.to_dict(),
                   inputs={"data": args.data}, outputs={"pairs": data},
                   seeds=[args.seed])
    labels = sorted({r.label for r in rows})
    print(f"{len(rows)} annotated windows ({len(labels)} labels) -> {data}")
    return 0


def _infer_condition(contexts: tuple) -> str:
    table = {("goal",): "lfp", ("goal", "lang"): "langlfp",
             ("goal", "lang_pretrained"): "transfer", ("lang",): "langbc",
             ("lang_pretrained",): "langbc"}
    return table.get(tuple(contexts), "custom")


def cmd_train(args, cfg: Config, out: Path) -> int:
    if args.head:
        cfg.model.head = args.head
    if args.lang:
        cfg.model.language = args.lang
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.steps is not None:
        cfg.train.steps = args.steps
    cfg.validate()

    if not args.goal_data and not args.pairs:
        raise CliError("train needs --goal-data and/or --lang-data + --pairs")
    if bool(args.lang_data) != bool(args.pairs):
        raise CliError("--lang-data and --pairs go together")

    lexicon = SynonymLexicon.load()
    vocab = training_vocabulary(lexicon)
    lang_kind = "lang" if cfg.model.language == "scratch" else "lang_pretrained"
    contexts = (("goal",) if args.goal_data else ()) + \
        ((lang_kind,) if args.pairs else ())
    spec = ModelSpec(
        contexts=contexts, head=cfg.model.head, hidden=cfg.model.hidden,
        z_dim=cfg.model.z_dim, plan_dim=cfg.model.plan_dim,
        emb_dim=cfg.model.emb_dim, beta=cfg.model.beta,
        vocab_size=vocab.size if "lang" in contexts else 0)

    datasets, inputs = [], {}
    stats_eps = None
    if args.goal_data:
        goal_eps = load_episodes(args.goal_data)
        inputs["goal_data"] = args.goal_data
        datasets.append(("goal", GoalWindowSampler(
            PlayCorpus(goal_eps), cfg.data.w_low, cfg.data.w_high)))
        stats_eps = goal_eps
    if args.pairs:
        lang_eps = load_episodes(args.lang_data)
        rows = load_pairs(args.pairs)[:cfg.data.lang_pairs]
        if len(rows) < cfg.data.lang_pairs:
            raise CliError(f"{args.pairs} holds {len(rows)} pairs, "
                           f"config wants {cfg.data.lang_pairs}")
        inputs["lang_data"] = args.lang_data
        inputs["pairs"] = args.pairs
        encode = (vocab.encode if lang_kind == "lang"
                  else lambda text: pretrained_embed(text, lexicon))
        datasets.append(("lang", LangWindowSampler(
            PlayCorpus(lang_eps), rows, encode, lang_kind)))
        if stats_eps is None:
            stats_eps = lang_eps
    stats = compute_obs_stats(stats_eps)

    settings = TrainSettings(steps=cfg.train.steps,
                             batch_size=cfg.data.batch_size,
                             lr=cfg.model.lr, seed=cfg.train.seed,
                             log_every=cfg.train.log_every)
    trainer = Trainer(spec, datasets, settings, stats=stats)
    names = [n for n, _ in datasets]
    metrics = out / "metrics.jsonl"
    metrics.parent.mkdir(parents=True, exist_ok=True)
    with open(metrics, "w") as sink:
        def log(record):
            row = metrics_row(record, names, spec.beta)
            sink.write(json.dumps(row) + "\n")
            print(f"step {row['step']:6d}  loss {row['loss_total']:.4f}")
        trainer.run(on_log=log)

    label = args.label or _infer_condition(contexts)
    model = TrainedModel(
        trainer.params, spec, stats,
        {"lang": "scratch", "lang_pretrained": "pretrained"}.get(lang_kind)
        if args.pairs else None,
        vocab if "lang" in contexts else None,
        {"condition": label, "steps": cfg.train.steps, "seed": cfg.train.seed,
         "k_pairs": cfg.data.lang_pairs if args.pairs else 0,
         "hidden": cfg.model.hidden, "lr": cfg.model.lr,
         "batch_size": cfg.data.batch_size, "datasets": names,
         "sources": dict(inputs),
         "final_loss": trainer.history[-1]["loss"] if trainer.history else None})
    ckpt = out / "model.ckpt"
    save_policy_checkpoint(ckpt, model)
    write_manifest(out / "manifest.json", "train", cfg.to_dict(),
                   inputs=inputs,
                   outputs={"checkpoint": ckpt, "metrics": metrics},
                   seeds=[cfg.train.seed])
    print(f"checkpoint -> {ckpt}")
    return 0


def _build_bench(name: str, cfg: Config, lexicon, args) -> BenchmarkSpec:
    seeds = tuple(cfg.eval.seeds)
    if name == "multi-ood":
        bench = build_ood_benchmark(lexicon, seed=args.bench_seed,
                                    seeds=seeds, pool_size=args.pool_size)
    elif name in BENCH_STAGES:
        max_chains = args.max_chains if args.max_chains else \
            (None if BENCH_STAGES[name] == 1 else 25)
        bench = build_benchmark(name, BENCH_STAGES[name], lexicon,
                                seed=args.bench_seed, max_chains=max_chains,
                                init_mode=args.init, seeds=seeds,
                                pool_size=args.pool_size)
    else:
        raise CliError(f"unknown benchmark {name!r} "
                       f"(choices: {sorted(BENCH_STAGES)} + ['multi-ood'])")
    bench.timeout_ticks = cfg.eval.timeout_ticks
    bench.advance_delay = cfg.eval.advance_delay
    return bench


def cmd_eval(args, cfg: Config, out: Path) -> int:
    lexicon = SynonymLexicon.load()
    paths = [p for p in args.checkpoints.split(",") if p]
    if not paths:
        raise CliError("--checkpoints is empty")
    models = [(p, load_policy_checkpoint(p)) for p in paths]
    groups: dict[str, dict] = {}
    for i, (p, m) in enumerate(models):
        cond = m.meta.get("condition", Path(p).stem)
        groups.setdefault(cond, {})[m.meta.get("seed", i)] = m

    bench_names = [b for b in args.benchmark.split(",") if b]
    scores: dict[str, dict] = {}
    out.mkdir(parents=True, exist_ok=True)
    outputs = {}
    for bname in bench_names:
        bench = _build_bench(bname, cfg, lexicon, args)
        for cond, by_seed in groups.items():
            log_path = out / f"rollouts-{bname}-{cond}.jsonl"
            with open(log_path, "w") as sink:
                per_model = {}
                for tseed, model in sorted(by_seed.items()):
                    def on_row(row):
                        sink.write(json.dumps(
                            {"benchmark": bname, "condition": cond,
                             "train_seed": tseed, **row}) + "\n")
                    per_model[tseed] = evaluate_model(
                        model, bench, lexicon, on_row=on_row)
            mean, hw = t_interval([r.mean for r in per_model.values()])
            scores.setdefault(cond, {})[bname] = {
                "mean": mean, "half_width": hw,
                "per_train_seed": {s: r.mean for s, r in per_model.items()},
                "results": per_model}
            outputs[f"rollouts-{bname}-{cond}"] = log_path
            print(f"{bname:10s} {cond:12s} {100 * mean:5.1f} ± {100 * hw:.1f}")

    # conditions outside the known matrix still get a table row
    for cond in scores:
        from .experiments import ROW_META
        ROW_META.setdefault(cond, (cond, "states", "custom", "custom"))
    report = build_report(
        {c: {b: {k: v for k, v in s.items() if k != "results"}
             for b, s in scores[c].items()}
         for c in scores},
        bench_names)
    _write_json(out / "report.json", report)
    (out / "report.txt").write_text(report["table"])
    outputs["report"] = out / "report.json"
    outputs["table"] = out / "report.txt"
    write_manifest(out / "manifest.json", "eval", cfg.to_dict(),
                   inputs={f"ckpt{i}": p for i, p in enumerate(paths)},
                   outputs=outputs, seeds=cfg.eval.seeds)
    print(report["table"], end="")
    return 0


def _corpora_from_files(args, lexicon) -> Corpora:
    play = load_episodes(args.play)
    play_rows = load_pairs(args.pairs)
    demos = load_episodes(args.demos) if args.demos else []
    demo_rows = load_pairs(args.demo_pairs) if args.demo_pairs else []
    return Corpora(play, demos, play_rows, demo_rows, lexicon,
                   training_vocabulary(lexicon),
                   {"sources": {"play": args.play, "pairs": args.pairs,
                                "demos": args.demos or "",
                                "demo_pairs": args.demo_pairs or ""}})


def cmd_ablate(args, cfg: Config, out: Path) -> int:
    lexicon = SynonymLexicon.load()
    corpora = _corpora_from_files(args, lexicon)
    cache = Path(args.cache) if args.cache else out / "cache"
    train_seeds = [int(s) for s in args.train_seeds.split(",")]
    bench = _build_bench("multi", cfg, lexicon, args)
    kw = dict(steps=cfg.train.steps, hidden=cfg.model.hidden,
              lr=cfg.model.lr, batch_size=cfg.data.batch_size)

    rows = []
    if args.sweep == "pairs":
        for k in [int(v) for v in args.k_values.split(",")]:
            models = {s: ensure_trained(cache, "langlfp", corpora, seed=s,
                                        k_pairs=k, **kw)
                      for s in train_seeds}
            entry = score_models(models, bench, lexicon)
            rows.append({"k_pairs": k, "mean": entry["mean"],
                         "half_width": entry["half_width"],
                         "per_train_seed": entry["per_train_seed"]})
            print(f"K={k:5d}  {100 * entry['mean']:5.1f} "
                  f"± {100 * entry['half_width']:.1f}")
        sweep = {"sweep": "pairs", "benchmark": "multi", "rows": rows}
    elif args.sweep == "capacity":
        if not (args.demos and args.demo_pairs):
            raise CliError("capacity sweep needs --demos and --demo-pairs")
        for width in [int(v) for v in args.widths.split(",")]:
            for cond in ("restricted", "langbc"):
                models = {s: ensure_trained(cache, cond, corpora, seed=s,
                                            k_pairs=cfg.data.lang_pairs,
                                            **{**kw, "hidden": width})
                          for s in train_seeds}
                entry = score_models(models, bench, lexicon)
                rows.append({"hidden": width, "condition": cond,
                             "mean": entry["mean"],
                             "half_width": entry["half_width"],
                             "per_train_seed": entry["per_train_seed"]})
                print(f"hidden={width:4d} {cond:10s} "
                      f"{100 * entry['mean']:5.1f} "
                      f"± {100 * entry['half_width']:.1f}")
        sweep = {"sweep": "capacity", "benchmark": "multi", "rows": rows}
    else:
        raise CliError(f"unknown sweep {args.sweep!r}")

    _write_json(out / f"ablation-{args.sweep}.json", sweep)
    write_manifest(out / "manifest.json", "ablate", cfg.to_dict(),
                   inputs={k: v for k, v in
                           corpora.meta["sources"].items() if v},
                   outputs={"ablation": out / f"ablation-{args.sweep}.json"},
                   seeds=train_seeds)
    return 0


def cmd_serve(args, cfg: Config, out: Path) -> int:
    from .service import run_service
    run_service(cfg, checkpoint=args.checkpoint, oracle=args.oracle)
    return 0


def _inspect_checkpoint(path) -> None:
    config, arrays = load_checkpoint(path)
    print(f"checkpoint {path}")
    print(f"  kind: {config.get('kind')}")
    if "model_spec" in config:
        ms = config["model_spec"]
        print(f"  model: head={ms['head']} hidden={ms['hidden']} "
              f"contexts={','.join(ms['contexts'])}")
    meta = config.get("meta", {})
    if meta:
        keep = {k: meta[k] for k in
                ("condition", "steps", "seed", "k_pairs", "final_loss")
                if k in meta}
        print(f"  meta: {json.dumps(keep)}")
    n_float = sum(int(np.prod(a.shape)) for a in arrays.values())
    print(f"  arrays: {len(arrays)} ({n_float} floats)")


def cmd_inspect(args, cfg: Config, out: Path) -> int:
    path = Path(args.path)
    if not path.exists():
        raise CliError(f"no such file: {path}")
    head = path.open("rb").read(4)
    if head == b"PLCD":
        _inspect_checkpoint(path)
        return 0
    if path.suffix == ".jsonl":
        first = path.read_text().lstrip().splitlines()
        probe = json.loads(first[0]) if first else {}
        if "observations" in probe:
            eps = load_episodes(path)
            events: dict[str, int] = {}
            for ep in eps:
                for name, _ in ep.events:
                    events[name] = events.get(name, 0) + 1
            print(f"episodes {path}")
            print(f"  {len(eps)} episodes, {sum(e.length for e in eps)} ticks")
            print(f"  events: {json.dumps(dict(sorted(events.items())))}")
        elif "instruction" in probe:
            rows = load_pairs(path)
            labels: dict[str, int] = {}
            for r in rows:
                labels[r.label] = labels.get(r.label, 0) + 1
            print(f"pairs {path}")
            print(f"  {len(rows)} rows")
            print(f"  labels: {json.dumps(dict(sorted(labels.items())))}")
        else:
            lines = [json.loads(l) for l in first]
            print(f"jsonl {path}: {len(lines)} records, "
                  f"keys {sorted(lines[0])}")
        return 0
    payload = json.loads(path.read_text())
    if isinstance(payload, dict) and "table" in payload:
        print(payload["table"], end="")
    else:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# wiring


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE", help="config override")
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="playlang",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("collect-play", parents=[common],
                       help="record a scripted play stream")
    s.add_argument("--ticks", type=int, default=200_000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_collect_play)

    s = sub.add_parser("collect-demos", parents=[common],
                       help="record per-task demonstrations")
    s.add_argument("--per-task", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tasks", help="comma list, default all")
    s.set_defaults(fn=cmd_collect_demos)

    s = sub.add_parser("relabel", parents=[common],
                       help="count hindsight goal windows in a dataset")
    s.add_argument("--data", required=True)
    s.set_defaults(fn=cmd_relabel)

    s = sub.add_parser("annotate", parents=[common],
                       help="write hindsight instructions for windows")
    s.add_argument("--data", required=True)
    s.add_argument("--pairs", type=int, default=0,
                   help="annotation budget (default: config lang_pairs)")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_annotate)

    s = sub.add_parser("train", parents=[common], help="train a policy")
    s.add_argument("--goal-data", help="episodes for goal windows")
    s.add_argument("--lang-data", help="episodes behind annotated windows")
    s.add_argument("--pairs", help="annotated windows (jsonl)")
    s.add_argument("--head", choices=["lmp", "gcbc"])
    s.add_argument("--lang", choices=["scratch", "transfer"])
    s.add_argument("--seed", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--label", help="condition label stored in the checkpoint")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", parents=[common],
                       help="score checkpoints on benchmarks")
    s.add_argument("--checkpoints", required=True, help="comma list")
    s.add_argument("--benchmark", default="multi",
                   help="comma list: multi, chain2..4, multi-ood")
    s.add_argument("--max-chains", type=int, default=0,
                   help="subsample chains (0 = benchmark default)")
    s.add_argument("--pool-size", type=int, default=6)
    s.add_argument("--init", choices=["neutral", "correlated"],
                   default="neutral")
    s.add_argument("--bench-seed", type=int, default=0)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("ablate", parents=[common],
                       help="pair-budget or capacity sweep")
    s.add_argument("--sweep", choices=["pairs", "capacity"], required=True)
    s.add_argument("--play", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--demos")
    s.add_argument("--demo-pairs")
    s.add_argument("--cache", help="checkpoint cache dir (default out/cache)")
    s.add_argument("--train-seeds", default="0,1,2")
    s.add_argument("--k-values", default="250,500,1000,2000")
    s.add_argument("--widths", default="32,64,128")
    s.add_argument("--max-chains", type=int, default=0)
    s.add_argument("--pool-size", type=int, default=6)
    s.add_argument("--init", default="neutral")
    s.add_argument("--bench-seed", type=int, default=0)
    s.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("serve", parents=[common],
                       help="run the live instruction service")
    s.add_argument("--checkpoint", help="policy checkpoint")
    s.add_argument("--oracle", action="store_true",
                   help="serve the scripted oracle instead of a checkpoint")
    s.set_defaults(fn=cmd_serve)

    s = sub.add_parser("inspect", parents=[common],
                       help="summarize a dataset, checkpoint, or report")
    s.add_argument("--path", required=True)
    s.set_defaults(fn=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        cfg = load_config(args.config, args.set)
        out = Path(args.out) if args.out else Path("out") / args.command
        out.mkdir(parents=True, exist_ok=True)
        return args.fn(args, cfg, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (CliError, ExperimentError, StorageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1


def entry() -> None:
    sys.exit(main(sys.argv[1:]))
