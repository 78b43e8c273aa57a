"""Command-line entry point: gen / train / eval / ablate / tree / oracle."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infosieve",
        description="Learn minimum-length binary category codes and "
                    "evaluate category discovery on them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic hierarchical dataset")
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--depth", type=int, default=3)
    p_gen.add_argument("--per-leaf", type=int, default=20)
    p_gen.add_argument("--dim", type=int, default=64)
    p_gen.add_argument("--noise", type=float, default=0.05)
    p_gen.add_argument("--level-scale", type=float, default=0.7)
    p_gen.add_argument("--out", required=True, help="embedding file to write")

    p_train = sub.add_parser("train", help="train and evaluate a model")
    _add_run_flags(p_train)

    p_eval = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", help="embedding file overriding the stored config")

    p_ablate = sub.add_parser("ablate", help="re-train with loss terms switched off")
    _add_run_flags(p_ablate)
    p_ablate.add_argument(
        "--switches",
        default="full;c_in;c_code;code_cond;length;mask_cond;cat",
        help="rows separated by ';', switches in a row by ','; 'full' = none off",
    )

    p_tree = sub.add_parser("tree", help="dump the learned category tree")
    p_tree.add_argument("--checkpoint", required=True)
    p_tree.add_argument("--data", help="embedding file overriding the stored config")
    p_tree.add_argument("--out", help="write the text dump here (stdout otherwise)")
    p_tree.add_argument("--dot", help="also write a DOT graph export here")

    p_oracle = sub.add_parser("oracle", help="exhaustive minimum-length encoding search")
    p_oracle.add_argument("--labels", required=True,
                          help="comma-separated category per sample, e.g. A,A,B,B")
    p_oracle.add_argument("--max-n", type=int, default=8)
    return parser


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with a full run configuration")
    p.add_argument("--data", dest="embedding_path", help="embedding file to train on")
    p.add_argument("--paper-defaults", action="store_true",
                   help="use the published 200-epoch/batch-128 profile")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int, dest="n_epochs")
    p.add_argument("--batch", type=int, dest="batch_size")
    p.add_argument("--code-len", type=int, dest="code_len")
    p.add_argument("--depth", type=int)
    p.add_argument("--per-leaf", type=int, dest="per_leaf")
    p.add_argument("--dim", type=int)
    p.add_argument("--noise", type=float, dest="noise_sigma")
    p.add_argument("--lr", type=float)
    p.add_argument("--eval-space", choices=("code", "feature"), dest="eval_space")
    p.add_argument("--eval-every", type=int, dest="eval_every")
    p.add_argument("--deterministic", action="store_true", default=None)
    p.add_argument("--out", dest="out_dir")
    for flag, field in (
        ("--alpha", "alpha"), ("--beta", "beta"), ("--delta", "delta"),
        ("--gamma", "gamma"), ("--zeta", "zeta"), ("--mu", "mu"),
        ("--lambda-code", "lambda_code"), ("--lambda-in", "lambda_in"),
        ("--p-norm", "p"), ("--temp", "tau"), ("--smoothing", "smoothing"),
    ):
        p.add_argument(flag, type=float, dest=f"w_{field}")


def _config_from_args(args) -> "RunConfig":
    from .losses import LossWeights
    from .training import RunConfig, desk_loss_weights

    base: dict = {}
    if args.config:
        with open(args.config) as fh:
            base = json.load(fh)
    if args.paper_defaults:
        base.setdefault("n_epochs", 200)
        base.setdefault("batch_size", 128)
        base.setdefault("lr", 0.1)

    # precedence: profile < config file < explicit flags
    profile = LossWeights() if args.paper_defaults else desk_loss_weights()
    weights = dataclasses.asdict(profile)
    weights.update(base.pop("weights", {}))
    for f in dataclasses.fields(LossWeights):
        v = getattr(args, f"w_{f.name}", None)
        if v is not None:
            weights[f.name] = v

    for f in dataclasses.fields(RunConfig):
        if f.name == "weights":
            continue
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    base["weights"] = weights
    return RunConfig.from_dict(base)


def _print_metrics(tag: str, metrics) -> None:
    for space in ("feature", "code"):
        m = metrics[space]
        print(f"{tag} {space}: all={m.acc_all:.4f} known={m.acc_known:.4f} "
              f"novel={m.acc_novel:.4f} (n={m.n_all})")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "gen":
        from .data import gen_hier_dataset, save_embedding_file

        ds = gen_hier_dataset(args.seed, args.depth, args.per_leaf, args.dim,
                              args.noise, args.level_scale)
        save_embedding_file(args.out, ds)
        print(f"wrote {ds.n} samples x {ds.dim} dims, "
              f"{len(ds.classes)} categories -> {args.out}")
        return 0

    if args.command == "train":
        from .training import train

        cfg = _config_from_args(args)
        result = train(cfg)
        _print_metrics("final", {"feature": result.final_feature,
                                 "code": result.final_code})
        m = result.metrics(cfg.eval_space)
        base = result.baseline(cfg.eval_space)
        print(f"selected space ({cfg.eval_space}): all={m.acc_all:.4f}, "
              f"kmeans baseline all={base.acc_all:.4f}, "
              f"tree purity={result.tree_purity:.4f}")
        if result.checkpoint_path:
            print(f"checkpoint: {result.checkpoint_path}")
        return 0

    if args.command == "eval":
        from .training import evaluate_checkpoint

        _print_metrics("eval", evaluate_checkpoint(args.checkpoint, args.data))
        return 0

    if args.command == "ablate":
        from .training import ablate, ablation_table

        rows = []
        for chunk in args.switches.split(";"):
            names = [s.strip() for s in chunk.split(",") if s.strip()]
            rows.append(tuple(n for n in names if n != "full"))
        report = ablate(_config_from_args(args), rows)
        table = ablation_table(report)
        print(table, end="")
        if args.out_dir:
            from pathlib import Path

            Path(args.out_dir).mkdir(parents=True, exist_ok=True)
            (Path(args.out_dir) / "ablation.csv").write_text(table)
        return 0

    if args.command == "tree":
        from .training import load_checkpoint, _load_data
        from .trees import extract_learned_tree

        model, cfg = load_checkpoint(args.checkpoint)
        if args.data:
            cfg.embedding_path = args.data
        ds, _ = _load_data(cfg)
        report = extract_learned_tree(model, ds)
        if args.out:
            with open(args.out, "w") as fh:
                fh.write(report.text)
        else:
            print(report.text, end="")
        if args.dot:
            with open(args.dot, "w") as fh:
                fh.write(report.dot)
        print(f"mean category prefix purity: {report.mean_purity:.4f}")
        return 0

    if args.command == "oracle":
        from .trees import oracle_optimal_encoding, trie_from_codes, format_tree

        labels = [s.strip() for s in args.labels.split(",") if s.strip()]
        total, optima = oracle_optimal_encoding(labels, max_n=args.max_n)
        print(f"minimum total code length: {total} "
              f"({len(optima)} optimal encoding(s) up to mirroring)")
        first = optima[0]
        for sid in sorted(first):
            print(f"  sample {sid} ({labels[sid]}): {first[sid] or '<root>'}")
        print(format_tree(trie_from_codes(first), dict(enumerate(labels))), end="")
        return 0

    raise ValueError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
