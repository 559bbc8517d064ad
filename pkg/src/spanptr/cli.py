"""Command-line entry point: ``spanptr <command> [flags]``.

Exit status: 0 on success, 1 on validation or data errors, 2 on usage errors.
Every command accepts ``--config FILE`` (flat ``key = value`` lines whose keys
are flag names, dashes or underscores) and ``--seed N``; explicit flags win
over config values.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import __version__

log = logging.getLogger("spanptr")

COMMANDS = ("gen-data", "transform", "spis", "train", "predict", "eval", "stats", "gradcheck", "bench")
FORM_CHOICES = ("canonical", "index", "span")
EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- argument types ------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return vals


def _str_list(text: str) -> list[str]:
    return [t for t in text.replace(",", " ").split() if t]


def _truthy(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off", ""):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


# -- parser ------------------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common")
    g.add_argument("--config", metavar="FILE", help="flat key=value defaults; explicit flags override them")
    g.add_argument("--seed", type=int, default=0, help="seed for every stochastic step (default 0)")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--regime", choices=("nar", "ar"), default="nar",
                   help="nar: length module + one-pass masked decoder; ar: left-to-right baseline")
    g.add_argument("--form", choices=FORM_CHOICES, default="span", help="target frame form (default span)")
    g.add_argument("--d-model", type=int, default=64)
    g.add_argument("--n-heads", type=int, default=4)
    g.add_argument("--n-enc-layers", type=int, default=2)
    g.add_argument("--n-dec-layers", type=int, default=1)
    g.add_argument("--d-ff", type=int, default=128)
    g.add_argument("--dropout", type=float, default=0.1)
    g.add_argument("--max-len-classes", type=int,
                   help="number of target-length classes (default: longest gold target in train/dev)")
    g.add_argument("--max-src-len", type=int,
                   help="longest accepted utterance (default: longest train/dev utterance)")


def _objective_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("objective")
    g.add_argument("--lambda1", type=float, default=0.5, help="length-loss weight")
    g.add_argument("--lambda2", type=float, default=0.001, help="R3F length-term weight")
    g.add_argument("--lambda3", type=float, default=0.01, help="R3F label-term weight")
    g.add_argument("--beta1", type=float, default=0.0, help="length smoothing weight")
    g.add_argument("--beta2", type=float, default=0.0, help="label smoothing weight")
    g.add_argument("--sigma", type=float, default=1e-5, help="R3F uniform noise half-width")
    g.add_argument("--r3f", action="store_true", help="enable the R3F terms")
    g.add_argument("--smoothing", choices=("confidence", "uniform"), default="confidence",
                   help="smoothing term: confidence penalty (-entropy) or uniform-target cross-entropy")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="spanptr",
        description="Span pointer networks for intent/slot semantic parsing.",
        epilog="Exit status: 0 success, 1 validation/data error, 2 usage error.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    epilog = "Exit status: 0 success, 1 validation/data error, 2 usage error."

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], help=help_text, description=help_text, epilog=epilog)

    p = add("gen-data", "Generate a synthetic intent/slot corpus as TSV.")
    p.add_argument("--out", metavar="TSV", help="output file (required)")
    p.add_argument("--n", type=int, default=1000, help="number of examples (default 1000)")
    p.add_argument("--form", choices=FORM_CHOICES, default="canonical", help="frame form to write")
    p.add_argument("--split-name", default="synthetic", help="prefix of generated example ids")
    g = p.add_argument_group("grammar")
    g.add_argument("--num-intents", type=int, default=8)
    g.add_argument("--num-slots", type=int, default=12)
    g.add_argument("--max-depth", type=int, default=2, help="intent nesting depth (1 = flat)")
    g.add_argument("--max-slots-per-intent", type=int, default=3)
    g.add_argument("--span-length-range", type=_int_list, default=[1, 3], metavar="LO,HI")
    g.add_argument("--vocab-size", type=int, default=60, help="number of distinct filler words")
    g.add_argument("--nest-prob", type=float, default=0.3)

    p = add("transform", "Rewrite every frame of a TSV corpus into another form.")
    p.add_argument("--in", dest="inp", metavar="TSV", help="input corpus (required)")
    p.add_argument("--out", metavar="TSV", help="output file (default stdout)")
    p.add_argument("--form", choices=FORM_CHOICES, help="target form (required)")
    p.add_argument("--in-form", choices=FORM_CHOICES, default="canonical", help="form of the input frames")

    p = add("spis", "Label-balanced subsample: every intent/slot label keeps at least k examples.")
    p.add_argument("--in", dest="inp", metavar="TSV", help="input corpus (required)")
    p.add_argument("--out", metavar="TSV", help="output file (default stdout)")
    p.add_argument("--k", type=int, help="examples kept per label (required)")
    p.add_argument("--in-form", choices=FORM_CHOICES, default="canonical")

    p = add("train", "Train a parser and write a checkpoint plus a per-epoch report.")
    p.add_argument("--train", metavar="TSV", help="training corpus (required)")
    p.add_argument("--dev", metavar="TSV", help="dev corpus watched by the LR schedule and early stopping")
    p.add_argument("--out", metavar="CKPT", help="checkpoint path (required)")
    p.add_argument("--report", metavar="JSONL", help="per-epoch records")
    p.add_argument("--figures", metavar="DIR", help="write loss/EM curves here")
    p.add_argument("--in-form", choices=FORM_CHOICES, default="canonical", help="form of the input frames")
    _model_flags(p)
    _objective_flags(p)
    g = p.add_argument_group("optimization")
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--lr-factor", type=float, default=0.5, help="LR decay on an EM plateau")
    g.add_argument("--lr-patience", type=int, default=10, help="evaluations without EM gain before decay")
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--epochs", type=int, default=100)
    g.add_argument("--eval-every", type=int, default=1)
    g.add_argument("--eval-beam", type=int, default=1)
    g.add_argument("--target-em", type=float, help="stop once watched EM reaches this percentage")
    g.add_argument("--grad-clip", type=float, default=1.0, help="max gradient norm (0 disables)")
    g.add_argument("--threads", type=int, default=1)

    p = add("predict", "Parse utterances (TSV or one per line) into JSONL prediction records.")
    p.add_argument("--model", metavar="CKPT", help="trained checkpoint (required)")
    p.add_argument("--in", dest="inp", metavar="FILE", help="utterances, first TSV column (required)")
    p.add_argument("--out", metavar="JSONL", help="output file (default stdout)")
    p.add_argument("--k", type=int, default=5, help="lengths decoded (NAR) or beam width (AR)")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--threads", type=int, default=1)

    p = add("eval", "Exact match of a model on a gold corpus, or of a prediction file offline.")
    p.add_argument("--gold", metavar="TSV", help="gold corpus (required)")
    p.add_argument("--in-form", choices=FORM_CHOICES, default="canonical", help="form of the gold frames")
    p.add_argument("--predictions", metavar="JSONL", help="score this prediction file instead of a model")
    p.add_argument("--model", metavar="CKPT", help="checkpoint to decode the gold utterances with")
    p.add_argument("--out", metavar="JSONL", help="also write the model's predictions here")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--threads", type=int, default=1)

    p = add("stats", "Target-length statistics of a corpus per frame form, side by side.")
    p.add_argument("--in", dest="inp", metavar="TSV", help="input corpus (required)")
    p.add_argument("--in-form", choices=FORM_CHOICES, default="canonical")
    p.add_argument("--forms", type=_str_list, default=["canonical", "span"], metavar="F1,F2",
                   help="forms to report (default canonical,span)")
    p.add_argument("--json", action="store_true", help="print JSON instead of a table")
    p.add_argument("--figures", metavar="DIR", help="write a length histogram here")

    p = add("gradcheck", "Finite-difference check of the full objective's gradients on a tiny model.")
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-3, help="fail when max relative error reaches this")
    p.add_argument("--examples", type=int, default=3)
    p.add_argument("--d-model", type=int, default=8)
    p.add_argument("--lambda1", type=float, default=0.5)
    p.add_argument("--lambda2", type=float, default=0.001)
    p.add_argument("--lambda3", type=float, default=0.01)
    p.add_argument("--beta1", type=float, default=0.1)
    p.add_argument("--beta2", type=float, default=0.1)
    p.add_argument("--sigma", type=float, default=1e-2)
    p.add_argument("--no-r3f", action="store_true", help="check the objective without R3F terms")
    p.add_argument("--smoothing", choices=("confidence", "uniform"), default="confidence")

    p = add("bench", "CPU latency (p50/p99) and peak decode allocation per regime and beam.")
    p.add_argument("--model", metavar="CKPT", action="append", help="checkpoint; repeat for several (required)")
    p.add_argument("--in", dest="inp", metavar="TSV", help="benchmark corpus (required)")
    p.add_argument("--in-form", choices=FORM_CHOICES, default="canonical")
    p.add_argument("--regime", type=_str_list, metavar="R1,R2", help="only run these regimes (nar, ar)")
    p.add_argument("--beam", type=_int_list, default=[1, 5], metavar="K1,K2", help="beam sizes (default 1,5)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--no-memory", action="store_true", help="skip the allocation profile")
    p.add_argument("--out", metavar="JSONL", help="machine-readable rows")
    p.add_argument("--figures", metavar="DIR", help="write latency/memory bars here")
    return parser


# -- config files ------------------------------------------------------------------------


def load_config(path) -> dict[str, str]:
    """Flat ``key = value`` pairs; ``#`` starts a comment line."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as err:
        raise UsageError(f"cannot read config {path}: {err.strerror or err}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = val
    return out


def _apply_config(sub: argparse.ArgumentParser, cfg: dict[str, str]) -> None:
    by_name = {}
    for action in sub._actions:
        for opt in action.option_strings:
            by_name[opt.lstrip("-").replace("-", "_")] = action
        by_name.setdefault(action.dest, action)
    for key, val in cfg.items():
        action = by_name.get(key)
        if action is None or action.dest in ("config", "help"):
            raise UsageError(f"config key {key!r} is not a flag of this command")
        if isinstance(action, argparse._StoreTrueAction):
            action.default = _truthy(val)
        elif isinstance(action, argparse._AppendAction):
            action.default = _str_list(val)
        else:
            action.default = val


def _command_of(argv: Sequence[str]) -> Optional[str]:
    return next((a for a in argv if a in COMMANDS), None)


def _config_path(argv: Sequence[str]) -> Optional[str]:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    return known.config


def _require(args, *flags: str) -> None:
    for flag in flags:
        dest = "inp" if flag == "--in" else flag.lstrip("-").replace("-", "_")
        if getattr(args, dest) in (None, []):
            raise UsageError(f"{flag} is required")


# -- commands ------------------------------------------------------------------------------


def _write_text(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_gen_data(args) -> int:
    from .data import SyntheticGrammarConfig, format_tsv, generate_synthetic

    _require(args, "--out")
    if args.n < 0:
        raise ValueError("--n must be >= 0")
    if len(args.span_length_range) != 2:
        raise UsageError("--span-length-range takes exactly two integers LO,HI")
    grammar = SyntheticGrammarConfig(
        num_intents=args.num_intents, num_slots=args.num_slots, max_depth=args.max_depth,
        max_slots_per_intent=args.max_slots_per_intent, span_length_range=tuple(args.span_length_range),
        vocab_size=args.vocab_size, seed=args.seed, nest_prob=args.nest_prob,
    )
    corpus = generate_synthetic(grammar, args.n, args.split_name)
    _write_text(args.out, format_tsv(corpus, args.form))
    print(f"wrote {len(corpus)} examples to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_transform(args) -> int:
    from .data import format_tsv, load_tsv

    _require(args, "--in", "--form")
    corpus = load_tsv(args.inp, args.in_form)
    _write_text(args.out, format_tsv(corpus, args.form))
    return EXIT_OK


def cmd_spis(args) -> int:
    from .data import format_tsv, load_tsv, spis_sample

    _require(args, "--in", "--k")
    corpus = load_tsv(args.inp, args.in_form)
    sample = spis_sample(corpus, args.k, args.seed)
    _write_text(args.out, format_tsv(sample))
    print(f"kept {len(sample)} of {len(corpus)} examples (k={args.k}, seed={args.seed})", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import Corpus, build_vocab, load_tsv, max_target_length
    from .model import build_model, count_params, save_checkpoint
    from .training import TrainConfig, train

    _require(args, "--train", "--out")
    corpus = load_tsv(args.train, args.in_form)
    dev = load_tsv(args.dev, args.in_form) if args.dev else None
    if not len(corpus):
        raise ValueError(f"{args.train}: no usable training examples")
    both = Corpus(list(corpus) + (list(dev) if dev else []), "all") if dev else corpus
    vocab = build_vocab(corpus)
    max_len = args.max_len_classes or max_target_length(both, args.form)
    max_src = args.max_src_len or max(len(ex.utterance) for ex in both)
    model = build_model(
        vocab, args.regime, max_len_classes=max_len, max_src_len=max_src, form=args.form,
        d_model=args.d_model, n_heads=args.n_heads, n_enc_layers=args.n_enc_layers,
        n_dec_layers=args.n_dec_layers, d_ff=args.d_ff, dropout=args.dropout, seed=args.seed,
    )
    cfg = TrainConfig(
        lambda1=args.lambda1, lambda2=args.lambda2, lambda3=args.lambda3, beta1=args.beta1,
        beta2=args.beta2, sigma=args.sigma, r3f_enabled=args.r3f, smoothing=args.smoothing, lr=args.lr,
        lr_factor=args.lr_factor, lr_patience=args.lr_patience, batch_size=args.batch_size,
        max_epochs=args.epochs, seed=args.seed, threads=args.threads, eval_every=args.eval_every,
        eval_beam=args.eval_beam, target_em=args.target_em, grad_clip=args.grad_clip,
    )
    log.info("training %s/%s model with %d parameters on %d examples", args.regime, args.form,
             count_params(model), len(corpus))
    report = train(model, vocab, corpus, cfg, dev=dev)
    save_checkpoint(args.out, model, vocab, extra={"train_config": asdict(cfg)})
    if args.report:
        # wall-clock fields are left out so identical invocations write identical files
        rows = [{k: v for k, v in asdict(r).items() if k != "wall_time"} for r in report.epochs]
        Path(args.report).write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    if args.figures:
        from .plotting import plot_training_curves

        plot_training_curves(report, args.figures)
    summary = {k: v for k, v in report.summary().items() if k != "wall_time"}
    summary["params"] = count_params(model)
    print(json.dumps(summary))
    print(f"trained in {report.wall_time:.1f} s; checkpoint {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_predict(args) -> int:
    from .data import read_utterances
    from .inference import predict_many, prediction_record
    from .model import load_checkpoint

    _require(args, "--model", "--in")
    model, vocab = load_checkpoint(args.model)
    items = read_utterances(args.inp)
    torch.set_num_threads(args.threads)
    preds = predict_many(model, vocab, [u for _, u in items], args.k, args.batch_size)
    text = "".join(json.dumps(prediction_record(i, p)) + "\n" for (i, _), p in zip(items, preds))
    _write_text(args.out, text)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .data import load_tsv
    from .inference import evaluate, read_predictions, score_records, write_predictions
    from .model import load_checkpoint

    _require(args, "--gold")
    if (args.predictions is None) == (args.model is None):
        raise UsageError("give exactly one of --predictions or --model")
    gold = load_tsv(args.gold, args.in_form)
    if args.predictions:
        records = read_predictions(args.predictions)
        print(json.dumps({"em": score_records(records, gold), "n": len(gold)}))
        return EXIT_OK
    model, vocab = load_checkpoint(args.model)
    torch.set_num_threads(args.threads)
    res = evaluate(model, vocab, gold, args.k, args.batch_size)
    if args.out:
        write_predictions(args.out, [ex.id for ex in gold], res.predictions)
    print(json.dumps({"em": res.em, "length_accuracy": res.length_accuracy,
                      "malformed_rate": res.malformed_rate, "n": res.n}))
    return EXIT_OK


def format_stats_table(stats: dict) -> str:
    forms = list(stats)
    names = ("num_length_classes", "mean_lengths_per_skeleton", "mean_length", "max_length")
    lines = [f"{'statistic':<28}" + "".join(f"{f:>12}" for f in forms)]
    for name in names:
        cells = []
        for f in forms:
            v = getattr(stats[f], name)
            cells.append(f"{v:>12.3f}" if isinstance(v, float) else f"{v:>12d}")
        lines.append(f"{name:<28}" + "".join(cells))
    return "\n".join(lines) + "\n"


def cmd_stats(args) -> int:
    from .data import compute_length_stats, load_tsv

    _require(args, "--in")
    bad = [f for f in args.forms if f not in FORM_CHOICES]
    if bad:
        raise UsageError(f"unknown form(s) {bad}; choose from {', '.join(FORM_CHOICES)}")
    corpus = load_tsv(args.inp, args.in_form)
    if not len(corpus):
        raise ValueError(f"{args.inp}: no usable examples")
    stats = {f: compute_length_stats(corpus, f) for f in args.forms}
    if args.json:
        print(json.dumps({f: asdict(s) for f, s in stats.items()}))
    else:
        sys.stdout.write(f"# {len(corpus)} examples from {args.inp}\n" + format_stats_table(stats))
    if args.figures:
        from .plotting import plot_length_histograms

        plot_length_histograms(corpus, args.forms, args.figures)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .model import count_params
    from .training import TrainConfig, grad_check, tiny_gradcheck_setup

    if args.examples < 1:
        raise ValueError("--examples must be >= 1")
    model, _, batch = tiny_gradcheck_setup(args.seed, args.examples, args.d_model)
    cfg = TrainConfig(lambda1=args.lambda1, lambda2=args.lambda2, lambda3=args.lambda3, beta1=args.beta1,
                      beta2=args.beta2, sigma=args.sigma, r3f_enabled=not args.no_r3f,
                      smoothing=args.smoothing, seed=args.seed)
    res = grad_check(model, batch, cfg, epsilon=args.epsilon)
    ok = res.max_rel_error < args.tolerance
    print(json.dumps({**asdict(res), "params": count_params(model), "epsilon": args.epsilon,
                      "tolerance": args.tolerance, "passed": ok}))
    if not ok:
        print(f"gradient check failed: max relative error {res.max_rel_error:.3g} in {res.worst_param}",
              file=sys.stderr)
    return EXIT_OK if ok else EXIT_DATA


def cmd_bench(args) -> int:
    from .bench import run_benchmarks
    from .data import load_tsv
    from .model import load_checkpoint

    _require(args, "--model", "--in")
    regimes = set(args.regime) if args.regime else None
    if regimes and not regimes <= {"nar", "ar"}:
        raise UsageError(f"unknown regime(s) {sorted(regimes - {'nar', 'ar'})}; choose nar, ar")
    if any(k < 1 for k in args.beam):
        raise ValueError("beam sizes must be >= 1")
    entries = [load_checkpoint(path) for path in args.model]
    corpus = load_tsv(args.inp, args.in_form)
    report = run_benchmarks(entries, corpus, args.beam, args.warmup, args.threads,
                            memory=not args.no_memory, regimes=regimes)
    sys.stdout.write(report.table())
    if args.out:
        Path(args.out).write_text(report.to_jsonl(), encoding="utf-8")
    if args.figures and report.rows:
        from .plotting import plot_bench

        plot_bench(report, args.figures)
    return EXIT_OK


HANDLERS = {
    "gen-data": cmd_gen_data,
    "transform": cmd_transform,
    "spis": cmd_spis,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "stats": cmd_stats,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
}


# -- entry point ---------------------------------------------------------------------------


def _seed_everything(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Execute one command; returns the exit status instead of raising."""
    from .frames import FrameError
    from .model import CheckpointError

    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    command = _command_of(argv)
    try:
        cfg_path = _config_path(argv)
        if cfg_path and command:
            _apply_config(parser._subparsers._group_actions[0].choices[command], load_config(cfg_path))
    except UsageError as err:
        print(f"spanptr: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return int(exit_.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("spanptr: error: a command is required", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    torch.set_num_threads(1)
    _seed_everything(args.seed)
    prefix = f"spanptr {args.command}: error:"
    try:
        return HANDLERS[args.command](args)
    except UsageError as err:
        print(f"{prefix} {err}", file=sys.stderr)
        return EXIT_USAGE
    except (FrameError, CheckpointError, ValueError, KeyError, ArithmeticError, RuntimeError) as err:
        print(f"{prefix} {err}", file=sys.stderr)
        return EXIT_DATA
    except OSError as err:
        where = f" {err.filename}" if getattr(err, "filename", None) else ""
        print(f"{prefix} {err.strerror or err}{where}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        print(f"spanptr {args.command}: interrupted", file=sys.stderr)
        return 130
    except Exception as err:  # last resort: still no traceback on the console
        print(f"{prefix} unexpected {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
