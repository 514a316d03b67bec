"""Command-line entry point: synth, align, train, correct, evaluate."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .align import AlignmentError, align_example, format_aligned_example
from .data import NoisePolicy, load_parallel, make_gold_annotations, save_parallel, synth_corpus, toy_sentences
from .eval import action_f1, apply_edits, m2_counts, read_m2, write_m2
from .infer import correct_all
from .model import ModelConfig, S2AModel
from .tokenizer import Vocab, build_vocab, decode, encode
from .train import TrainConfig, to_ids, train

log = logging.getLogger("s2a")

MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"vocab_size", "lam", "seed"}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"noise", "betas", "fused"}
PATH_KEYS = {"corpus", "dev_corpus", "vocab", "out_dir"}
NOISE_KEYS = {"noise_p_sub", "noise_p_del", "noise_p_ins", "noise_p_swap"}
OTHER_KEYS = {"lambda", "baseline", "beta1", "beta2", "mode", "min_freq", "max_vocab"}


class CLIError(Exception):
    pass


def parse_config(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CLIError(f"config line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in MODEL_KEYS | TRAIN_KEYS | PATH_KEYS | NOISE_KEYS | OTHER_KEYS:
            raise CLIError(f"config line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _typed(cls, key: str, value: str):
    kind = {f.name: f.type for f in fields(cls)}[key]
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    if kind == "bool":
        return value.lower() in ("1", "true", "yes")
    return value


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise CLIError(f"missing {what}")
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"{what} not found: {p}")
    return p


def _read_lines(path: Path) -> list[str]:
    return path.read_text(encoding="utf-8").splitlines()


# ---------------------------------------------------------------- subcommands


def cmd_synth(args) -> None:
    if args.clean:
        clean = [s for s in _read_lines(_require_file(args.clean, "clean corpus")) if s.strip()]
    elif args.toy:
        clean = toy_sentences(args.toy, seed=args.seed, rare_words=args.rare_words)
    else:
        raise CLIError("give --clean FILE or --toy N")
    policy = NoisePolicy(args.p_sub, args.p_del, args.p_ins, args.p_swap, seed=args.seed)
    pairs = synth_corpus(clean, policy, args.n)
    save_parallel(args.out, pairs)
    if args.gold:
        write_m2(args.gold, make_gold_annotations(pairs))
    print(f"wrote {len(pairs)} pairs to {args.out}")


def cmd_align(args) -> None:
    pairs = load_parallel(_require_file(args.parallel, "parallel corpus"))
    vocab = Vocab.load(_require_file(args.vocab, "vocab file"), mode=args.mode)
    blocks = []
    for src, tgt in pairs:
        try:
            ex = align_example(to_ids(src, vocab), to_ids(tgt, vocab))
        except AlignmentError as exc:
            log.warning("skipping pair %r: %s", src, exc)
            continue
        blocks.append(format_aligned_example(ex, vocab))
    Path(args.out).write_text("".join(b + "\n\n" for b in blocks), encoding="utf-8")
    print(f"wrote {len(blocks)} aligned examples to {args.out}")


def resolve_run_config(args) -> dict[str, str]:
    cfg = parse_config(_require_file(args.config, "config file").read_text(encoding="utf-8")) if args.config else {}
    for key in ("corpus", "dev_corpus", "out_dir"):
        if getattr(args, key, None):
            cfg[key] = getattr(args, key)
    for item in args.set or []:
        cfg.update(parse_config(item))
    if args.lam is not None:
        cfg["lambda"] = str(args.lam)
    if args.max_steps is not None:
        cfg["max_steps"] = str(args.max_steps)
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    if args.baseline:
        cfg["baseline"] = "true"
    if cfg.get("baseline", "false").lower() in ("1", "true", "yes"):
        cfg["lambda"] = "1.0"
    return cfg


def cmd_train(args) -> None:
    cfg = resolve_run_config(args)
    corpus = _require_file(cfg.get("corpus"), "training corpus (corpus = ...)")
    out = Path(cfg.get("out_dir") or args.out_dir or "")
    if not str(out):
        raise CLIError("missing output directory (out_dir = ...)")
    dev_path = _require_file(cfg["dev_corpus"], "dev corpus") if cfg.get("dev_corpus") else None
    out.mkdir(parents=True, exist_ok=True)

    pairs = load_parallel(corpus)
    mode = cfg.get("mode", "word")
    if cfg.get("vocab"):
        vocab = Vocab.load(_require_file(cfg["vocab"], "vocab file"), mode=mode)
    else:
        vocab = build_vocab(
            [s for p in pairs for s in p], mode=mode, min_freq=int(cfg.get("min_freq", 1)),
            max_size=int(cfg["max_vocab"]) if "max_vocab" in cfg else None,
        )
    vocab.save(out / "vocab.txt")

    lam = float(cfg.get("lambda", 0.4))
    baseline = cfg.get("baseline", "false").lower() in ("1", "true", "yes")
    mkw = {k: _typed(ModelConfig, k, v) for k, v in cfg.items() if k in MODEL_KEYS}
    tkw = {k: _typed(TrainConfig, k, v) for k, v in cfg.items() if k in TRAIN_KEYS}
    tkw["betas"] = (float(cfg.get("beta1", 0.9)), float(cfg.get("beta2", 0.98)))
    if any(k in cfg for k in NOISE_KEYS):
        tkw["noise"] = NoisePolicy(
            *(float(cfg.get(k, 0.0)) for k in ("noise_p_sub", "noise_p_del", "noise_p_ins", "noise_p_swap")),
            pool=tuple(vocab.regular_ids()),
        )
    model_cfg = ModelConfig(vocab_size=len(vocab), lam=lam, **mkw)
    train_cfg = TrainConfig(lam=lam, fused=not baseline, **tkw)

    resolved = dict(cfg)
    resolved.update({"lambda": str(lam), "seed": str(train_cfg.seed), "out_dir": str(out)})
    (out / "run.cfg").write_text("".join(f"{k} = {v}\n" for k, v in sorted(resolved.items())), encoding="utf-8")

    ids = [(to_ids(s, vocab), to_ids(t, vocab)) for s, t in pairs]
    dev_score = None
    if dev_path is not None:
        dev_pairs = load_parallel(dev_path)
        gold = make_gold_annotations(dev_pairs)
        dev_src = [to_ids(s, vocab) for s, _ in dev_pairs]

        def dev_score(model):
            hyps = [_render(o, vocab) for o in correct_all([model], dev_src, fused=train_cfg.fused)]
            return m2_counts(zip(gold, [h.split() for h in hyps])).prf()[2]

    result = train(ids, model_cfg, train_cfg, out_dir=out, dev_score=dev_score)
    print(f"trained {len(result.losses)} steps; final loss {result.losses[-1]:.4f}; checkpoint {out / 'checkpoint_best.bin'}")


def _render(ids, vocab: Vocab) -> str:
    return decode([i for i in ids if i != vocab.eos], vocab)


def _load_models(paths: list[str]) -> list[S2AModel]:
    models = []
    for p in paths:
        _require_file(p, "checkpoint")
        _require_file(p + ".cfg", "checkpoint config")
        models.append(S2AModel.load(p))
    return models


def cmd_correct(args) -> None:
    paths = list(args.checkpoint) + list(args.ensemble or [])
    if not paths:
        raise CLIError("give at least one --checkpoint")
    models = _load_models(paths)
    vocab_path = args.vocab or str(Path(paths[0]).parent / "vocab.txt")
    vocab = Vocab.load(_require_file(vocab_path, "vocab file"), mode=args.mode)
    if len(vocab) != models[0].cfg.vocab_size:
        raise CLIError(f"vocab has {len(vocab)} entries but the checkpoint expects {models[0].cfg.vocab_size}")
    fused = not args.baseline and not all(m.cfg.lam == 1.0 for m in models)
    lines = _read_lines(_require_file(args.input, "input file"))
    srcs = [encode(s, vocab) + [vocab.eos] for s in lines]
    outputs = correct_all(models, srcs, beam_size=args.beam, fused=fused)
    text = "".join(_render(o, vocab) + "\n" for o in outputs)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_evaluate(args) -> None:
    sources = _read_lines(_require_file(args.source, "source file"))
    hyps = _read_lines(_require_file(args.hypothesis, "hypothesis file"))
    gold = read_m2(_require_file(args.gold, "gold annotation file"))
    if not len(sources) == len(hyps) == len(gold):
        raise CLIError(f"line counts differ: {len(sources)} sources, {len(hyps)} hypotheses, {len(gold)} gold blocks")
    for k, (s, g) in enumerate(zip(sources, gold), 1):
        if tuple(s.split()) != g.source:
            raise CLIError(f"sentence {k}: source does not match the gold S line (tokenization mismatch)")
    hyp_toks = [h.split() for h in hyps]
    p, r, f = m2_counts(zip(gold, hyp_toks), beta=args.beta).prf(args.beta)
    print(f"Precision   : {p:.4f}")
    print(f"Recall      : {r:.4f}")
    print(f"{'F' + format(args.beta, 'g'):<12}: {f:.4f}")
    gold_targets = [apply_edits(list(g.source), g.references[0]) for g in gold]
    fc, fs, fg = action_f1([s.split() for s in sources], hyp_toks, gold_targets)
    print(f"F1 COPY     : {fc:.4f}")
    print(f"F1 SKIP     : {fs:.4f}")
    print(f"F1 GEN frag : {fg:.4f}")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="s2a", description="Action-fused grammatical error correction toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="noise clean sentences into a parallel TSV corpus")
    sp.add_argument("--clean", help="clean sentences, one per line")
    sp.add_argument("--toy", type=int, help="generate N clean sentences from the built-in toy grammar instead")
    sp.add_argument("--rare-words", type=int, default=0, help="size of the toy grammar's rare pseudo-word lexicon")
    sp.add_argument("--p-sub", type=float, default=0.03, help="per-token substitution rate")
    sp.add_argument("--p-del", type=float, default=0.03, help="per-token deletion rate")
    sp.add_argument("--p-ins", type=float, default=0.04, help="per-token insertion rate")
    sp.add_argument("--p-swap", type=float, default=0.02, help="per-token swap-with-next rate")
    sp.add_argument("--n", type=int, required=True, help="number of pairs to sample")
    sp.add_argument("--seed", type=int, default=0, help="random seed")
    sp.add_argument("--out", required=True, help="output TSV (source<TAB>target)")
    sp.add_argument("--gold", help="also write M2-style gold annotations here")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("align", help="dump aligned training examples")
    sp.add_argument("--parallel", required=True, help="TSV parallel corpus")
    sp.add_argument("--vocab", required=True, help="vocab file (one token per line)")
    sp.add_argument("--mode", default="word", choices=["word", "char"], help="tokenization mode")
    sp.add_argument("--out", required=True, help="output dump file")
    sp.set_defaults(func=cmd_align)

    sp = sub.add_parser("train", help="train a model")
    sp.add_argument("--config", help="key = value run config file")
    sp.add_argument("--corpus", help="TSV training corpus (overrides config)")
    sp.add_argument("--dev-corpus", dest="dev_corpus", help="TSV dev corpus for checkpoint selection")
    sp.add_argument("--out-dir", dest="out_dir", help="output directory (overrides config)")
    sp.add_argument("--lambda", dest="lam", type=float, help="weight of the plain seq2seq loss")
    sp.add_argument("--baseline", action="store_true", help="plain seq2seq arm: lambda = 1, decode without fusion")
    sp.add_argument("--max-steps", dest="max_steps", type=int, help="number of updates")
    sp.add_argument("--seed", type=int, help="random seed")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("correct", help="correct sentences with trained checkpoint(s)")
    sp.add_argument("--checkpoint", action="append", default=[], help="checkpoint file (repeatable)")
    sp.add_argument("--ensemble", nargs="+", help="further checkpoints to average with")
    sp.add_argument("--vocab", help="vocab file (default: vocab.txt beside the first checkpoint)")
    sp.add_argument("--mode", default="word", choices=["word", "char"], help="tokenization mode")
    sp.add_argument("--input", required=True, help="one source sentence per line")
    sp.add_argument("--output", help="write corrections here instead of stdout")
    sp.add_argument("--beam", type=int, default=1, help="beam size (1 = greedy)")
    sp.add_argument("--baseline", action="store_true", help="decode from token probabilities only")
    sp.set_defaults(func=cmd_correct)

    sp = sub.add_parser("evaluate", help="M2 precision/recall/F0.5 and action-level F1")
    sp.add_argument("--source", required=True, help="source sentences, one per line")
    sp.add_argument("--hypothesis", required=True, help="system output, one per line")
    sp.add_argument("--gold", required=True, help="M2-style gold annotations")
    sp.add_argument("--beta", type=float, default=0.5, help="F-measure beta")
    sp.set_defaults(func=cmd_evaluate)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (CLIError, ValueError, OSError) as exc:
        print(f"s2a {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
