"""Desk-scale comparison of the action-fused model against a plain seq2seq arm."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

from .data import NoisePolicy, make_gold_annotations, synth_corpus, toy_sentences
from .eval import action_f1, m2_counts
from .infer import correct_all
from .model import ModelConfig
from .tokenizer import Vocab, build_vocab, decode
from .train import TrainConfig, to_ids, train

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentSetup:
    n_train: int = 20000
    n_test: int = 1000
    data_seed: int = 2024
    rare_words: int = 800
    p_sub: float = 0.03
    p_del: float = 0.03
    p_ins: float = 0.04
    p_swap: float = 0.02
    max_steps: int = 1200
    warmup_steps: int = 200
    base_lr: float = 1e-3
    batch_tokens: int = 1024
    d_model: int = 64
    layers: int = 2
    heads: int = 4
    d_ff: int = 256
    dropout: float = 0.3


@dataclass
class ArmResult:
    lam: float
    fused: bool
    seed: int
    precision: float
    recall: float
    f05: float
    f1_copy: float
    f1_skip: float
    f1_gen: float
    train_seconds: float
    decode_seconds: float
    final_loss: float
    hypotheses: list = field(default_factory=list, repr=False)


class Corpus:
    """Synthetic train/test split with gold annotations for the test side."""

    def __init__(self, setup: ExperimentSetup):
        self.setup = setup
        clean_train = toy_sentences(setup.n_train, seed=setup.data_seed, rare_words=setup.rare_words)
        clean_test = toy_sentences(setup.n_test, seed=setup.data_seed + 1, rare_words=setup.rare_words)
        policy = NoisePolicy(setup.p_sub, setup.p_del, setup.p_ins, setup.p_swap, seed=setup.data_seed)
        self.train_pairs = synth_corpus(clean_train, policy, setup.n_train)
        test_policy = NoisePolicy(setup.p_sub, setup.p_del, setup.p_ins, setup.p_swap, seed=setup.data_seed + 1)
        self.test_pairs = synth_corpus(clean_test, test_policy, setup.n_test)
        self.vocab: Vocab = build_vocab([s for p in self.train_pairs for s in p])
        self.train_ids = [(to_ids(s, self.vocab), to_ids(t, self.vocab)) for s, t in self.train_pairs]
        self.test_src_ids = [to_ids(s, self.vocab) for s, _ in self.test_pairs]
        self.gold = make_gold_annotations(self.test_pairs)

    def render(self, ids) -> list[str]:
        return decode([i for i in ids if i != self.vocab.eos], self.vocab).split()


def run_arm(corpus: Corpus, lam: float, fused: bool, seed: int) -> ArmResult:
    s = corpus.setup
    mcfg = ModelConfig(
        vocab_size=len(corpus.vocab), layers=s.layers, heads=s.heads, d_model=s.d_model,
        d_ff=s.d_ff, dropout=s.dropout, lam=lam,
    )
    tcfg = TrainConfig(
        max_steps=s.max_steps, warmup_steps=s.warmup_steps, base_lr=s.base_lr,
        batch_tokens=s.batch_tokens, seed=seed, lam=lam, fused=fused, log_every=100,
    )
    t0 = time.time()
    res = train(corpus.train_ids, mcfg, tcfg)
    elapsed = time.time() - t0
    outputs = correct_all([res.model], corpus.test_src_ids, beam_size=1, fused=fused)
    decode_elapsed = time.time() - t0 - elapsed
    hyps = [corpus.render(o) for o in outputs]
    p, r, f = m2_counts(zip(corpus.gold, hyps)).prf()
    sources = [s.split() for s, _ in corpus.test_pairs]
    golds = [t.split() for _, t in corpus.test_pairs]
    f_copy, f_skip, f_gen = action_f1(sources, hyps, golds)
    log.info("arm lam=%s fused=%s seed=%s: P=%.4f R=%.4f F0.5=%.4f (%.0fs)", lam, fused, seed, p, r, f, elapsed)
    return ArmResult(
        lam, fused, seed, p, r, f, f_copy, f_skip, f_gen, elapsed, decode_elapsed,
        float(sum(res.losses[-50:]) / len(res.losses[-50:])), [" ".join(h) for h in hyps],
    )


def copy_baseline(corpus: Corpus) -> tuple[float, float, float]:
    """Action F1 of the system that returns every source unchanged."""
    sources = [s.split() for s, _ in corpus.test_pairs]
    golds = [t.split() for _, t in corpus.test_pairs]
    return action_f1(sources, sources, golds)


def summary(results: list[ArmResult]) -> str:
    return json.dumps([{k: v for k, v in asdict(r).items() if k != "hypotheses"} for r in results], indent=1)
