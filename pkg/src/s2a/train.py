"""Teacher-forced training on aligned batches."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .align import AlignedExample, AlignmentError, align_example
from .data import NoisePolicy, corrupt
from .model import Batch, ModelConfig, S2AModel, make_batch
from .tokenizer import Vocab, encode

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    betas: tuple[float, float] = (0.9, 0.98)
    base_lr: float = 1e-3
    schedule: str = "inverse_sqrt"
    warmup_steps: int = 200
    max_steps: int = 2000
    batch_tokens: int = 1024
    seed: int = 0
    lam: float = 0.4
    noise: NoisePolicy | None = None
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    log_every: int = 50
    checkpoint_every: int = 0
    # decoding without fusion for the plain seq2seq arm
    fused: bool = True

    def __post_init__(self):
        if self.schedule not in ("inverse_sqrt", "polynomial"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.warmup_steps >= self.max_steps:
            raise ValueError("warmup_steps must be smaller than max_steps")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")


def lr_at(step: int, cfg: TrainConfig) -> float:
    if step < 1:
        raise ValueError("steps are counted from 1")
    warm = cfg.warmup_steps
    if cfg.schedule == "inverse_sqrt":
        return cfg.base_lr * min(step / warm, math.sqrt(warm / step))
    if step <= warm:
        return cfg.base_lr * step / warm
    return cfg.base_lr * max(0.0, (cfg.max_steps - step) / (cfg.max_steps - warm))


class Adam:
    def __init__(self, params: Sequence[T.Tensor], betas=(0.9, 0.98), eps: float = 1e-8):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params: Sequence[T.Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= factor
    return total


# ---------------------------------------------------------------- data preparation


def to_ids(sentence: str, vocab: Vocab) -> list[int]:
    return encode(sentence, vocab) + [vocab.eos]


def prepare_examples(id_pairs: Sequence[tuple[list, list]], max_len: int) -> list[AlignedExample]:
    """Align id pairs; failing or over-long pairs are skipped with a warning."""
    out = []
    for src, tgt in id_pairs:
        try:
            ex = align_example(src, tgt)
        except AlignmentError as exc:
            log.warning("skipping pair: %s", exc)
            continue
        if max(len(ex.x), ex.length) > max_len:
            log.warning("skipping pair longer than max_len=%d", max_len)
            continue
        out.append(ex)
    return out


def dynamic_noise(pair: tuple[list, list], policy: NoisePolicy, rng: np.random.Generator) -> tuple[list, list]:
    """Re-corrupt the source of an id pair; the target is returned untouched."""
    src, tgt = pair
    body = list(src[:-1]) if src and src[-1] == 1 else list(src)
    return corrupt(body, policy, rng) + [1], tgt


def make_batches(examples: Sequence[AlignedExample], batch_tokens: int, rng: np.random.Generator) -> list[Batch]:
    """Length-bucketed batches under a padded-token budget, in shuffled order."""
    order = rng.permutation(len(examples))
    order = sorted(order, key=lambda i: max(examples[i].length, len(examples[i].x)))
    batches, cur, width = [], [], 0
    for i in order:
        ex = examples[i]
        w = max(width, ex.length, len(ex.x))
        if cur and w * (len(cur) + 1) > batch_tokens:
            batches.append(make_batch(cur))
            cur, w = [], max(ex.length, len(ex.x))
        cur.append(ex)
        width = w
    if cur:
        batches.append(make_batch(cur))
    return [batches[i] for i in rng.permutation(len(batches))]


# ---------------------------------------------------------------- training loop


@dataclass
class TrainResult:
    model: S2AModel
    losses: list = field(default_factory=list)
    log_lines: list = field(default_factory=list)
    best_dev: float | None = None
    best_step: int | None = None


def train(
    id_pairs: Sequence[tuple[list, list]],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    out_dir: str | Path | None = None,
    dev_score: Callable[[S2AModel], float] | None = None,
) -> TrainResult:
    """Train a model on ``(source ids, target ids)`` pairs (both ending in [/S]).

    With ``dev_score`` the model is scored at every checkpoint and the best
    parameters are restored at the end.
    """
    if not id_pairs:
        raise ValueError("training corpus is empty")
    if train_cfg.batch_tokens <= model_cfg.max_len:
        raise ValueError("batch_tokens must exceed max_len")
    model_cfg = replace(model_cfg, lam=train_cfg.lam, seed=train_cfg.seed)
    init_ss, drop_ss, data_ss = np.random.SeedSequence(train_cfg.seed).spawn(3)
    model = S2AModel(model_cfg, np.random.default_rng(init_ss))
    drop_rng = np.random.default_rng(drop_ss)
    data_rng = np.random.default_rng(data_ss)
    opt = Adam(model.parameters(), train_cfg.betas, train_cfg.adam_eps)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics = open(out / "metrics.log", "a", encoding="utf-8")
    else:
        metrics = None

    noise = train_cfg.noise
    static = None if noise is not None and not noise.is_identity else prepare_examples(id_pairs, model_cfg.max_len)
    if static is not None and not static:
        raise ValueError("no usable training pairs after alignment")

    result = TrainResult(model)
    best_state = None
    step = 0
    try:
        while step < train_cfg.max_steps:
            if static is None:
                noisy = [dynamic_noise(p, noise, data_rng) for p in id_pairs]
                examples = prepare_examples(noisy, model_cfg.max_len)
            else:
                examples = static
            for batch in make_batches(examples, train_cfg.batch_tokens, data_rng):
                step += 1
                model.zero_grad()
                loss = model.joint_loss(batch, train_cfg.lam, drop_rng, training=True)
                T.backward(loss)
                clip_grad_norm(opt.params, train_cfg.clip_norm)
                lr = lr_at(step, train_cfg)
                opt.step(lr)
                result.losses.append(loss.item())
                line = None
                if step % train_cfg.log_every == 0 or step == train_cfg.max_steps:
                    window = result.losses[-train_cfg.log_every :]
                    line = f"step={step} loss={np.mean(window):.6f} lr={lr:.8f}"
                at_ckpt = train_cfg.checkpoint_every and step % train_cfg.checkpoint_every == 0
                if step == train_cfg.max_steps:
                    at_ckpt = True
                if at_ckpt and dev_score is not None:
                    score = dev_score(model)
                    line = (line or f"step={step} loss={loss.item():.6f} lr={lr:.8f}") + f" dev_f05={score:.6f}"
                    if result.best_dev is None or score > result.best_dev:
                        result.best_dev, result.best_step = score, step
                        best_state = model.state()
                if at_ckpt and out is not None:
                    model.save(out / f"checkpoint_{step}.bin")
                if line is not None:
                    result.log_lines.append(line)
                    log.info(line)
                    if metrics is not None:
                        metrics.write(line + "\n")
                        metrics.flush()
                if step >= train_cfg.max_steps:
                    break
    finally:
        if metrics is not None:
            metrics.close()
    if best_state is not None:
        model.load_state(best_state)
    if out is not None:
        model.save(out / "checkpoint_best.bin")
    return result
