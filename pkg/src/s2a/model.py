"""Transformer encoder-decoder with the SKIP/COPY/GEN action head.

The action head reads the decoder state together with the embedding of the
current source token and predicts three action probabilities. Those are fused
with the decoder's token distribution: [BLK] gets P(SKIP), the current source
token gets P(COPY) and every other token shares P(GEN) in proportion to the
renormalised token probabilities.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

NEG_INF = -1e9
BLK_ID, PAD_ID = 2, 4


@dataclass
class ModelConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    dropout: float = 0.3
    max_len: int = 64
    lam: float = 0.4
    label_smoothing: float = 0.1
    # smoothing inside the fused action loss; off by default
    s2a_label_smoothing: float = 0.0
    head_activation: str = "sigmoid"
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.head_activation not in ("sigmoid", "relu"):
            raise ValueError(f"unknown head activation {self.head_activation!r}")

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            lines.append(f"{'lambda' if k == 'lam' else k} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = (s.strip() for s in line.partition("="))
            key = "lam" if key == "lambda" else key
            if key not in types:
                continue
            kind = types[key]
            kwargs[key] = value if kind == "str" else (int(value) if kind == "int" else float(value))
        return cls(**kwargs)


def sinusoidal_positions(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    i = np.arange(0, d, 2)[None, :]
    angle = pos / np.power(10000.0, i / d)
    pe = np.zeros((max_len, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d // 2])
    return pe


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class S2AModel:
    """Parameters live in ``self.params`` (insertion order = checkpoint order)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None):
        self.cfg = cfg
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
        self.params: dict[str, Tensor] = {}
        self._add("embed", _xavier(rng, v, d))
        for stack, n_attn in (("enc", 1), ("dec", 2)):
            for layer in range(cfg.layers):
                pre = f"{stack}{layer}."
                for a in ("self", "cross")[:n_attn]:
                    for m in "qkvo":
                        self._add(f"{pre}{a}.w{m}", _xavier(rng, d, d))
                        self._add(f"{pre}{a}.b{m}", np.zeros(d))
                for n in range(n_attn + 1):
                    self._add(f"{pre}ln{n}.g", np.ones(d))
                    self._add(f"{pre}ln{n}.b", np.zeros(d))
                self._add(f"{pre}ff.w1", _xavier(rng, d, f))
                self._add(f"{pre}ff.b1", np.zeros(f))
                self._add(f"{pre}ff.w2", _xavier(rng, f, d))
                self._add(f"{pre}ff.b2", np.zeros(d))
        self._add("out.w", _xavier(rng, d, v))
        self._add("out.b", np.zeros(v))
        self._add("head.w1", _xavier(rng, 2 * d, 2 * d))
        self._add("head.b1", np.zeros(2 * d))
        self._add("head.w2", _xavier(rng, 2 * d, 3))
        self._add("head.b2", np.zeros(3))
        self.positions = sinusoidal_positions(cfg.max_len, d)

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True, name=name)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # ------------------------------------------------------------ building blocks

    def _dropout(self, x: Tensor, rng, training: bool) -> Tensor:
        return T.dropout(x, self.cfg.dropout, rng, training)

    def _linear(self, x: Tensor, w: str, b: str) -> Tensor:
        return T.matmul(x, self.params[w]) + self.params[b]

    def _attention(self, pre: str, q_in: Tensor, kv_in: Tensor, mask: np.ndarray) -> Tensor:
        h = self.cfg.heads
        b, tq, d = q_in.shape
        tk = kv_in.shape[1]
        dh = d // h

        def split(x, n):
            return T.transpose(T.reshape(x, (b, n, h, dh)), (0, 2, 1, 3))

        q = split(self._linear(q_in, pre + ".wq", pre + ".bq"), tq)
        k = split(self._linear(kv_in, pre + ".wk", pre + ".bk"), tk)
        v = split(self._linear(kv_in, pre + ".wv", pre + ".bv"), tk)
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        attn = T.softmax(T.masked_fill(scores, mask, NEG_INF))
        ctx = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (b, tq, d))
        return self._linear(ctx, pre + ".wo", pre + ".bo")

    def _ln(self, x: Tensor, pre: str) -> Tensor:
        return T.layer_norm(x, self.params[pre + ".g"], self.params[pre + ".b"])

    def _feed_forward(self, x: Tensor, pre: str, rng, training: bool) -> Tensor:
        hidden = T.relu(self._linear(x, pre + ".w1", pre + ".b1"))
        return self._linear(self._dropout(hidden, rng, training), pre + ".w2", pre + ".b2")

    def _embed(self, ids: np.ndarray, rng, training: bool) -> Tensor:
        n = ids.shape[1]
        if n > self.cfg.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len={self.cfg.max_len}")
        x = T.scale(T.embedding(self.params["embed"], ids), math.sqrt(self.cfg.d_model))
        return self._dropout(x + Tensor(self.positions[:n]), rng, training)

    # ------------------------------------------------------------ encoder / decoder

    def source_mask(self, src: np.ndarray) -> np.ndarray:
        """(B, 1, 1, S) mask, True where the key is padding."""
        return (np.asarray(src) == PAD_ID)[:, None, None, :]

    def encode(self, src, rng=None, training: bool = False) -> Tensor:
        src = np.atleast_2d(np.asarray(src, dtype=np.int64))
        mask = self.source_mask(src)
        x = self._embed(src, rng, training)
        for layer in range(self.cfg.layers):
            pre = f"enc{layer}."
            x = self._ln(x + self._dropout(self._attention(pre + "self", x, x, mask), rng, training), pre + "ln0")
            x = self._ln(x + self._dropout(self._feed_forward(x, pre + "ff", rng, training), rng, training), pre + "ln1")
        return x

    def decode(self, y_in, h_e: Tensor, src_mask: np.ndarray, rng=None, training: bool = False) -> Tensor:
        y_in = np.atleast_2d(np.asarray(y_in, dtype=np.int64))
        if y_in.shape[0] != h_e.shape[0]:
            raise ValueError(f"batch mismatch: decoder {y_in.shape[0]} vs encoder {h_e.shape[0]}")
        n = y_in.shape[1]
        causal = np.triu(np.ones((n, n), dtype=bool), k=1)[None, None]
        x = self._embed(y_in, rng, training)
        for layer in range(self.cfg.layers):
            pre = f"dec{layer}."
            x = self._ln(x + self._dropout(self._attention(pre + "self", x, x, causal), rng, training), pre + "ln0")
            x = self._ln(x + self._dropout(self._attention(pre + "cross", x, h_e, src_mask), rng, training), pre + "ln1")
            x = self._ln(x + self._dropout(self._feed_forward(x, pre + "ff", rng, training), rng, training), pre + "ln2")
        return x

    def decode_step(self, y_new, pos: int, h_e: Tensor, src_mask: np.ndarray, cache: list) -> Tensor:
        """Decoder output for position ``pos`` only, given earlier positions in ``cache``.

        ``cache[layer]`` holds the self-attention inputs of positions < ``pos``
        as a (B, pos, d) array, or None at ``pos == 0``; it is extended in place.
        Inference only (no dropout). Returns (B, 1, d).
        """
        if pos >= self.cfg.max_len:
            raise ValueError(f"sequence length {pos + 1} exceeds max_len={self.cfg.max_len}")
        y_new = np.asarray(y_new, dtype=np.int64).reshape(-1, 1)
        emb = self.params["embed"].data[y_new] * math.sqrt(self.cfg.d_model) + self.positions[pos]
        x = Tensor(emb)
        open_mask = np.zeros((1, 1, 1, 1), dtype=bool)
        for layer in range(self.cfg.layers):
            pre = f"dec{layer}."
            past = x.data if cache[layer] is None else np.concatenate([cache[layer], x.data], axis=1)
            cache[layer] = past
            x = self._ln(x + self._attention(pre + "self", x, Tensor(past), open_mask), pre + "ln0")
            x = self._ln(x + self._attention(pre + "cross", x, h_e, src_mask), pre + "ln1")
            x = self._ln(x + self._feed_forward(x, pre + "ff", None, False), pre + "ln2")
        return x

    def token_logits(self, h_d: Tensor) -> Tensor:
        return self._linear(h_d, "out.w", "out.b")

    def action_logits(self, h_d: Tensor, x_tilde) -> Tensor:
        x_tilde = np.asarray(x_tilde, dtype=np.int64)
        if x_tilde.shape != h_d.shape[:-1]:
            raise ValueError(f"x_tilde shape {x_tilde.shape} does not match decoder positions {h_d.shape[:-1]}")
        # same scale as the decoder input embedding, otherwise h_d dominates
        e = T.scale(T.embedding(self.params["embed"], x_tilde), math.sqrt(self.cfg.d_model))
        feats = T.concat([h_d, e], axis=-1)
        act = T.sigmoid if self.cfg.head_activation == "sigmoid" else T.relu
        hidden = act(self._linear(feats, "head.w1", "head.b1"))
        return self._linear(hidden, "head.w2", "head.b2")

    def s2a_head(self, h_d: Tensor, x_tilde) -> Tensor:
        """Action probabilities (SKIP, COPY, GEN) per decoder position."""
        return T.softmax(self.action_logits(h_d, x_tilde))

    # ------------------------------------------------------------ losses

    def seq2seq_loss(self, h_d: Tensor, y_out) -> Tensor:
        y_out = np.asarray(y_out, dtype=np.int64)
        if y_out.shape != h_d.shape[:-1]:
            raise ValueError(f"y_out shape {y_out.shape} does not match decoder positions {h_d.shape[:-1]}")
        logp = T.log_softmax(self.token_logits(h_d))
        v = self.cfg.vocab_size
        return T.cross_entropy_label_smoothing(
            T.reshape(logp, (-1, v)), y_out.reshape(-1), self.cfg.label_smoothing, PAD_ID
        )

    def s2a_loss(self, h_d: Tensor, x_tilde, y_out) -> Tensor:
        y_out = np.asarray(y_out, dtype=np.int64)
        x_tilde = np.asarray(x_tilde, dtype=np.int64)
        if y_out.shape != h_d.shape[:-1] or x_tilde.shape != y_out.shape:
            raise ValueError("x_tilde / y_out do not match the decoder positions")
        logp = fused_log_probs(self.token_logits(h_d), self.action_logits(h_d, x_tilde), x_tilde)
        v = self.cfg.vocab_size
        return T.cross_entropy_label_smoothing(
            T.reshape(logp, (-1, v)), y_out.reshape(-1), self.cfg.s2a_label_smoothing, PAD_ID
        )

    def joint_loss(self, batch: "Batch", lam: float | None = None, rng=None, training: bool = False) -> Tensor:
        """``(1 - lam) * L_s2a + lam * L_s2s`` on one padded batch."""
        lam = self.cfg.lam if lam is None else lam
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {lam}")
        mask = self.source_mask(batch.src)
        h_e = self.encode(batch.src, rng, training)
        h_d = self.decode(batch.y_in, h_e, mask, rng, training)
        terms = []
        if lam < 1.0:
            terms.append(T.scale(self.s2a_loss(h_d, batch.x_tilde, batch.y_out), 1.0 - lam))
        if lam > 0.0:
            terms.append(T.scale(self.seq2seq_loss(h_d, batch.y_out), lam))
        return terms[0] if len(terms) == 1 else terms[0] + terms[1]

    # ------------------------------------------------------------ persistence

    def save(self, path: str | Path) -> None:
        path = Path(path)
        T.save_parameters(path, self.params)
        Path(str(path) + ".cfg").write_text(self.cfg.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "S2AModel":
        path = Path(path)
        cfg = ModelConfig.from_text(Path(str(path) + ".cfg").read_text(encoding="utf-8"))
        model = cls(cfg)
        model.load_state(T.load_parameters(path))
        return model

    def load_state(self, values: dict[str, np.ndarray]) -> None:
        if set(values) != set(self.params):
            missing = set(self.params) ^ set(values)
            raise ValueError(f"checkpoint parameters do not match the model: {sorted(missing)[:5]}")
        for name, arr in values.items():
            if arr.shape != self.params[name].shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {self.params[name].shape}")
            self.params[name].data = np.array(arr, dtype=T.DTYPE)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}


def fused_log_probs(token_logits: Tensor, action_logits: Tensor, x_tilde, blk: int = BLK_ID) -> Tensor:
    """Log of the fused distribution over the vocabulary, differentiable.

    [BLK] -> log P(SKIP); x_tilde -> log P(COPY); other v ->
    log P(GEN) + log p_d(v) renormalised over V minus {[BLK], x_tilde}.
    """
    x_tilde = np.asarray(x_tilde, dtype=np.int64)
    v = token_logits.shape[-1]
    if np.any(x_tilde == blk):
        raise ValueError("the current source token may not be [BLK]")
    vocab = np.arange(v)
    is_blk = np.broadcast_to(vocab == blk, token_logits.shape)
    is_src = vocab == x_tilde[..., None]
    special = is_blk | is_src
    log_gen_tok = T.log_softmax(T.masked_fill(token_logits, special, NEG_INF))
    log_act = T.log_softmax(action_logits)
    skip, copy, gen = (
        T.reshape(T.gather_last(log_act, np.full(x_tilde.shape, k)), x_tilde.shape + (1,)) for k in range(3)
    )
    gen_part = T.masked_fill(log_gen_tok + gen, special, 0.0)
    return gen_part + T.mul(skip, Tensor(is_blk)) + T.mul(copy, Tensor(is_src))


def fuse(p_a: Sequence[float], p_d: Sequence[float], x_tilde_i: int, blk: int = BLK_ID) -> np.ndarray:
    """Probability-space fusion for one position (returns a length-V vector)."""
    p_a = np.asarray(p_a, dtype=np.float64)
    p_d = np.asarray(p_d, dtype=np.float64)
    if x_tilde_i == blk:
        raise ValueError("the current source token may not be [BLK]")
    if p_a.shape != (3,):
        raise ValueError(f"p_a must hold 3 action probabilities, got shape {p_a.shape}")
    rest = p_d.copy()
    rest[blk] = 0.0
    rest[x_tilde_i] = 0.0
    total = rest.sum()
    if total > 0:
        rest /= total
    else:
        rest[:] = 1.0
        rest[[blk, x_tilde_i]] = 0.0
        rest /= rest.sum()
    out = p_a[2] * rest
    out[blk] = p_a[0]
    out[x_tilde_i] = p_a[1]
    return out


@dataclass
class Batch:
    src: np.ndarray
    y_in: np.ndarray
    x_tilde: np.ndarray
    y_out: np.ndarray

    @property
    def n_tokens(self) -> int:
        return int((self.y_out != PAD_ID).sum())


def pad_batch(seqs: Sequence[Sequence[int]], pad: int = PAD_ID) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def make_batch(examples) -> Batch:
    """Pad a list of aligned examples into one :class:`Batch`."""
    return Batch(
        src=pad_batch([e.x for e in examples]),
        y_in=pad_batch([e.y_in for e in examples]),
        x_tilde=pad_batch([e.x_tilde for e in examples]),
        y_out=pad_batch([e.y_out for e in examples]),
    )
