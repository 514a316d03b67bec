"""Greedy, beam and ensemble decoding with a per-hypothesis source pointer.

Each hypothesis tracks ``pointer_j`` (the source token currently fed to the
action head) and ``last_nonblank`` (the decoder input for the next step).
The chosen token decides how the pointer moves: [BLK] means the source token
was skipped and a token equal to ``x[j]`` means it was copied, both advance
``j``; any other token is a generation and leaves ``j`` where it is.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .align import Action
from .model import S2AModel, fused_log_probs, pad_batch

BOS_ID, EOS_ID, BLK_ID, PAD_ID = 0, 1, 2, 4


@dataclass
class DecodeState:
    emitted: list = field(default_factory=list)
    pointer_j: int = 0
    last_nonblank: int = BOS_ID
    logscore: float = 0.0
    finished: bool = False
    actions: list = field(default_factory=list)

    def normalized_score(self) -> float:
        n = sum(1 for t in self.emitted if t != BLK_ID)
        return self.logscore / max(n, 1)

    def output(self) -> list[int]:
        out = [t for t in self.emitted if t not in (BLK_ID, EOS_ID)]
        return out + [EOS_ID]


def step_cap(x: Sequence[int], max_len: int | None = None) -> int:
    """Decoding step limit; the decoder cannot see more than ``max_len`` inputs."""
    cap = 2 * len(x) + 8
    return cap if max_len is None else min(cap, max_len)


def advance(state: DecodeState, token: int, x: Sequence[int], logp: float) -> DecodeState:
    """New state after emitting ``token`` (pointer rule applied)."""
    j = state.pointer_j
    last_pos = len(x) - 1
    if token == BLK_ID:
        action = Action.SKIP
    elif token == x[j]:
        action = Action.COPY
    else:
        action = Action.GEN
    if action != Action.GEN:
        j = min(j + 1, last_pos)
    return DecodeState(
        emitted=state.emitted + [token],
        pointer_j=j,
        last_nonblank=state.last_nonblank if token == BLK_ID else token,
        logscore=state.logscore + logp,
        finished=token == EOS_ID,
        actions=state.actions + [action],
    )


def _check_ensemble(models: Sequence[S2AModel]) -> None:
    if not models:
        raise ValueError("need at least one model")
    v, n = models[0].cfg.vocab_size, models[0].cfg.max_len
    for m in models[1:]:
        if m.cfg.vocab_size != v:
            raise ValueError(f"vocab mismatch in ensemble: {m.cfg.vocab_size} vs {v}")
        if m.cfg.max_len != n:
            raise ValueError(f"max_len mismatch in ensemble: {m.cfg.max_len} vs {n}")


class _Encoded:
    """Encoder outputs of every ensemble member for a padded source batch."""

    def __init__(self, models, xs):
        self.src = pad_batch(xs)
        self.mask = models[0].source_mask(self.src)
        with T.no_grad():
            self.h_e = [m.encode(self.src).data for m in models]


def _mixture(models: Sequence[S2AModel], lasts: Sequence[T.Tensor], current: np.ndarray, fused: bool) -> np.ndarray:
    """Log of the members' mean next-token distribution, (N, V)."""
    probs = None
    for m, last in zip(models, lasts):
        logits = m.token_logits(last)
        if fused:
            logp = fused_log_probs(logits, m.action_logits(last, current[:, None]), current[:, None])
        else:
            logp = T.log_softmax(logits)
        p = np.exp(logp.data[:, 0, :])
        probs = p if probs is None else probs + p
    probs /= len(models)
    with np.errstate(divide="ignore"):
        return np.log(probs)


def step_distribution(
    models: Sequence[S2AModel], enc: _Encoded, rows: np.ndarray, prefixes: np.ndarray, current: np.ndarray, fused: bool
) -> np.ndarray:
    """Next-token log distribution from full decoder prefixes (no caching).

    ``rows`` selects the source sentence for each of the N decoder rows.
    """
    with T.no_grad():
        lasts = [
            T.Tensor(m.decode(prefixes, T.Tensor(h_e[rows]), enc.mask[rows]).data[:, -1:, :])
            for m, h_e in zip(models, enc.h_e)
        ]
        return _mixture(models, lasts, current, fused)


class _Stepper:
    """Incremental decoder caches of every ensemble member for a set of rows."""

    def __init__(self, models: Sequence[S2AModel], enc: _Encoded, rows):
        self.models = models
        self.enc = enc
        self.rows = np.asarray(rows, dtype=np.int64)
        self.caches = [[None] * m.cfg.layers for m in models]
        self.pos = 0

    def select(self, idx) -> None:
        """Keep (and reorder) rows; ``idx`` indexes the current rows."""
        idx = np.asarray(idx, dtype=np.int64)
        self.rows = self.rows[idx]
        self.caches = [[c[idx] for c in cache] for cache in self.caches]

    def step(self, tokens, current, fused: bool) -> np.ndarray:
        """Log next-token distribution (N, V) after feeding ``tokens``."""
        mask = self.enc.mask[self.rows]
        with T.no_grad():
            lasts = [
                m.decode_step(tokens, self.pos, T.Tensor(h_e[self.rows]), mask, cache)
                for m, h_e, cache in zip(self.models, self.enc.h_e, self.caches)
            ]
            logp = _mixture(self.models, lasts, current, fused)
        self.pos += 1
        return logp


def greedy_decode_batch(
    models: Sequence[S2AModel], xs: Sequence[Sequence[int]], fused: bool = True
) -> list[DecodeState]:
    """Greedy decoding of many sources at once."""
    _check_ensemble(models)
    xs = [list(map(int, x)) for x in xs]
    for x in xs:
        if not x or x[-1] != EOS_ID:
            raise ValueError("every source must end with [/S]")
    enc = _Encoded(models, xs)
    states = [DecodeState() for _ in xs]
    caps = [step_cap(x, models[0].cfg.max_len) for x in xs]
    stepper = _Stepper(models, enc, np.arange(len(xs)))
    active = list(range(len(xs)))
    step = 0
    while True:
        keep = [r for r, i in enumerate(active) if not states[i].finished and step < caps[i]]
        if not keep:
            break
        if len(keep) < len(active):
            stepper.select(keep)
            active = [active[r] for r in keep]
        tokens = np.array([states[i].last_nonblank for i in active], dtype=np.int64)
        current = np.array([xs[i][states[i].pointer_j] for i in active], dtype=np.int64)
        logp = stepper.step(tokens, current, fused)
        best = logp.argmax(axis=-1)
        for r, i in enumerate(active):
            tok = int(best[r])
            states[i] = advance(states[i], tok, xs[i], float(logp[r, tok]))
        step += 1
    return states


def greedy_correct(model: S2AModel, x: Sequence[int], fused: bool = True) -> list[int]:
    return greedy_decode_batch([model], [x], fused)[0].output()


def beam_decode(
    models: Sequence[S2AModel], x: Sequence[int], beam_size: int, fused: bool = True
) -> tuple[DecodeState, list[DecodeState]]:
    """Beam search for one source; returns (best, finished hypotheses sorted by score)."""
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    _check_ensemble(models)
    x = list(map(int, x))
    if not x or x[-1] != EOS_ID:
        raise ValueError("source must end with [/S]")
    enc = _Encoded(models, [x])
    cap = step_cap(x, models[0].cfg.max_len)
    stepper = _Stepper(models, enc, [0])
    beam = [DecodeState()]
    finished: list[DecodeState] = []
    step = 0
    while beam and len(finished) < beam_size and step < cap:
        tokens = np.array([s.last_nonblank for s in beam], dtype=np.int64)
        current = np.array([x[s.pointer_j] for s in beam], dtype=np.int64)
        logp = stepper.step(tokens, current, fused)
        cands = []
        for h, s in enumerate(beam):
            order = np.argsort(-logp[h], kind="stable")[:beam_size]
            for rank, tok in enumerate(order):
                cands.append((s.logscore + logp[h, tok], h, rank, int(tok)))
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        new_beam, parents = [], []
        for _, h, _, tok in cands[: beam_size - len(finished)]:
            st = advance(beam[h], tok, x, float(logp[h, tok]))
            if st.finished:
                finished.append(st)
            else:
                new_beam.append(st)
                parents.append(h)
        beam = new_beam
        if beam:
            stepper.select(parents)
        step += 1
    if not finished:
        finished = beam
    ranked = sorted(finished, key=lambda s: -s.normalized_score())
    return ranked[0], ranked


def beam_correct(model: S2AModel, x: Sequence[int], beam_size: int, fused: bool = True) -> list[int]:
    return beam_decode([model], x, beam_size, fused)[0].output()


def ensemble_correct(
    models: Sequence[S2AModel], x: Sequence[int], beam_size: int = 1, fused: bool = True
) -> list[int]:
    """Decode with the arithmetic mean of the members' (fused) distributions."""
    _check_ensemble(models)
    if beam_size == 1:
        return greedy_decode_batch(models, [x], fused)[0].output()
    return beam_decode(models, x, beam_size, fused)[0].output()


def correct_all(
    models: Sequence[S2AModel], xs: Sequence[Sequence[int]], beam_size: int = 1, fused: bool = True,
    batch_size: int = 256,
) -> list[list[int]]:
    """Order-preserving correction of many sources."""
    if beam_size == 1:
        out = []
        for start in range(0, len(xs), batch_size):
            out.extend(s.output() for s in greedy_decode_batch(models, xs[start : start + batch_size], fused))
        return out
    return [beam_decode(models, x, beam_size, fused)[0].output() for x in xs]
