"""Turning (source, target) pairs into integrated sequences and action labels.

The integrated sequence ``z`` interleaves source and target tokens; the action
attached to each position says whether the source token is kept (COPY),
dropped (SKIP) or whether a new target token is emitted (GEN). From ``z`` and
the actions we build the three per-step training sequences: the source view
``x_tilde`` fed to the action head, the teacher-forced decoder input ``y_in``
and the decoder target ``y_out``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Hashable, Sequence

from .tokenizer import Vocab

BOS_ID, EOS_ID, BLK_ID = 0, 1, 2


class Action(enum.IntEnum):
    # order matches the three logits of the action head
    SKIP = 0
    COPY = 1
    GEN = 2

    @property
    def letter(self) -> str:
        return self.name[0]

    @classmethod
    def from_letter(cls, ch: str) -> "Action":
        return {"S": cls.SKIP, "C": cls.COPY, "G": cls.GEN}[ch]


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class AlignedExample:
    x: tuple
    y: tuple
    z: tuple
    a: tuple
    x_tilde: tuple
    y_in: tuple
    y_out: tuple

    @property
    def length(self) -> int:
        return len(self.z)


# op codes used in edit scripts
MATCH, SUB, DEL, INS = "M", "S", "D", "I"


def align_ops(x: Sequence[Hashable], y: Sequence[Hashable]) -> list[tuple]:
    """Minimum edit script between ``x`` and ``y``.

    Returns ops ``(code, i, j)`` where ``i``/``j`` index ``x``/``y`` (``None``
    when the op does not consume that side). Cost is unit Levenshtein; among
    scripts of minimal cost the one with the most matches wins, remaining ties
    go to match > substitute > delete > insert, scanning left to right.
    """
    m, n = len(x), len(y)
    # Scores pack (cost, -matches) into one int: cost * step - matches.
    step = min(m, n) + 1
    # best[i][j]: packed score for aligning x[i:] with y[j:]
    best = [[0] * (n + 1) for _ in range(m + 1)]
    for j in range(n - 1, -1, -1):
        best[m][j] = best[m][j + 1] + step
    for i in range(m - 1, -1, -1):
        row, below = best[i], best[i + 1]
        row[n] = below[n] + step
        xi = x[i]
        for j in range(n - 1, -1, -1):
            diag = below[j + 1] - 1 if xi == y[j] else below[j + 1] + step
            other = min(below[j], row[j + 1]) + step
            row[j] = diag if diag < other else other

    ops = []
    i = j = 0
    while i < m or j < n:
        target = best[i][j]
        if i < m and j < n:
            if x[i] == y[j] and best[i + 1][j + 1] - 1 == target:
                ops.append((MATCH, i, j))
                i, j = i + 1, j + 1
                continue
            if x[i] != y[j] and best[i + 1][j + 1] + step == target:
                ops.append((SUB, i, j))
                i, j = i + 1, j + 1
                continue
        if i < m and best[i + 1][j] + step == target:
            ops.append((DEL, i, None))
            i += 1
            continue
        ops.append((INS, None, j))
        j += 1
    return ops


def edit_regions(ops: Sequence[tuple]) -> list[tuple[list[int], list[int]]]:
    """Group consecutive non-match ops into (source idxs, target idxs) regions."""
    regions = []
    cur: tuple[list[int], list[int]] | None = None
    for code, i, j in ops:
        if code == MATCH:
            cur = None
            continue
        if cur is None:
            cur = ([], [])
            regions.append(cur)
        if i is not None:
            cur[0].append(i)
        if j is not None:
            cur[1].append(j)
    return regions


def _check_pair(x: Sequence, y: Sequence, eos, blk) -> None:
    if not x or x[-1] != eos:
        raise AlignmentError("source sequence must end with the [/S] terminator")
    if not y or y[-1] != eos:
        raise AlignmentError("target sequence must end with the [/S] terminator")
    if blk in x or blk in y:
        raise AlignmentError("[BLK] may not appear in source or target text")


def integrate(x: Sequence, y: Sequence, *, eos=EOS_ID, blk=BLK_ID) -> tuple[tuple, tuple]:
    """Merge ``x`` and ``y`` into the integrated sequence ``z`` and actions ``a``.

    Matched tokens appear once as COPY. Inside each maximal edit region the
    erroneous source tokens come first (SKIP), followed by the target tokens
    that replace or are inserted there (GEN).
    """
    _check_pair(x, y, eos, blk)
    z: list = []
    a: list[Action] = []
    pending_src: list = []
    pending_tgt: list = []

    def flush():
        z.extend(pending_src)
        a.extend([Action.SKIP] * len(pending_src))
        z.extend(pending_tgt)
        a.extend([Action.GEN] * len(pending_tgt))
        pending_src.clear()
        pending_tgt.clear()

    for code, i, j in align_ops(x, y):
        if code == MATCH:
            flush()
            z.append(x[i])
            a.append(Action.COPY)
        else:
            if i is not None:
                pending_src.append(x[i])
            if j is not None:
                pending_tgt.append(y[j])
    flush()
    return tuple(z), tuple(a)


def apply_actions(z: Sequence, a: Sequence) -> tuple[tuple, tuple]:
    """Recover ``(x, y)`` from an integrated sequence and its actions."""
    if len(z) != len(a):
        raise AlignmentError(f"length mismatch: |z|={len(z)} but |a|={len(a)}")
    x = tuple(t for t, act in zip(z, a) if act != Action.GEN)
    y = tuple(t for t, act in zip(z, a) if act != Action.SKIP)
    return x, y


def construct_inputs(
    x: Sequence, z: Sequence, a: Sequence, *, bos=BOS_ID, blk=BLK_ID
) -> tuple[tuple, tuple, tuple]:
    """Build ``(x_tilde, y_in, y_out)`` from the source and its integration.

    GEN positions see the next not-yet-consumed source token. ``y_in`` is the
    right shift of ``y_out`` with each [BLK] replaced by the closest non-blank
    token to its left ([S] when there is none).
    """
    if len(z) != len(a):
        raise AlignmentError(f"length mismatch: |z|={len(z)} but |a|={len(a)}")
    if apply_actions(z, a)[0] != tuple(x):
        raise AlignmentError("COPY/SKIP positions of z do not spell out the source")
    x_tilde, y = [], []
    i = 0
    for tok, act in zip(z, a):
        if act == Action.COPY:
            x_tilde.append(tok)
            y.append(tok)
            i += 1
        elif act == Action.SKIP:
            x_tilde.append(tok)
            y.append(blk)
            i += 1
        else:
            if i >= len(x):
                raise AlignmentError("GEN after the whole source was consumed")
            x_tilde.append(x[i])
            y.append(tok)
    y_out = tuple(y)
    filled = []
    last = bos
    for tok in y_out:
        if tok != blk:
            last = tok
        filled.append(last)
    y_in = (bos,) + tuple(filled[:-1])
    return tuple(x_tilde), y_in, y_out


def align_example(x: Sequence, y: Sequence, *, bos=BOS_ID, eos=EOS_ID, blk=BLK_ID) -> AlignedExample:
    z, a = integrate(x, y, eos=eos, blk=blk)
    x_tilde, y_in, y_out = construct_inputs(x, z, a, bos=bos, blk=blk)
    return AlignedExample(tuple(x), tuple(y), z, a, x_tilde, y_in, y_out)


def extract_actions(x: Sequence, hyp: Sequence, *, eos=EOS_ID, blk=BLK_ID) -> tuple:
    return integrate(x, hyp, eos=eos, blk=blk)[1]


def script_cost(a: Sequence) -> int:
    """Edit cost implied by an action sequence.

    Within each maximal run of non-COPY actions, min(#SKIP, #GEN) pairs are
    substitutions, so the run costs max(#SKIP, #GEN).
    """
    cost = skips = gens = 0
    for act in list(a) + [Action.COPY]:
        if act == Action.COPY:
            cost += max(skips, gens)
            skips = gens = 0
        elif act == Action.SKIP:
            skips += 1
        else:
            gens += 1
    return cost


def format_aligned_example(ex: AlignedExample, vocab: Vocab) -> str:
    """Render one block of the aligned-corpus dump."""

    def toks(seq):
        return " ".join(vocab.id_to_token[t] for t in seq)

    return "\n".join(
        [
            "X: " + toks(ex.x),
            "Y: " + toks(ex.y),
            "Z: " + toks(ex.z),
            "A: " + " ".join(Action(act).letter for act in ex.a),
            "XT: " + toks(ex.x_tilde),
            "YIN: " + toks(ex.y_in),
            "YOUT: " + toks(ex.y_out),
        ]
    )
