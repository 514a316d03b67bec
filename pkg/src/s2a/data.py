"""Synthetic parallel data and corpus file I/O."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .align import AlignmentError
from .eval import AnnotatedExample, extract_edits, format_m2

log = logging.getLogger(__name__)

KEEP, SUB, DEL, INS, SWAP = "keep", "sub", "del", "ins", "swap"


@dataclass(frozen=True)
class NoisePolicy:
    """Per-token corruption rates. One draw per token picks at most one operation."""

    p_sub: float = 0.0
    p_del: float = 0.0
    p_ins: float = 0.0
    p_swap: float = 0.0
    pool: tuple = field(default=(), repr=False)
    seed: int = 0

    def __post_init__(self):
        rates = (self.p_sub, self.p_del, self.p_ins, self.p_swap)
        if any(not 0.0 <= p <= 1.0 for p in rates):
            raise ValueError(f"noise probabilities must lie in [0, 1], got {rates}")
        if sum(rates) > 1.0 + 1e-12:
            raise ValueError(f"noise probabilities sum to {sum(rates)} > 1")

    @property
    def is_identity(self) -> bool:
        return self.p_sub == self.p_del == self.p_ins == self.p_swap == 0.0

    def with_pool(self, pool: Sequence) -> "NoisePolicy":
        return NoisePolicy(self.p_sub, self.p_del, self.p_ins, self.p_swap, tuple(pool), self.seed)


def _draw_other(pool: Sequence, avoid, rng: np.random.Generator):
    while True:
        tok = pool[int(rng.integers(len(pool)))]
        if tok != avoid:
            return tok


def corrupt(tokens: Sequence, policy: NoisePolicy, rng: np.random.Generator, record: bool = False):
    """Corrupt a token list (without terminator) according to ``policy``.

    Operations are tried in the order substitute, delete, insert-after,
    swap-with-next; a swapped-in token is not drawn for again. With
    ``record=True`` also returns the operation chosen for each drawn token.
    """
    if (policy.p_sub > 0 or policy.p_ins > 0) and len(set(policy.pool)) < 2:
        raise ValueError("substitution/insertion need a sample pool with at least two tokens")
    out: list = []
    ops: list[str] = []
    cuts = np.cumsum([policy.p_sub, policy.p_del, policy.p_ins, policy.p_swap])
    i = 0
    n = len(tokens)
    while i < n:
        tok = tokens[i]
        u = rng.random()
        if u < cuts[0]:
            out.append(_draw_other(policy.pool, tok, rng))
            ops.append(SUB)
        elif u < cuts[1]:
            ops.append(DEL)
        elif u < cuts[2]:
            out.append(tok)
            out.append(policy.pool[int(rng.integers(len(policy.pool)))])
            ops.append(INS)
        elif u < cuts[3]:
            ops.append(SWAP)
            if i + 1 < n:
                out.extend((tokens[i + 1], tok))
                i += 2
                continue
            out.append(tok)
        else:
            out.append(tok)
            ops.append(KEEP)
        i += 1
    return (out, ops) if record else out


def synth_corpus(clean: Sequence[str], policy: NoisePolicy, n: int) -> list[tuple[str, str]]:
    """Sample ``n`` clean sentences with replacement and noise each into (noisy, clean)."""
    if not clean:
        raise ValueError("cannot synthesise from an empty clean corpus")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not policy.pool and not policy.is_identity:
        policy = policy.with_pool(sorted({t for s in clean for t in s.split()}))
    rng = np.random.default_rng(policy.seed)
    pairs = []
    for idx in rng.integers(len(clean), size=n):
        sent = clean[int(idx)]
        pairs.append((" ".join(corrupt(sent.split(), policy, rng)), sent))
    return pairs


# ---------------------------------------------------------------- TSV corpora


def iter_parallel(path: str | Path) -> Iterator[tuple[str, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 tab-separated fields, found {len(fields)}")
            yield fields[0], fields[1]


def load_parallel(path: str | Path) -> list[tuple[str, str]]:
    return list(iter_parallel(path))


def save_parallel(path: str | Path, pairs: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for src, tgt in pairs:
            if "\t" in src or "\t" in tgt or "\n" in src or "\n" in tgt:
                raise ValueError("sentences may not contain tabs or newlines")
            fh.write(f"{src}\t{tgt}\n")


def make_gold_annotations(pairs: Iterable[tuple[str, str]], max_merge_gap: int = 0) -> list[AnnotatedExample]:
    """One single-annotator reference per pair, derived from the pair's own edits."""
    out = []
    for src, tgt in pairs:
        s, t = src.split(), tgt.split()
        try:
            edits = extract_edits(s, t, max_merge_gap)
        except AlignmentError as exc:
            log.warning("skipping pair %r: %s", src, exc)
            continue
        out.append(AnnotatedExample(s, [edits]))
    return out


def write_gold_annotations(path: str | Path, pairs: Iterable[tuple[str, str]]) -> None:
    Path(path).write_text(
        "".join(format_m2(e) + "\n\n" for e in make_gold_annotations(pairs)), encoding="utf-8"
    )


# ---------------------------------------------------------------- toy clean text

_LEXICON = {
    "det_sg": ["the", "a", "this", "that", "every"],
    "det_pl": ["the", "these", "those", "some", "many"],
    "noun": [
        "cat", "dog", "teacher", "student", "child", "bird", "farmer", "doctor", "girl", "boy",
        "writer", "driver", "baker", "singer", "friend", "neighbour",
    ],
    "obj": [
        "book", "ball", "apple", "letter", "song", "picture", "table", "garden", "house", "car",
        "cake", "window", "door", "river", "road", "box",
    ],
    "adj": ["small", "big", "old", "young", "happy", "quiet", "green", "red", "new", "busy"],
    "verb": [
        ("sees", "see", "saw"), ("likes", "like", "liked"), ("finds", "find", "found"),
        ("paints", "paint", "painted"), ("opens", "open", "opened"), ("cleans", "clean", "cleaned"),
        ("wants", "want", "wanted"), ("reads", "read", "read"), ("makes", "make", "made"),
        ("carries", "carry", "carried"),
    ],
    "prep": ["in", "on", "near", "behind", "under", "at"],
    "adv": ["today", "yesterday", "again", "quickly", "slowly", "often"],
}


def pseudo_words(n: int, seed: int = 0) -> list[str]:
    """``n`` distinct pronounceable non-words, in a fixed order for a given seed."""
    rng = np.random.default_rng(seed)
    onsets = list("bdfgklmnprstvz") + ["br", "dr", "gl", "kr", "pl", "st", "tr"]
    vowels = list("aeiou") + ["ai", "ou"]
    seen: set[str] = set()
    out = []
    while len(out) < n:
        word = "".join(
            onsets[int(rng.integers(len(onsets)))] + vowels[int(rng.integers(len(vowels)))]
            for _ in range(int(rng.integers(2, 4)))
        )
        if word not in seen:
            seen.add(word)
            out.append(word)
    return out


class _RareLexicon:
    """Zipf-weighted pseudo-words standing in for the long tail of open-class vocabulary."""

    def __init__(self, n: int, exponent: float = 1.1):
        self.words = pseudo_words(n)
        weights = 1.0 / np.arange(1, n + 1) ** exponent
        self.cdf = np.cumsum(weights / weights.sum())

    def draw(self, rng: np.random.Generator) -> str:
        return self.words[min(int(np.searchsorted(self.cdf, rng.random())), len(self.words) - 1)]


def _noun_phrase(rng: np.random.Generator, plural: bool, head_pool: str, rare: _RareLexicon | None) -> list[str]:
    det = _LEXICON["det_pl" if plural else "det_sg"]
    words = [det[int(rng.integers(len(det)))]]
    if rng.random() < 0.4:
        adj = _LEXICON["adj"]
        words.append(adj[int(rng.integers(len(adj)))])
    if rare is not None and rng.random() < 0.5:
        head = rare.draw(rng)
    else:
        head = _LEXICON[head_pool][int(rng.integers(len(_LEXICON[head_pool])))]
    if plural:
        head = head + ("es" if head.endswith(("x", "s")) else "ren" if head == "child" else "s")
    words.append(head)
    if words[0] == "a" and words[1][0] in "aeiou":
        words[0] = "an"
    return words


def toy_sentences(n: int, seed: int = 0, rare_words: int = 0) -> list[str]:
    """Clean English-like sentences from a small agreement-respecting grammar.

    With ``rare_words > 0`` half of the nouns come from a Zipf-distributed
    lexicon of that many pseudo-words, which gives the corpus a long tail.
    """
    rng = np.random.default_rng(seed)
    rare = _RareLexicon(rare_words) if rare_words else None
    out = []
    for _ in range(n):
        plural = bool(rng.random() < 0.4)
        words = _noun_phrase(rng, plural, "noun", rare)
        forms = _LEXICON["verb"][int(rng.integers(len(_LEXICON["verb"])))]
        tense = rng.random()
        if tense < 0.5:
            words.append(forms[1] if plural else forms[0])
        elif tense < 0.8:
            words.append(forms[2])
        else:
            words += ["will", forms[1]]
        words += _noun_phrase(rng, bool(rng.random() < 0.3), "obj", rare)
        if rng.random() < 0.5:
            prep = _LEXICON["prep"]
            words.append(prep[int(rng.integers(len(prep)))])
            words += _noun_phrase(rng, bool(rng.random() < 0.3), "obj", rare)
        if rng.random() < 0.3:
            adv = _LEXICON["adv"]
            words.append(adv[int(rng.integers(len(adv)))])
        words.append(".")
        out.append(" ".join(words))
    return out
