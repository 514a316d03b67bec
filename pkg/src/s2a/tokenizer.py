"""Word/character vocabulary with the reserved special tokens."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BOS = "[S]"
EOS = "[/S]"
BLK = "[BLK]"
UNK = "[UNK]"
PAD = "[PAD]"
SPECIALS = (BOS, EOS, BLK, UNK, PAD)

MODES = ("word", "char")


def split_units(text: str, mode: str) -> list[str]:
    if mode == "word":
        return text.split()
    if mode == "char":
        return [c for c in text if not c.isspace()]
    raise ValueError(f"unknown tokenization mode {mode!r}; expected one of {MODES}")


@dataclass(frozen=True)
class Vocab:
    """Immutable token <-> id mapping. Ids 0-4 are always the specials."""

    id_to_token: tuple[str, ...]
    mode: str = "word"
    token_to_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.id_to_token[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocab must start with the special tokens " + " ".join(SPECIALS))
        mapping = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(mapping) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocab")
        object.__setattr__(self, "token_to_id", mapping)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def bos(self) -> int:
        return 0

    @property
    def eos(self) -> int:
        return 1

    @property
    def blk(self) -> int:
        return 2

    @property
    def unk(self) -> int:
        return 3

    @property
    def pad(self) -> int:
        return 4

    @property
    def specials(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(SPECIALS)}

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk)

    def regular_ids(self) -> list[int]:
        """Ids of every non-special token."""
        return list(range(len(SPECIALS), len(self)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, mode: str = "word") -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines), mode=mode)


def build_vocab(
    corpus: Iterable[str], mode: str = "word", min_freq: int = 1, max_size: int | None = None
) -> Vocab:
    """Count units over ``corpus`` and keep the ``max_size`` most frequent.

    Ties in frequency are broken lexicographically so the result only depends
    on the inputs.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("cannot build a vocab from an empty corpus")
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    counts: Counter[str] = Counter()
    for line in corpus:
        counts.update(split_units(line, mode))
    for tok in SPECIALS:
        counts.pop(tok, None)
    kept = sorted((tok for tok, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    if max_size is not None:
        kept = kept[:max_size]
    return Vocab(SPECIALS + tuple(kept), mode=mode)


def encode(text: str, vocab: Vocab, mode: str | None = None) -> list[int]:
    """Map ``text`` to ids; unknown units become [UNK]. No [S]/[/S] are added."""
    mode = mode or vocab.mode
    if mode != vocab.mode:
        raise ValueError(f"vocab was built in {vocab.mode!r} mode, asked to encode in {mode!r}")
    return [vocab.id(u) for u in split_units(text, mode)]


def decode(ids: Sequence[int], vocab: Vocab) -> str:
    n = len(vocab)
    toks = []
    for i in ids:
        i = int(i)
        if not 0 <= i < n:
            raise IndexError(f"token id {i} out of range for vocab of size {n}")
        toks.append(vocab.id_to_token[i])
    return (" " if vocab.mode == "word" else "").join(toks)


def strip_specials(ids: Sequence[int], vocab: Vocab) -> list[int]:
    """Drop [S], [/S], [BLK] and [PAD]; [UNK] is kept as real content."""
    drop = {vocab.bos, vocab.eos, vocab.blk, vocab.pad}
    return [int(i) for i in ids if int(i) not in drop]
