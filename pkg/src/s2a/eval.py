"""MaxMatch-style scoring of corrections and action-level F1.

Hypothesis edits are extracted from a token alignment of source and
hypothesis. Because several decompositions of the same change exist (other
minimal alignments, merged or split phrase edits), the scorer searches them
and keeps the one that agrees best with the gold edits of each reference.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .align import MATCH, Action, AlignmentError, align_ops, integrate

log = logging.getLogger(__name__)

Edit = tuple  # (start, end, replacement tuple)


@dataclass
class AnnotatedExample:
    source: tuple
    references: list = field(default_factory=lambda: [[]])

    def __post_init__(self):
        self.source = tuple(self.source)
        if not self.references:
            raise ValueError("an annotated example needs at least one reference")
        self.references = [sorted(_as_edit(e) for e in ref) for ref in self.references]


def _as_edit(e) -> Edit:
    start, end, repl = e
    return (int(start), int(end), tuple(repl))


def f_beta(p: float, r: float, beta: float = 0.5) -> float:
    b2 = beta * beta
    denom = b2 * p + r
    if denom == 0:
        return 0.0
    return (1 + b2) * p * r / denom


# ---------------------------------------------------------------- edit extraction


def _atoms(ops) -> list[tuple]:
    """Per-op edits ``(s_start, s_end, h_start, h_end, matches_before)``."""
    atoms = []
    i = j = 0
    gap = 0
    for code, oi, oj in ops:
        if code == MATCH:
            i, j = i + 1, j + 1
            gap += 1
            continue
        if oi is not None and oj is not None:
            atoms.append((i, i + 1, j, j + 1, gap))
            i, j = i + 1, j + 1
        elif oi is not None:
            atoms.append((i, i + 1, j, j, gap))
            i += 1
        else:
            atoms.append((i, i, j, j + 1, gap))
            j += 1
        gap = 0
    return atoms


def _runs(atoms: list[tuple], max_merge_gap: int) -> list[list[tuple]]:
    runs: list[list[tuple]] = []
    for atom in atoms:
        if runs and atom[4] <= max_merge_gap:
            runs[-1].append(atom)
        else:
            runs.append([atom])
    return runs


def _merge(group: Sequence[tuple], hyp: Sequence) -> Edit:
    return (group[0][0], group[-1][1], tuple(hyp[group[0][2] : group[-1][3]]))


def extract_edits(src: Sequence, hyp: Sequence, max_merge_gap: int = 0) -> list[Edit]:
    """Phrase-level edits turning ``src`` into ``hyp``.

    Atomic edits of the canonical alignment that are separated by at most
    ``max_merge_gap`` unchanged tokens are merged into one phrase edit.
    """
    src, hyp = tuple(src), tuple(hyp)
    atoms = _atoms(align_ops(src, hyp))
    return [_merge(run, hyp) for run in _runs(atoms, max_merge_gap)]


def apply_edits(src: Sequence, edits: Iterable[Edit]) -> list:
    """Apply non-overlapping edits to ``src`` (used for round-trip checks)."""
    out, pos = [], 0
    for start, end, repl in sorted(edits, key=lambda e: (e[0], e[1])):
        if start < pos:
            raise ValueError(f"overlapping edits at position {start}")
        out.extend(src[pos:start])
        out.extend(repl)
        pos = end
    out.extend(src[pos:])
    return out


def minimal_alignments(src: Sequence, hyp: Sequence, limit: int = 256) -> list[list[tuple]]:
    """Minimal-cost edit scripts of ``src`` -> ``hyp`` (canonical first, at most ``limit``)."""
    src, hyp = tuple(src), tuple(hyp)
    m, n = len(src), len(hyp)
    # dist[i][j]: Levenshtein distance of src[i:] and hyp[j:]
    dist = [[0] * (n + 1) for _ in range(m + 1)]
    for i in range(m, -1, -1):
        for j in range(n, -1, -1):
            if i == m:
                dist[i][j] = n - j
            elif j == n:
                dist[i][j] = m - i
            else:
                sub = dist[i + 1][j + 1] + (src[i] != hyp[j])
                dist[i][j] = min(sub, dist[i + 1][j] + 1, dist[i][j + 1] + 1)

    canonical = align_ops(src, hyp)
    out = [canonical]
    seen = {tuple(canonical)}
    path: list[tuple] = []

    def walk(i, j):
        if len(out) >= limit:
            return
        if i == m and j == n:
            key = tuple(path)
            if key not in seen:
                seen.add(key)
                out.append(list(path))
            return
        d = dist[i][j]
        if i < m and j < n and src[i] == hyp[j] and dist[i + 1][j + 1] == d:
            path.append((MATCH, i, j))
            walk(i + 1, j + 1)
            path.pop()
        if i < m and j < n and src[i] != hyp[j] and dist[i + 1][j + 1] + 1 == d:
            path.append(("S", i, j))
            walk(i + 1, j + 1)
            path.pop()
        if i < m and dist[i + 1][j] + 1 == d:
            path.append(("D", i, None))
            walk(i + 1, j)
            path.pop()
        if j < n and dist[i][j + 1] + 1 == d:
            path.append(("I", None, j))
            walk(i, j + 1)
            path.pop()

    walk(0, 0)
    if dist[0][0] != sum(1 for op in canonical if op[0] != MATCH):
        raise AlignmentError("canonical alignment is not of minimal cost")
    return out


def _best_split(run: Sequence[tuple], hyp: Sequence, gold: set) -> tuple[int, int, list[Edit]]:
    """Split one run of atoms into contiguous phrase edits maximising gold matches.

    Returns (true positives, number of edits, edits); ties prefer fewer edits.
    """
    k = len(run)
    best: list[tuple | None] = [None] * (k + 1)
    best[0] = (0, 0, [])
    for end in range(1, k + 1):
        for start in range(end):
            prev = best[start]
            edit = _merge(run[start:end], hyp)
            cand = (prev[0] + (edit in gold), prev[1] + 1, prev[2] + [edit])
            cur = best[end]
            if cur is None or (cand[0], -cand[1]) > (cur[0], -cur[1]):
                best[end] = cand
    return best[k]


def best_hypothesis_edits(
    src: Sequence, hyp: Sequence, gold: Iterable[Edit], max_merge_gap: int = 0, limit: int = 256
) -> tuple[int, list[Edit]]:
    """Edit decomposition of (src, hyp) with the most exact matches in ``gold``."""
    src, hyp = tuple(src), tuple(hyp)
    gold = {_as_edit(e) for e in gold}
    best: tuple | None = None
    for ops in minimal_alignments(src, hyp, limit):
        tp = 0
        edits: list[Edit] = []
        for run in _runs(_atoms(ops), max_merge_gap):
            run_tp, _, run_edits = _best_split(run, hyp, gold)
            tp += run_tp
            edits.extend(run_edits)
        if best is None or (tp, -len(edits)) > (best[0], -len(best[1])):
            best = (tp, edits)
    return best


# ---------------------------------------------------------------- corpus scoring


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __iadd__(self, other: "Counts"):
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self

    def prf(self, beta: float = 0.5) -> tuple[float, float, float]:
        p = self.tp / (self.tp + self.fp) if self.tp + self.fp else 1.0
        r = self.tp / (self.tp + self.fn) if self.tp + self.fn else 1.0
        return p, r, f_beta(p, r, beta)


def sentence_counts(
    example: AnnotatedExample, hyp: Sequence, beta: float = 0.5, max_merge_gap: int = 0
) -> tuple[Counts, int]:
    """Counts against the best reference for this sentence, and that reference's index."""
    if isinstance(hyp, str):
        raise TypeError("hypothesis must be a token sequence, not a raw string")
    n = len(example.source)
    best: tuple | None = None
    for idx, ref in enumerate(example.references):
        for start, end, _ in ref:
            if not 0 <= start <= end <= n:
                raise ValueError(f"gold edit ({start}, {end}) does not fit a {n}-token source; tokenization mismatch?")
        tp, edits = best_hypothesis_edits(example.source, hyp, ref, max_merge_gap)
        c = Counts(tp, len(edits) - tp, len(ref) - tp)
        key = (c.prf(beta)[2], c.tp, -(c.fp + c.fn), -idx)
        if best is None or key > best[0]:
            best = (key, c, idx)
    return best[1], best[2]


def m2_score(
    pairs: Iterable[tuple[AnnotatedExample, Sequence]], beta: float = 0.5, max_merge_gap: int = 0
) -> tuple[float, float, float]:
    """Corpus precision, recall and F_beta."""
    return m2_counts(pairs, beta, max_merge_gap).prf(beta)


def m2_counts(pairs, beta: float = 0.5, max_merge_gap: int = 0) -> Counts:
    total = Counts()
    for example, hyp in pairs:
        total += sentence_counts(example, hyp, beta, max_merge_gap)[0]
    return total


# ---------------------------------------------------------------- M2 files


def read_m2(path: str | Path) -> list[AnnotatedExample]:
    return parse_m2(Path(path).read_text(encoding="utf-8"))


def parse_m2(text: str) -> list[AnnotatedExample]:
    """Parse ``S``/``A`` blocks; edits are grouped into references by annotator id."""
    examples = []
    for block in text.split("\n\n"):
        lines = [ln for ln in block.splitlines() if ln.strip()]
        if not lines:
            continue
        if not lines[0].startswith("S "):
            raise ValueError(f"annotation block must start with an S line: {lines[0]!r}")
        source = tuple(lines[0][2:].split())
        refs: dict[int, list] = {}
        for line in lines[1:]:
            if not line.startswith("A "):
                raise ValueError(f"unexpected line in annotation block: {line!r}")
            fields = line[2:].split("|||")
            start, end = (int(v) for v in fields[0].split())
            if len(fields) == 3:
                repl, annot = fields[1], int(fields[2])
            elif len(fields) == 6:
                repl, annot = fields[2], int(fields[5])
            else:
                raise ValueError(f"malformed edit line: {line!r}")
            edits = refs.setdefault(annot, [])
            if start < 0:  # noop annotation
                continue
            repl = "" if repl.strip() == "-NONE-" else repl
            edits.append((start, end, tuple(repl.split())))
        references = [refs[k] for k in sorted(refs)] or [[]]
        examples.append(AnnotatedExample(source, references))
    return examples


def format_m2(example: AnnotatedExample) -> str:
    lines = ["S " + " ".join(example.source)]
    for annot, ref in enumerate(example.references):
        for start, end, repl in ref:
            lines.append(f"A {start} {end}|||{' '.join(repl)}|||{annot}")
    return "\n".join(lines)


def write_m2(path: str | Path, examples: Iterable[AnnotatedExample]) -> None:
    Path(path).write_text("".join(format_m2(e) + "\n\n" for e in examples), encoding="utf-8")


# ---------------------------------------------------------------- action-level F1

_END = object()


def _f1(tp: int, fp: int, fn: int) -> float:
    if tp + fp + fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn)


def _labels(src: Sequence, out: Sequence):
    """Per-source-token COPY/SKIP labels and GEN fragments ``(anchor, tokens)``."""
    z, actions = integrate(tuple(src) + (_END,), tuple(out) + (_END,), eos=_END, blk=None)
    per_source = []
    fragments = []
    consumed = 0
    run: list = []
    for tok, act in zip(z, actions):
        if act == Action.GEN:
            run.append(tok)
            continue
        if run:
            fragments.append((consumed, tuple(run)))
            run = []
        if tok is not _END:
            per_source.append(act)
        consumed += 1
    return per_source, fragments


def action_f1(
    sources: Sequence[Sequence], hypotheses: Sequence[Sequence], golds: Sequence[Sequence]
) -> tuple[float, float, float]:
    """(F1 of COPY, F1 of SKIP, F1 of GEN fragments) over a corpus."""
    counts = {a: [0, 0, 0] for a in (Action.COPY, Action.SKIP)}
    gen = [0, 0, 0]
    for src, hyp, gold in zip(sources, hypotheses, golds):
        try:
            pred_lab, pred_frag = _labels(src, hyp)
            gold_lab, gold_frag = _labels(src, gold)
        except AlignmentError as exc:
            log.warning("skipping sentence in action F1: %s", exc)
            continue
        for p, g in zip(pred_lab, gold_lab):
            for a, c in counts.items():
                if p == a and g == a:
                    c[0] += 1
                elif p == a:
                    c[1] += 1
                elif g == a:
                    c[2] += 1
        pc, gc = Counter(pred_frag), Counter(gold_frag)
        tp = sum((pc & gc).values())
        gen[0] += tp
        gen[1] += sum(pc.values()) - tp
        gen[2] += sum(gc.values()) - tp
    return _f1(*counts[Action.COPY]), _f1(*counts[Action.SKIP]), _f1(*gen)
