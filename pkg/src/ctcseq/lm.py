"""Character-level n-gram language model with additive smoothing and
shortest-context backoff, plus its versioned text serialization.

The vocabulary is the set of letters observed in the training corpus plus
an end-of-sequence marker, which keeps the count-table file a complete
description of the model.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

EOS = "</s>"

EMPTY_CONTEXT = "·"  # placeholder for the empty context in files


@dataclass
class CharNGramModel:
    order: int
    smoothing_alpha: float
    counts: dict[str, dict[str, int]]
    vocab: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"language model order must be >= 1: {self.order}")
        if self.smoothing_alpha <= 0:
            raise ValueError(f"smoothing alpha must be positive: {self.smoothing_alpha}")
        symbols = set()
        for ctx, nexts in self.counts.items():
            symbols.update(ctx)
            symbols.update(nexts)
        symbols.discard(EOS)
        self.vocab = tuple(sorted(symbols)) + (EOS,)
        self._totals = {ctx: sum(nexts.values()) for ctx, nexts in self.counts.items()}

    def _backoff_context(self, context: str) -> str:
        ctx = context[-self.order :] if self.order else ""
        while ctx and ctx not in self.counts:
            ctx = ctx[1:]
        return ctx

    def cond_prob(self, symbol: str, context: str) -> float:
        """P(symbol | up to ``order`` trailing letters of ``context``).

        Unseen contexts back off one letter at a time down to the marginal
        table. ``symbol`` may be a letter or the end marker.
        """
        ctx = self._backoff_context(context)
        nexts = self.counts.get(ctx, {})
        total = self._totals.get(ctx, 0)
        v = len(self.vocab)
        count = nexts.get(symbol, 0)
        return (count + self.smoothing_alpha) / (total + self.smoothing_alpha * v)

    def sequence_log_score(self, word: str) -> float:
        import math

        score = 0.0
        for i, ch in enumerate(word):
            score += math.log(self.cond_prob(ch, word[:i]))
        score += math.log(self.cond_prob(EOS, word))
        return score


def lm_train(corpus: list[str], order: int, smoothing_alpha: float = 1.0) -> CharNGramModel:
    """Count n-grams of every context length 0..order over the corpus.

    Each sequence also contributes an end-of-sequence event, so first-step
    probabilities come from the marginal (empty-context) table and alpha=1
    decoding is well defined on complete sequences.
    """
    if not corpus:
        raise ValueError("language model corpus must be non-empty")
    if order < 1:
        raise ValueError(f"language model order must be >= 1: {order}")
    counts: dict[str, dict[str, int]] = defaultdict(lambda: defaultdict(int))
    for word in corpus:
        events = [(i, word[i]) for i in range(len(word))] + [(len(word), EOS)]
        for pos, nxt in events:
            for ctx_len in range(0, min(order, pos) + 1):
                counts[word[pos - ctx_len : pos]][nxt] += 1
    plain = {ctx: dict(nexts) for ctx, nexts in counts.items()}
    return CharNGramModel(order=order, smoothing_alpha=smoothing_alpha, counts=plain)


def save_lm(model: CharNGramModel, path) -> None:
    lines = [f"CHARLM v1 order={model.order} alpha={model.smoothing_alpha!r}"]
    for ctx in sorted(model.counts):
        shown = ctx if ctx else EMPTY_CONTEXT
        for sym in sorted(model.counts[ctx]):
            lines.append(f"{shown}\t{sym}\t{model.counts[ctx][sym]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_lm(path) -> CharNGramModel:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln]
    if not lines:
        raise ValueError(f"empty language model file: {path}")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "CHARLM" or header[1] != "v1":
        raise ValueError(f"unrecognized language model header: {lines[0]!r}")
    order = int(header[2].removeprefix("order="))
    alpha = float(header[3].removeprefix("alpha="))
    counts: dict[str, dict[str, int]] = defaultdict(dict)
    for ln in lines[1:]:
        ctx, sym, count = ln.split("\t")
        if ctx == EMPTY_CONTEXT:
            ctx = ""
        counts[ctx][sym] = int(count)
    return CharNGramModel(order=order, smoothing_alpha=alpha, counts=dict(counts))
