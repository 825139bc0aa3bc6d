"""CTC probability model: alignments, the collapse map, the exact
brute-force enumerator for small instances, and the forward-backward loss
with gradients w.r.t. the producing log-probabilities.

Blank always occupies the last class index. Everything runs in the natural
log domain; probabilities are exponentiated only at the API boundary.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, _node, as_tensor, clamp_min, log

NEG_INF = float("-inf")

BRUTE_FORCE_LIMIT = 10**7


@dataclass(frozen=True)
class Alphabet:
    """Ordered letter set; blank is the implicit extra class at index C."""

    letters: tuple[str, ...]

    def __post_init__(self):
        letters = tuple(self.letters)
        object.__setattr__(self, "letters", letters)
        if len(set(letters)) != len(letters):
            raise ValueError("alphabet letters must be distinct")
        if not letters:
            raise ValueError("alphabet must contain at least one letter")
        for ch in letters:
            if len(ch) != 1 or ch in ("\t", "\n", "·"):
                raise ValueError(f"alphabet letters must be single printable characters: {ch!r}")

    @property
    def blank_index(self) -> int:
        return len(self.letters)

    @property
    def num_classes(self) -> int:
        """C' = C letters plus blank."""
        return len(self.letters) + 1

    def encode(self, text: str) -> list[int]:
        return [self.letters.index(ch) for ch in text]

    def decode(self, labels) -> str:
        return "".join(self.letters[i] for i in labels)


@dataclass
class FrameDistributionSeq:
    """Per-frame probability rows over C' classes (letters + blank).

    ``log_probs`` is an optional graph-attached cache so losses can avoid
    re-taking logs of softmax outputs.
    """

    probs: Tensor
    log_probs: Tensor | None = field(default=None, repr=False)

    def __post_init__(self):
        self.probs = as_tensor(self.probs)
        arr = self.probs.data
        if arr.ndim != 2:
            raise ValueError(f"frame distributions must be T x C': got shape {arr.shape}")
        if np.any(arr < -1e-12) or np.any(arr > 1.0 + 1e-9):
            raise ValueError("frame distribution entries must lie in [0, 1]")
        if not np.allclose(arr.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("each frame distribution row must sum to 1")

    @property
    def num_frames(self) -> int:
        return self.probs.shape[0]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[1]

    @property
    def blank_index(self) -> int:
        return self.num_classes - 1


def _probs_array(dist) -> np.ndarray:
    if isinstance(dist, FrameDistributionSeq):
        return dist.probs.data
    if isinstance(dist, Tensor):
        return dist.data
    return np.asarray(dist, dtype=np.float64)


def collapse(path, blank: int) -> list[int]:
    """The many-to-one map from alignments to label sequences.

    Merges adjacent duplicates first, then removes blanks.
    """
    out: list[int] = []
    prev = None
    for p in path:
        if p != prev:
            out.append(p)
        prev = p
    return [p for p in out if p != blank]


def alignment_probability(dist, path) -> float:
    """Probability of one frame-by-frame alignment (product of lookups)."""
    probs = _probs_array(dist)
    t, cprime = probs.shape
    path = list(path)
    if len(path) != t:
        raise ValueError(f"path length {len(path)} != frame count {t}")
    if any(not 0 <= p < cprime for p in path):
        raise ValueError("path entries must be valid class indices")
    with np.errstate(divide="ignore"):
        logs = np.log(probs[np.arange(t), path])
    return float(np.exp(logs.sum()))


def validate_target(target, num_letters: int) -> list[int]:
    target = list(target)
    if any(not 0 <= l < num_letters for l in target):
        raise ValueError("target labels must be letter indices (blank excluded)")
    return target


def sequence_probability_bruteforce(dist, target) -> float:
    """Eq.-by-enumeration oracle: sums every alignment that collapses to
    ``target``. Refuses instances with more than ``BRUTE_FORCE_LIMIT`` paths.
    """
    probs = _probs_array(dist)
    t, cprime = probs.shape
    blank = cprime - 1
    target = validate_target(target, blank)
    if cprime**t > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute-force enumeration refused: {cprime}**{t} paths exceeds {BRUTE_FORCE_LIMIT}")
    want = tuple(target)
    total = 0.0
    for path in itertools.product(range(cprime), repeat=t):
        if tuple(collapse(path, blank)) == want:
            total += alignment_probability(probs, path)
    return total


def collapse_partition(dist) -> dict[tuple[int, ...], float]:
    """Brute-force probability of every label sequence reachable from dist."""
    probs = _probs_array(dist)
    t, cprime = probs.shape
    blank = cprime - 1
    if cprime**t > BRUTE_FORCE_LIMIT:
        raise ValueError("instance too large for exhaustive partition")
    table: dict[tuple[int, ...], float] = {}
    for path in itertools.product(range(cprime), repeat=t):
        key = tuple(collapse(path, blank))
        table[key] = table.get(key, 0.0) + alignment_probability(probs, path)
    return table


def _extended_target(target: list[int], blank: int) -> list[int]:
    ext = [blank]
    for l in target:
        ext.append(l)
        ext.append(blank)
    return ext


def _forward_lattice(lp: np.ndarray, ext: list[int]) -> np.ndarray:
    t_total, _ = lp.shape
    s_total = len(ext)
    alpha = np.full((t_total, s_total), NEG_INF)
    alpha[0, 0] = lp[0, ext[0]]
    if s_total > 1:
        alpha[0, 1] = lp[0, ext[1]]
    blank = ext[0]
    for t in range(1, t_total):
        prev = alpha[t - 1]
        cur = prev.copy()
        cur[1:] = np.logaddexp(cur[1:], prev[:-1])
        for s in range(2, s_total):
            if ext[s] != blank and ext[s] != ext[s - 2]:
                cur[s] = np.logaddexp(cur[s], prev[s - 2])
        alpha[t] = cur + lp[t, ext]
    return alpha


def _backward_lattice(lp: np.ndarray, ext: list[int]) -> np.ndarray:
    t_total, _ = lp.shape
    s_total = len(ext)
    beta = np.full((t_total, s_total), NEG_INF)
    beta[t_total - 1, s_total - 1] = 0.0
    if s_total > 1:
        beta[t_total - 1, s_total - 2] = 0.0
    blank = ext[0]
    for t in range(t_total - 2, -1, -1):
        nxt = beta[t + 1] + lp[t + 1, ext]
        cur = nxt.copy()
        cur[:-1] = np.logaddexp(cur[:-1], nxt[1:])
        for s in range(s_total - 2):
            if ext[s + 2] != blank and ext[s + 2] != ext[s]:
                cur[s] = np.logaddexp(cur[s], nxt[s + 2])
        beta[t] = cur
    return beta


def ctc_neg_log_prob(log_probs: np.ndarray, target) -> float:
    """-ln p(target | frames) by the forward dynamic program (log domain)."""
    lp = np.asarray(log_probs, dtype=np.float64)
    blank = lp.shape[1] - 1
    target = validate_target(target, blank)
    ext = _extended_target(target, blank)
    alpha = _forward_lattice(lp, ext)
    s_total = len(ext)
    tail = alpha[-1, s_total - 1]
    if s_total > 1:
        tail = np.logaddexp(tail, alpha[-1, s_total - 2])
    return float(-tail)


@dataclass
class CtcLossResult:
    """Loss value plus the feasibility flag batch code keys off."""

    loss: Tensor
    feasible: bool

    def value(self) -> float:
        return self.loss.item()


def _ctc_loss_node(log_probs: Tensor, target: list[int]) -> CtcLossResult:
    lp = log_probs.data
    t_total, cprime = lp.shape
    blank = cprime - 1
    ext = _extended_target(target, blank)
    s_total = len(ext)

    alpha = _forward_lattice(lp, ext)
    tail = alpha[-1, s_total - 1]
    if s_total > 1:
        tail = np.logaddexp(tail, alpha[-1, s_total - 2])
    if tail == NEG_INF:
        # Target needs more frames than available: flag it, never NaN.
        return CtcLossResult(Tensor(float("inf")), feasible=False)

    beta = _backward_lattice(lp, ext)
    log_p = tail

    # Soft-alignment posterior per (frame, class), aggregated over lattice
    # states carrying the same label.
    occupancy = alpha + beta
    gamma = np.full((t_total, cprime), NEG_INF)
    for s, lab in enumerate(ext):
        gamma[:, lab] = np.logaddexp(gamma[:, lab], occupancy[:, s])

    def vjp(g):
        return (-np.exp(gamma - log_p) * g,)

    out = _node(np.asarray(-log_p), (log_probs,), vjp)
    return CtcLossResult(out, feasible=True)


def ctc_loss(dist: FrameDistributionSeq, target) -> CtcLossResult:
    """-ln p(target | dist), differentiable through to the producing logits.

    Repeated letters in the target are handled by the interleaved-blank
    lattice. Infeasible targets (too few frames) yield +inf with
    ``feasible=False`` instead of raising, so batch loops can skip them.
    """
    target = validate_target(target, dist.blank_index)
    if dist.log_probs is not None:
        lp = dist.log_probs
    else:
        lp = log(clamp_min(dist.probs, 1e-300))
    return _ctc_loss_node(lp, target)
