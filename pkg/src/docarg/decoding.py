"""Span decoding: candidate enumeration, scoring, and optimal assignment.

Candidate spans live in labeled coordinates. The span (0, 0) is the
distinguished null output meaning "no argument for this slot"; it is always
present exactly once, so a real single-token span at labeled position 0 is
not representable and deliberately excluded from enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus import LabeledContext, NULL_SPAN, TokenSpan
from .network import SlotSelector

# Cost used for cells added when padding a rectangular matrix to square.
# Padded cells appear the same number of times in every complete matching,
# so the value cannot change which real assignment is optimal.
PAD_COST = 1e6


@dataclass(frozen=True)
class CandidateSet:
    """All spans up to max_length whose endpoints are non-marker positions,
    plus the null span (0, 0), in lexicographic order."""

    spans: tuple[TokenSpan, ...]
    max_length: int

    @classmethod
    def build(cls, length: int, max_length: int, marker_positions: Iterable[int] = ()) -> "CandidateSet":
        markers = frozenset(marker_positions)
        spans = [NULL_SPAN]
        for i in range(length):
            if i in markers:
                continue
            for j in range(i, min(i + max_length, length)):
                if j in markers or (i, j) == (0, 0):
                    continue
                spans.append(TokenSpan(i, j))
        return cls(spans=tuple(spans), max_length=max_length)

    @classmethod
    def for_context(cls, labeled: LabeledContext, max_length: int) -> "CandidateSet":
        return cls.build(len(labeled.labeled_tokens), max_length, labeled.marker_positions())

    def __len__(self) -> int:
        return len(self.spans)


def span_scores(selector: SlotSelector, candidates: CandidateSet) -> np.ndarray:
    """score(i, j) = start_logit[i] + end_logit[j] for every candidate."""
    start = selector.start_logits.data
    end = selector.end_logits.data
    length = start.shape[0]
    for span in candidates.spans:
        if span.end >= length:
            raise ValueError(f"candidate ({span.start}, {span.end}) out of range for logits of length {length}")
    return np.array([start[s.start] + end[s.end] for s in candidates.spans])


def select_span(candidates: CandidateSet, scores: np.ndarray) -> TokenSpan:
    """Argmax over candidates; ties go to the lexicographically smallest
    (start, end), which makes the null span the all-tie answer."""
    if len(candidates) == 0:
        raise ValueError("empty candidate set")
    best = 0
    for idx in range(1, len(scores)):
        if scores[idx] > scores[best]:
            best = idx
    return candidates.spans[best]


def hungarian(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost assignment of size min(rows, cols) for a finite cost
    matrix. Rectangular inputs are padded square with PAD_COST; padded pairs
    are dropped from the result. Returns (row, col) pairs sorted by row.

    Classic O(n^3) potentials algorithm.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError(f"cost matrix must be 2-D and nonempty, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    rows, cols = cost.shape
    n = max(rows, cols)
    padded = np.full((n, n), PAD_COST, dtype=np.float64)
    padded[:rows, :cols] = cost

    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    assigned = np.zeros(n + 1, dtype=np.intp)  # assigned[j] = row matched to column j (1-based)
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        assigned[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = assigned[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = padded[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[assigned[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if assigned[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            assigned[j0] = assigned[j1]
            j0 = j1
    pairs = [
        (int(assigned[j]) - 1, j - 1)
        for j in range(1, n + 1)
        if assigned[j] != 0 and assigned[j] - 1 < rows and j - 1 < cols
    ]
    return sorted(pairs)


@dataclass
class Assignment:
    """Per-slot training targets for one role, in labeled coordinates."""

    targets: list[TokenSpan]  # one per slot; (0, 0) for unassigned slots
    pairs: list[tuple[int, int]]  # (slot index, gold index)
    dropped_golds: int


def assign_gold_to_slots(selectors: Sequence[SlotSelector], golds: Sequence[TokenSpan]) -> Assignment:
    """Optimal slot/gold pairing for one role under the selection loss.

    The matched cost of (slot k, gold g) is the negative log-likelihood of
    the gold span under slot k; unmatched slots pay the same for the null
    span. Minimizing the summed loss over all maximal pairings reduces to a
    min-cost matching on costs shifted by each slot's null cost. Golds beyond
    the slot count are dropped by cost and counted.
    """
    if not selectors:
        raise ValueError("role has no slots")
    if not golds:
        return Assignment(targets=[NULL_SPAN] * len(selectors), pairs=[], dropped_golds=0)
    null_cost = np.array([-(s.start_log_probs[0] + s.end_log_probs[0]) for s in selectors])
    cost = np.empty((len(selectors), len(golds)))
    for k, sel in enumerate(selectors):
        for g, span in enumerate(golds):
            cost[k, g] = -(sel.start_log_probs[span.start] + sel.end_log_probs[span.end])
    pairs = hungarian(cost - null_cost[:, None])
    targets = [NULL_SPAN] * len(selectors)
    for k, g in pairs:
        targets[k] = golds[g]
    return Assignment(targets=targets, pairs=pairs, dropped_golds=max(0, len(golds) - len(selectors)))


def predict_event(
    selectors: Sequence[SlotSelector],
    candidates: CandidateSet,
    labeled: LabeledContext,
) -> list[tuple[str, TokenSpan]]:
    """Per-slot argmax spans, nulls dropped, mapped to original coordinates,
    deduplicated on (role, span)."""
    out: list[tuple[str, TokenSpan]] = []
    seen: set[tuple[str, TokenSpan]] = set()
    for selector in selectors:
        span = select_span(candidates, span_scores(selector, candidates))
        if span == NULL_SPAN:
            continue
        original = labeled.map_span_to_original(span)
        key = (selector.role, original)
        if key not in seen:
            seen.add(key)
            out.append(key)
    return out
