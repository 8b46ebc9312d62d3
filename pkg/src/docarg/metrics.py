"""Arg-I / Arg-C precision, recall, F1, and analysis breakdowns.

A prediction counts only when attached to the correct (doc, event) pair.
Arg-I matches on span equality against any gold argument of that event;
Arg-C additionally requires role equality. Matching is one-to-one: each
gold argument can absorb at most one prediction. Scores are micro-averaged.

Role-level bucketings (distance, same_sentence) score each (event, role)
item independently, so their Arg-I equals their Arg-C by construction;
predictions for roles without gold arguments land in a "no_gold" bucket.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import (
    Corpus,
    Document,
    EventMention,
    TokenSpan,
    document_has_overlap,
    role_distance,
)
from .errors import DataError

DEFAULT_DISTANCE_EDGES = (-20, -10, 0, 1, 11, 21)

BUCKETINGS = ("overlap", "distance", "same_sentence")


@dataclass(frozen=True)
class Prediction:
    doc_id: str
    event_index: int
    role: str
    span: TokenSpan
    text: str = ""

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "event_index": self.event_index,
            "role": self.role,
            "span": self.span.as_list(),
            "text": self.text,
        }


def write_predictions(predictions: Iterable[Prediction], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for pred in predictions:
            fh.write(json.dumps(pred.to_record(), ensure_ascii=False) + "\n")


def load_predictions(path: str | Path) -> list[Prediction]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON: {exc.msg}") from exc
            out.append(
                Prediction(
                    doc_id=str(r["doc_id"]),
                    event_index=int(r["event_index"]),
                    role=str(r["role"]),
                    span=TokenSpan(int(r["span"][0]), int(r["span"][1])),
                    text=str(r.get("text", "")),
                )
            )
    return out


def gold_as_predictions(corpus: Corpus) -> list[Prediction]:
    """Render gold annotations in prediction form (oracle predictions)."""
    out = []
    for doc, events in corpus:
        for ev_idx, ev in enumerate(events):
            seen: set[tuple[str, TokenSpan]] = set()
            for arg in ev.arguments:
                key = (arg.role, arg.span)
                if key in seen:
                    continue
                seen.add(key)
                out.append(Prediction(doc.doc_id, ev_idx, arg.role, arg.span, doc.text(arg.span)))
    return out


@dataclass
class Prf:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, matched: int, predicted: int, gold: int) -> "Prf":
        p = matched / predicted if predicted else 0.0
        r = matched / gold if gold else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(precision=p, recall=r, f1=f)

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


@dataclass
class EvalReport:
    arg_i: Prf
    arg_c: Prf
    counts: dict[str, int]
    buckets: dict[str, "EvalReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "arg_i": self.arg_i.to_dict(),
            "arg_c": self.arg_c.to_dict(),
            "counts": dict(self.counts),
        }
        if self.buckets:
            out["buckets"] = {k: v.to_dict() for k, v in self.buckets.items()}
        return out


@dataclass
class _Item:
    """One scoring unit: gold (role, span) pairs vs predicted ones."""

    golds: list[tuple[str, TokenSpan]]
    preds: list[tuple[str, TokenSpan]]


def _match_counts(item: _Item) -> tuple[int, int]:
    gold_spans = Counter(span for _, span in item.golds)
    pred_spans = Counter(span for _, span in item.preds)
    matched_i = sum((gold_spans & pred_spans).values())
    gold_pairs = Counter(item.golds)
    pred_pairs = Counter(item.preds)
    matched_c = sum((gold_pairs & pred_pairs).values())
    return matched_i, matched_c


def _score_items(items: Sequence[_Item]) -> EvalReport:
    gold = sum(len(it.golds) for it in items)
    predicted = sum(len(it.preds) for it in items)
    matched_i = 0
    matched_c = 0
    for it in items:
        mi, mc = _match_counts(it)
        matched_i += mi
        matched_c += mc
    return EvalReport(
        arg_i=Prf.from_counts(matched_i, predicted, gold),
        arg_c=Prf.from_counts(matched_c, predicted, gold),
        counts={
            "gold": gold,
            "predicted": predicted,
            "matched_arg_i": matched_i,
            "matched_arg_c": matched_c,
        },
    )


def _event_items(
    corpus: Corpus, predictions: Sequence[Prediction]
) -> list[tuple[Document, EventMention, _Item]]:
    events_by_doc: dict[str, tuple[Document, tuple[EventMention, ...]]] = {}
    for doc, events in corpus:
        events_by_doc[doc.doc_id] = (doc, events)
    preds_by_event: dict[tuple[str, int], list[tuple[str, TokenSpan]]] = {}
    for pred in predictions:
        entry = events_by_doc.get(pred.doc_id)
        if entry is None or not 0 <= pred.event_index < len(entry[1]):
            raise DataError(f"prediction references unknown event ({pred.doc_id!r}, {pred.event_index})")
        preds_by_event.setdefault((pred.doc_id, pred.event_index), []).append((pred.role, pred.span))
    out = []
    for doc, events in corpus:
        for ev_idx, ev in enumerate(events):
            golds = [(a.role, a.span) for a in ev.arguments]
            preds = preds_by_event.get((doc.doc_id, ev_idx), [])
            out.append((doc, ev, _Item(golds=golds, preds=preds)))
    return out


def score(corpus: Corpus, predictions: Sequence[Prediction]) -> EvalReport:
    items = [item for _, _, item in _event_items(corpus, predictions)]
    return _score_items(items)


def _distance_label(d: int, edges: Sequence[int]) -> str:
    if d < edges[0]:
        return f"(-inf,{edges[0]})"
    for lo, hi in zip(edges, edges[1:]):
        if lo <= d < hi:
            return f"[{lo},{hi})"
    return f"[{edges[-1]},inf)"


def _role_items(
    corpus: Corpus,
    predictions: Sequence[Prediction],
    labeler,
) -> dict[str, list[_Item]]:
    """Split each event into per-role items and bucket them by `labeler`,
    which maps (doc, event, role-with-gold) to a bucket label."""
    grouped: dict[str, list[_Item]] = {}
    for doc, ev, item in _event_items(corpus, predictions):
        roles = {r for r, _ in item.golds} | {r for r, _ in item.preds}
        for role in sorted(roles):
            golds = [(r, s) for r, s in item.golds if r == role]
            preds = [(r, s) for r, s in item.preds if r == role]
            label = labeler(doc, ev, role) if golds else "no_gold"
            grouped.setdefault(label, []).append(_Item(golds=golds, preds=preds))
    return grouped


def bucket_report(
    corpus: Corpus,
    predictions: Sequence[Prediction],
    bucketing: str,
    distance_edges: Sequence[int] = DEFAULT_DISTANCE_EDGES,
) -> dict[str, EvalReport]:
    if bucketing == "overlap":
        grouped: dict[str, list[_Item]] = {"overlap": [], "non_overlap": []}
        overlap_docs = {doc.doc_id: document_has_overlap(events) for doc, events in corpus}
        for doc, _, item in _event_items(corpus, predictions):
            grouped["overlap" if overlap_docs[doc.doc_id] else "non_overlap"].append(item)
    elif bucketing == "distance":
        grouped = _role_items(
            corpus,
            predictions,
            lambda doc, ev, role: _distance_label(role_distance(doc, ev, role).distance, distance_edges),
        )
    elif bucketing == "same_sentence":
        grouped = _role_items(
            corpus,
            predictions,
            lambda doc, ev, role: "D=0" if role_distance(doc, ev, role).same_sentence else "D!=0",
        )
    else:
        raise ValueError(f"unknown bucketing {bucketing!r}; expected one of {BUCKETINGS}")
    return {label: _score_items(items) for label, items in sorted(grouped.items()) if items}


def render_table(report: EvalReport) -> str:
    """Fixed-width rendering of a report and its buckets."""
    rows = [("overall", report)] + sorted(report.buckets.items())
    width = max(12, max(len(name) for name, _ in rows) + 2)
    header = f"{'bucket':<{width}} {'gold':>6} {'pred':>6} {'Arg-I P':>8} {'Arg-I R':>8} {'Arg-I F1':>9} {'Arg-C P':>8} {'Arg-C R':>8} {'Arg-C F1':>9}"
    lines = [header, "-" * len(header)]
    for name, rep in rows:
        lines.append(
            f"{name:<{width}} {rep.counts['gold']:>6} {rep.counts['predicted']:>6} "
            f"{rep.arg_i.precision:>8.4f} {rep.arg_i.recall:>8.4f} {rep.arg_i.f1:>9.4f} "
            f"{rep.arg_c.precision:>8.4f} {rep.arg_c.recall:>8.4f} {rep.arg_c.f1:>9.4f}"
        )
    return "\n".join(lines)
