"""Annotated-corpus ingestion, trigger marking, and structure masks.

Corpus files are JSONL, one document per line:

    {"doc_id": str, "tokens": [str], "sentences": [[start, end_exclusive]],
     "events": [{"event_type": str, "trigger": [start, end_inclusive],
                 "trigger_head": int?, "arguments":
                 [{"role": str, "span": [start, end_inclusive], "head": int?}]}]}

All indices are 0-based token indices. Argument and trigger spans are
inclusive on both ends; sentence ranges are half-open.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, UsageError

# Marker vocabulary for context labeling. The target trigger gets index -1;
# co-occurring triggers count from 0 in order of appearance.
TARGET_MARKER_INDEX = -1


def open_marker(k: int) -> str:
    return f"<t-{k}>"


def close_marker(k: int) -> str:
    return f"</t-{k}>"


class CorpusFormat(str, Enum):
    NORMALIZED = "normalized"


@dataclass(frozen=True)
class TokenSpan:
    """Inclusive token span. (0, 0) is the null span only in selector-output
    space; in gold annotations it is an ordinary single-token span."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end < self.start:
            raise DataError(f"bad span ({self.start}, {self.end})")

    def as_list(self) -> list[int]:
        return [self.start, self.end]

    def __len__(self) -> int:
        return self.end - self.start + 1


NULL_SPAN = TokenSpan(0, 0)


@dataclass(frozen=True)
class Argument:
    role: str
    span: TokenSpan
    head: int | None = None

    def head_index(self) -> int:
        """Head token; defaults to span start when the data has none."""
        return self.head if self.head is not None else self.span.start


@dataclass(frozen=True)
class EventMention:
    event_type: str
    trigger: TokenSpan
    trigger_head: int | None = None
    arguments: tuple[Argument, ...] = ()

    def trigger_head_index(self) -> int:
        return self.trigger_head if self.trigger_head is not None else self.trigger.start


@dataclass(frozen=True)
class Document:
    doc_id: str
    tokens: tuple[str, ...]
    sentences: tuple[tuple[int, int], ...]

    def sentence_of(self, token_index: int) -> int:
        for i, (s, e) in enumerate(self.sentences):
            if s <= token_index < e:
                return i
        raise DataError(f"{self.doc_id}: token index {token_index} outside all sentences")

    def text(self, span: TokenSpan) -> str:
        return " ".join(self.tokens[span.start : span.end + 1])


CorpusEntry = tuple[Document, tuple[EventMention, ...]]
Corpus = list[CorpusEntry]


@dataclass(frozen=True)
class Instance:
    """One extraction task: a document, all its events, and the target event.

    co_event_indices lists every event of the document (target included)
    ordered by trigger start index, ties broken by gold file order.
    """

    document: Document
    events: tuple[EventMention, ...]
    target_event_index: int
    co_event_indices: tuple[int, ...]

    @property
    def target_event(self) -> EventMention:
        return self.events[self.target_event_index]


@dataclass(frozen=True)
class LabeledContext:
    """Marker-inserted token sequence with bidirectional index maps.

    to_original maps labeled index -> original index, or None for marker
    positions. Sentence ranges are half-open in labeled coordinates; marker
    tokens inherit the sentence of the trigger they wrap.
    """

    labeled_tokens: tuple[str, ...]
    to_original: tuple[int | None, ...]
    from_original: tuple[int, ...]
    target_marker_ids: tuple[int, int]
    labeled_sentences: tuple[tuple[int, int], ...]
    trigger_sentence_index: int

    @property
    def trigger_sentence_range(self) -> tuple[int, int]:
        return self.labeled_sentences[self.trigger_sentence_index]

    def marker_positions(self) -> frozenset[int]:
        return frozenset(i for i, o in enumerate(self.to_original) if o is None)

    def map_span_to_original(self, span: TokenSpan) -> TokenSpan:
        s = self.to_original[span.start]
        e = self.to_original[span.end]
        if s is None or e is None:
            raise ValueError(f"span ({span.start}, {span.end}) touches a marker position")
        return TokenSpan(s, e)

    def map_span_from_original(self, span: TokenSpan) -> TokenSpan:
        return TokenSpan(self.from_original[span.start], self.from_original[span.end])


@dataclass(frozen=True)
class StructureMask:
    """Sentence-level attention restriction around the trigger sentence."""

    allow: np.ndarray  # bool, labeled_length x labeled_length

    def additive(self) -> np.ndarray:
        """0 where allowed, -inf where forbidden (additive pre-softmax mask)."""
        out = np.zeros(self.allow.shape, dtype=np.float64)
        out[~self.allow] = -np.inf
        return out


# ---------------------------------------------------------------------------
# ingestion


def _require(cond: bool, doc_id: str, message: str) -> None:
    if not cond:
        raise DataError(f"{doc_id}: {message}")


def validate_document(doc: Document) -> None:
    n = len(doc.tokens)
    _require(len(doc.sentences) > 0, doc.doc_id, "field sentences: document has no sentences")
    cursor = 0
    for s, e in doc.sentences:
        _require(s == cursor, doc.doc_id, f"field sentences: gap or overlap at {s}")
        _require(e > s, doc.doc_id, f"field sentences: empty sentence [{s}, {e})")
        cursor = e
    _require(cursor == n, doc.doc_id, f"field sentences: cover [0, {cursor}) but document has {n} tokens")


def validate_event(doc: Document, event: EventMention) -> None:
    n = len(doc.tokens)
    _require(event.trigger.end < n, doc.doc_id, f"field trigger: span end {event.trigger.end} >= token count {n}")
    trig_sent = doc.sentence_of(event.trigger.start)
    _require(
        doc.sentence_of(event.trigger.end) == trig_sent,
        doc.doc_id,
        f"field trigger: span ({event.trigger.start}, {event.trigger.end}) crosses a sentence boundary",
    )
    if event.trigger_head is not None:
        _require(
            event.trigger.start <= event.trigger_head <= event.trigger.end,
            doc.doc_id,
            f"field trigger_head: {event.trigger_head} outside trigger span",
        )
    for arg in event.arguments:
        _require(arg.span.end < n, doc.doc_id, f"field arguments: span end {arg.span.end} >= token count {n}")
        _require(
            (arg.span.start, arg.span.end) != (0, 0),
            doc.doc_id,
            "field arguments: span (0, 0) is reserved for the null selector output and cannot be a gold annotation",
        )
        if arg.head is not None:
            _require(
                arg.span.start <= arg.head <= arg.span.end,
                doc.doc_id,
                f"field arguments: head {arg.head} outside span ({arg.span.start}, {arg.span.end})",
            )


def _parse_span(raw: object, doc_id: str, field_name: str) -> TokenSpan:
    if not (isinstance(raw, list) and len(raw) == 2 and all(isinstance(v, int) for v in raw)):
        raise DataError(f"{doc_id}: field {field_name}: expected [start, end], got {raw!r}")
    try:
        return TokenSpan(raw[0], raw[1])
    except DataError as exc:
        raise DataError(f"{doc_id}: field {field_name}: {exc}") from exc


def parse_document_record(record: dict, line_number: int | None = None) -> CorpusEntry:
    where = f"line {line_number}" if line_number is not None else "record"
    if not isinstance(record, dict) or "doc_id" not in record:
        raise DataError(f"{where}: record is not a document object")
    doc_id = str(record["doc_id"])
    tokens = record.get("tokens")
    sentences = record.get("sentences")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise DataError(f"{doc_id}: field tokens: expected a list of strings")
    if not isinstance(sentences, list):
        raise DataError(f"{doc_id}: field sentences: expected a list of ranges")
    doc = Document(
        doc_id=doc_id,
        tokens=tuple(tokens),
        sentences=tuple((int(s), int(e)) for s, e in sentences),
    )
    validate_document(doc)
    events = []
    for ev in record.get("events", []):
        args = tuple(
            Argument(
                role=str(a["role"]),
                span=_parse_span(a.get("span"), doc_id, "arguments.span"),
                head=a.get("head"),
            )
            for a in ev.get("arguments", [])
        )
        event = EventMention(
            event_type=str(ev["event_type"]),
            trigger=_parse_span(ev.get("trigger"), doc_id, "trigger"),
            trigger_head=ev.get("trigger_head"),
            arguments=args,
        )
        validate_event(doc, event)
        events.append(event)
    return doc, tuple(events)


def load_corpus(path: str | Path, format_id: CorpusFormat | str = CorpusFormat.NORMALIZED) -> Corpus:
    """Load and validate a normalized JSONL corpus, in file order."""
    if CorpusFormat(format_id) is not CorpusFormat.NORMALIZED:
        raise UsageError(f"unsupported corpus format: {format_id}")
    path = Path(path)
    if not path.exists():
        raise UsageError(f"corpus file not found: {path}")
    corpus: Corpus = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON: {exc.msg}") from exc
            corpus.append(parse_document_record(record, line_number=lineno))
    return corpus


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc, events in corpus:
            fh.write(json.dumps(corpus_entry_to_record(doc, events), ensure_ascii=False) + "\n")


def corpus_entry_to_record(doc: Document, events: Sequence[EventMention]) -> dict:
    return {
        "doc_id": doc.doc_id,
        "tokens": list(doc.tokens),
        "sentences": [list(s) for s in doc.sentences],
        "events": [
            {
                "event_type": ev.event_type,
                "trigger": ev.trigger.as_list(),
                **({"trigger_head": ev.trigger_head} if ev.trigger_head is not None else {}),
                "arguments": [
                    {
                        "role": a.role,
                        "span": a.span.as_list(),
                        **({"head": a.head} if a.head is not None else {}),
                    }
                    for a in ev.arguments
                ],
            }
            for ev in events
        ],
    }


def make_instances(doc: Document, events: Sequence[EventMention]) -> list[Instance]:
    """One Instance per event; co-event order is trigger appearance order."""
    order = sorted(range(len(events)), key=lambda i: (events[i].trigger.start, i))
    return [
        Instance(
            document=doc,
            events=tuple(events),
            target_event_index=i,
            co_event_indices=tuple(order),
        )
        for i in range(len(events))
    ]


def corpus_instances(corpus: Corpus) -> list[Instance]:
    out: list[Instance] = []
    for doc, events in corpus:
        out.extend(make_instances(doc, events))
    return out


# ---------------------------------------------------------------------------
# context labeling


def _marker_indices(instance: Instance) -> dict[int, int]:
    """Map event index -> marker index (-1 for the target, else 0,1,2,...
    over non-target events in appearance order)."""
    out: dict[int, int] = {}
    k = 0
    for ev_idx in instance.co_event_indices:
        if ev_idx == instance.target_event_index:
            out[ev_idx] = TARGET_MARKER_INDEX
        else:
            out[ev_idx] = k
            k += 1
    return out


def _check_laminar(instance: Instance) -> None:
    spans = [(ev.trigger.start, ev.trigger.end) for ev in instance.events]
    for i in range(len(spans)):
        for j in range(i + 1, len(spans)):
            (s1, e1), (s2, e2) = spans[i], spans[j]
            if e1 < s2 or e2 < s1:
                continue  # disjoint
            nested = (s1 <= s2 and e2 <= e1) or (s2 <= s1 and e1 <= e2)
            if not nested:
                raise DataError(
                    f"{instance.document.doc_id}: trigger spans ({s1}, {e1}) and ({s2}, {e2}) partially intersect"
                )


def label_context(instance: Instance) -> LabeledContext:
    """Insert trigger markers around every trigger in the document.

    The target trigger is wrapped with <t--1>...</t--1>; every other trigger
    with <t-k>...</t-k>, k counting from 0 in appearance order. Identical
    trigger spans nest, the inner pair belonging to the event that appears
    earlier in co-event order.
    """
    doc = instance.document
    _check_laminar(instance)
    markers = _marker_indices(instance)
    rank = {ev_idx: r for r, ev_idx in enumerate(instance.co_event_indices)}

    opens: dict[int, list[int]] = {}
    closes: dict[int, list[int]] = {}
    for ev_idx, ev in enumerate(instance.events):
        opens.setdefault(ev.trigger.start, []).append(ev_idx)
        closes.setdefault(ev.trigger.end, []).append(ev_idx)
    for pos, evs in opens.items():
        # outermost first: longer span first; identical spans -> later event outside
        evs.sort(key=lambda e: (-instance.events[e].trigger.end, -rank[e]))
    for pos, evs in closes.items():
        # innermost first: later start first; identical spans -> earlier event inside
        evs.sort(key=lambda e: (-instance.events[e].trigger.start, rank[e]))

    labeled: list[str] = []
    to_original: list[int | None] = []
    from_original: list[int] = []
    sentence_starts: list[int] = []
    target_open = target_close = -1
    sent_iter = iter(doc.sentences)
    next_sentence_start = next(sent_iter)[0]

    for i, token in enumerate(doc.tokens):
        if i == next_sentence_start:
            sentence_starts.append(len(labeled))
            nxt = next(sent_iter, None)
            next_sentence_start = nxt[0] if nxt is not None else -1
        for ev_idx in opens.get(i, ()):
            if ev_idx == instance.target_event_index:
                target_open = len(labeled)
            labeled.append(open_marker(markers[ev_idx]))
            to_original.append(None)
        from_original.append(len(labeled))
        labeled.append(token)
        to_original.append(i)
        for ev_idx in closes.get(i, ()):
            if ev_idx == instance.target_event_index:
                target_close = len(labeled)
            labeled.append(close_marker(markers[ev_idx]))
            to_original.append(None)

    bounds = sentence_starts + [len(labeled)]
    labeled_sentences = tuple((bounds[i], bounds[i + 1]) for i in range(len(doc.sentences)))
    trigger_sentence_index = doc.sentence_of(instance.target_event.trigger.start)
    return LabeledContext(
        labeled_tokens=tuple(labeled),
        to_original=tuple(to_original),
        from_original=tuple(from_original),
        target_marker_ids=(target_open, target_close),
        labeled_sentences=labeled_sentences,
        trigger_sentence_index=trigger_sentence_index,
    )


# ---------------------------------------------------------------------------
# structure mask


def build_structure_mask(
    length: int,
    sentences: Sequence[tuple[int, int]],
    trigger_sentence: int,
) -> StructureMask:
    """Attention-permission matrix over a sentence partition.

    Rows for tokens in the trigger sentence are all-true; a token in any
    other sentence may attend only to its own sentence and the trigger
    sentence. `sentences` must partition [0, length) and is expressed in the
    same (labeled) coordinates as the mask.
    """
    if not 0 <= trigger_sentence < len(sentences):
        raise ValueError(f"trigger sentence index {trigger_sentence} out of range")
    cursor = 0
    for s, e in sentences:
        if s != cursor or e <= s:
            raise ValueError(f"sentences do not partition [0, {length}): bad range ({s}, {e})")
        cursor = e
    if cursor != length:
        raise ValueError(f"sentences cover [0, {cursor}), expected [0, {length})")

    allow = np.zeros((length, length), dtype=bool)
    ts, te = sentences[trigger_sentence]
    allow[ts:te, :] = True
    allow[:, ts:te] = True
    for s, e in sentences:
        allow[s:e, s:e] = True
    return StructureMask(allow=allow)


def structure_mask_for(labeled: LabeledContext) -> StructureMask:
    return build_structure_mask(
        len(labeled.labeled_tokens), labeled.labeled_sentences, labeled.trigger_sentence_index
    )


# ---------------------------------------------------------------------------
# corpus analysis


@dataclass
class CorpusStats:
    n_documents: int
    n_events: int
    n_arguments: int
    same_sentence_argument_fraction: float
    event_count_histogram: dict[int, int]
    argument_distance_histogram: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "n_documents": self.n_documents,
            "n_events": self.n_events,
            "n_arguments": self.n_arguments,
            "same_sentence_argument_fraction": self.same_sentence_argument_fraction,
            "event_count_histogram": {str(k): v for k, v in sorted(self.event_count_histogram.items())},
            "argument_distance_histogram": {str(k): v for k, v in sorted(self.argument_distance_histogram.items())},
        }


def argument_distance(event: EventMention, argument: Argument) -> int:
    """Signed head offset; negative when the argument sits left of the trigger."""
    return argument.head_index() - event.trigger_head_index()


def corpus_stats(corpus: Corpus) -> CorpusStats:
    n_events = 0
    n_arguments = 0
    same_sentence = 0
    event_hist: Counter[int] = Counter()
    dist_hist: Counter[int] = Counter()
    for doc, events in corpus:
        event_hist[len(events)] += 1
        for ev in events:
            n_events += 1
            trig_sent = doc.sentence_of(ev.trigger.start)
            s, e = doc.sentences[trig_sent]
            for arg in ev.arguments:
                n_arguments += 1
                if s <= arg.span.start and arg.span.end < e:
                    same_sentence += 1
                dist_hist[argument_distance(ev, arg)] += 1
    if n_arguments == 0:
        raise DataError("corpus has no arguments; same-sentence fraction is undefined")
    return CorpusStats(
        n_documents=len(corpus),
        n_events=n_events,
        n_arguments=n_arguments,
        same_sentence_argument_fraction=same_sentence / n_arguments,
        event_count_histogram=dict(event_hist),
        argument_distance_histogram=dict(dist_hist),
    )


def document_has_overlap(events: Sequence[EventMention]) -> bool:
    """True iff two distinct events share an identical argument token span."""
    for i in range(len(events)):
        spans_i = {a.span for a in events[i].arguments}
        for j in range(i + 1, len(events)):
            if any(a.span in spans_i for a in events[j].arguments):
                return True
    return False


def bucket_by_overlap(corpus: Corpus) -> dict[str, list[Instance]]:
    out: dict[str, list[Instance]] = {"overlap": [], "non_overlap": []}
    for doc, events in corpus:
        key = "overlap" if document_has_overlap(events) else "non_overlap"
        out[key].extend(make_instances(doc, events))
    return out


@dataclass(frozen=True)
class RoleDistance:
    """Maximum-magnitude signed argument distance of a role, plus whether
    the argument attaining it shares the trigger's sentence (D=0)."""

    distance: int
    same_sentence: bool


def role_distance(doc: Document, event: EventMention, role: str) -> RoleDistance:
    args = [a for a in event.arguments if a.role == role]
    if not args:
        raise ValueError(f"{doc.doc_id}: event has no gold argument for role {role!r}")
    best = args[0]
    best_d = argument_distance(event, best)
    for a in args[1:]:
        d = argument_distance(event, a)
        if abs(d) > abs(best_d):
            best, best_d = a, d
    trig_sent = doc.sentence_of(event.trigger_head_index())
    return RoleDistance(
        distance=best_d,
        same_sentence=doc.sentence_of(best.head_index()) == trig_sent,
    )
