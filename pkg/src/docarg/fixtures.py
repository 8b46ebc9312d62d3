"""Synthetic fixture corpora used by tests, the acceptance suite, and demos.

Documents are constructed so every argument string's earliest occurrence in
its document is the gold span, keeping render/parse round trips exact.
"""

from __future__ import annotations

import random
from pathlib import Path

from .corpus import Argument, Corpus, Document, EventMention, TokenSpan, write_corpus
from .templates import PromptTemplate, parse_template, write_templates

_NAMES = ["Anna", "Ben", "Carl", "Dora", "Eli", "Fay", "Gus", "Hana", "Ivan", "Jude"]
_PLACES = ["market", "bridge", "station", "harbor", "museum", "plaza"]


def multi_event_document() -> tuple[Document, tuple[EventMention, ...]]:
    """Four densely packed events (crash, stabbing, shooting, death) in one
    short news-style document; one cross-sentence argument."""
    sentences_tokens = [
        "A driver crashed his car into a crowded checkpoint .".split(),
        "Witnesses said the man stabbed two guards before fleeing .".split(),
        "Police shot the attacker minutes later .".split(),
        "A soldier and a female bystander were killed in the incident .".split(),
    ]
    tokens: list[str] = []
    sentences: list[tuple[int, int]] = []
    for sent in sentences_tokens:
        sentences.append((len(tokens), len(tokens) + len(sent)))
        tokens.extend(sent)
    doc = Document(doc_id="fixture-attack", tokens=tuple(tokens), sentences=tuple(sentences))
    events = (
        EventMention(
            event_type="Conflict.Attack.Crash",
            trigger=TokenSpan(2, 2),
            arguments=(
                Argument("Attacker", TokenSpan(0, 1)),
                Argument("Target", TokenSpan(6, 8)),
            ),
        ),
        EventMention(
            event_type="Conflict.Attack.Stab",
            trigger=TokenSpan(14, 14),
            arguments=(
                Argument("Attacker", TokenSpan(12, 13)),
                Argument("Victim", TokenSpan(15, 16)),
            ),
        ),
        EventMention(
            event_type="Conflict.Attack.Shoot",
            trigger=TokenSpan(21, 21),
            arguments=(
                Argument("Attacker", TokenSpan(20, 20)),
                Argument("Target", TokenSpan(22, 23)),
            ),
        ),
        EventMention(
            event_type="Life.Die",
            trigger=TokenSpan(34, 34),
            arguments=(
                Argument("Victim", TokenSpan(27, 28)),
                Argument("Victim", TokenSpan(30, 32)),
                Argument("Killer", TokenSpan(23, 23)),
            ),
        ),
    )
    return doc, events


def overlap_document() -> tuple[Document, tuple[EventMention, ...]]:
    """Two events sharing the identical argument span (0, 1)."""
    sentences_tokens = [
        "Armed rebels bombed the convoy near the border .".split(),
        "The strike destroyed the convoy completely .".split(),
    ]
    tokens: list[str] = []
    sentences: list[tuple[int, int]] = []
    for sent in sentences_tokens:
        sentences.append((len(tokens), len(tokens) + len(sent)))
        tokens.extend(sent)
    doc = Document(doc_id="fixture-overlap", tokens=tuple(tokens), sentences=tuple(sentences))
    events = (
        EventMention(
            event_type="Conflict.Attack.Bomb",
            trigger=TokenSpan(2, 2),
            arguments=(
                Argument("Attacker", TokenSpan(0, 1)),
                Argument("Target", TokenSpan(3, 4)),
            ),
        ),
        EventMention(
            event_type="Artifact.Destroy",
            trigger=TokenSpan(11, 11),
            arguments=(
                Argument("Instrument", TokenSpan(9, 10)),
                Argument("Target", TokenSpan(3, 4)),
            ),
        ),
    )
    return doc, events


def analysis_corpus() -> Corpus:
    return [multi_event_document(), overlap_document()]


def analysis_templates() -> dict[str, PromptTemplate]:
    raw = {
        "Conflict.Attack.Crash": "<Attacker> crashed into <Target> at <Place>",
        "Conflict.Attack.Stab": "<Attacker> stabbed <Victim> using <Instrument>",
        "Conflict.Attack.Shoot": "<Attacker> shot <Target> with <Instrument>",
        "Life.Die": "<Killer> killed <Victim> and <Victim> at <Place>",
        "Conflict.Attack.Bomb": "<Attacker> bombed <Target> at <Place>",
        "Artifact.Destroy": "<Instrument> destroyed <Target>",
    }
    return {t: parse_template(t, s) for t, s in raw.items()}


def _attack_sentence(rng: random.Random, names: list[str], place: str) -> tuple[list[str], EventMention]:
    two_victims = rng.random() < 0.4 and len(names) >= 3
    if two_victims:
        a, b, c = names.pop(), names.pop(), names.pop()
        sent = [a, "attacked", b, "and", c, "at", "the", place, "."]
        args = (
            Argument("Attacker", TokenSpan(0, 0)),
            Argument("Victim", TokenSpan(2, 2)),
            Argument("Victim", TokenSpan(4, 4)),
            Argument("Place", TokenSpan(6, 7)),
        )
    else:
        a, b = names.pop(), names.pop()
        sent = [a, "attacked", b, "at", "the", place, "."]
        args = (
            Argument("Attacker", TokenSpan(0, 0)),
            Argument("Victim", TokenSpan(2, 2)),
            Argument("Place", TokenSpan(4, 5)),
        )
    return sent, EventMention(event_type="attack", trigger=TokenSpan(1, 1), arguments=args)


def _move_sentence(rng: random.Random, names: list[str], place: str) -> tuple[list[str], EventMention]:
    a = names.pop()
    sent = [a, "moved", "to", "the", place, "."]
    args = (
        Argument("Agent", TokenSpan(0, 0)),
        Argument("Destination", TokenSpan(3, 4)),
    )
    return sent, EventMention(event_type="move", trigger=TokenSpan(1, 1), arguments=args)


def _shift_event(event: EventMention, offset: int) -> EventMention:
    return EventMention(
        event_type=event.event_type,
        trigger=TokenSpan(event.trigger.start + offset, event.trigger.end + offset),
        trigger_head=event.trigger_head,
        arguments=tuple(
            Argument(a.role, TokenSpan(a.span.start + offset, a.span.end + offset), a.head)
            for a in event.arguments
        ),
    )


def overfit_corpus(n_docs: int = 8, seed: int = 7) -> Corpus:
    """Small two-event-type corpus (at most 3 events per document) that a
    tiny model can drive to perfect training Arg-C."""
    rng = random.Random(seed)
    corpus: Corpus = []
    for d in range(n_docs):
        names = _NAMES.copy()
        places = _PLACES.copy()
        rng.shuffle(names)
        rng.shuffle(places)
        n_sentences = rng.randint(1, 3)
        tokens: list[str] = []
        sentences: list[tuple[int, int]] = []
        events: list[EventMention] = []
        for s in range(n_sentences):
            maker = _attack_sentence if rng.random() < 0.6 else _move_sentence
            sent, event = maker(rng, names, places.pop())
            if s == 0:
                # keep arguments off token 0: span (0, 0) is the null output
                sent = ["Reportedly", ","] + sent
                event = _shift_event(event, 2)
            offset = len(tokens)
            sentences.append((offset, offset + len(sent)))
            tokens.extend(sent)
            events.append(_shift_event(event, offset))
        corpus.append(
            (
                Document(doc_id=f"overfit-{d}", tokens=tuple(tokens), sentences=tuple(sentences)),
                tuple(events),
            )
        )
    return corpus


def overfit_templates() -> dict[str, PromptTemplate]:
    raw = {
        "attack": "<Attacker> attacked <Victim> and <Victim> at <Place>",
        "move": "<Agent> moved to <Destination>",
    }
    return {t: parse_template(t, s) for t, s in raw.items()}


def write_fixture_files(directory: str | Path) -> dict[str, Path]:
    """Materialize all fixture corpora and templates as JSONL files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "analysis_corpus": directory / "analysis_corpus.jsonl",
        "analysis_templates": directory / "analysis_templates.jsonl",
        "overfit_corpus": directory / "overfit_corpus.jsonl",
        "overfit_templates": directory / "overfit_templates.jsonl",
    }
    write_corpus(analysis_corpus(), paths["analysis_corpus"])
    write_templates(analysis_templates(), paths["analysis_templates"])
    write_corpus(overfit_corpus(), paths["overfit_corpus"])
    write_templates(overfit_templates(), paths["overfit_templates"])
    return paths
