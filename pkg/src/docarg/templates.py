"""Role-prompt templates, LLM prompt construction/parsing, and SFT export.

Template files are JSONL: {"event_type": str, "template": str} where role
names wrapped in angle brackets mark extraction slots, e.g.
"<Attacker> attacked <Victim> at <Place>". A role may occupy several slots.

The canonical answer format is line-oriented: one line per role,
"Role: [argument | argument]" with "[]" when the role has no argument.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import Corpus, Document, EventMention, Instance, TokenSpan, corpus_instances, label_context
from .errors import DataError

# Reserved separator between concatenated co-occurring prompts; keeps the
# per-event segmentation of the co-occurrence embedding recoverable.
PROMPT_SEPARATOR = "<sep>"

DOC_OPEN = "<doc>"
DOC_CLOSE = "</doc>"
SENT_OPEN = "<target-sent>"
SENT_CLOSE = "</target-sent>"

EXAMPLE_HEADER = "### Example"
QUESTION_HEADER = "### Question"

_SLOT_RE = re.compile(r"^<([^<>/][^<>]*)>$")
_ANSWER_LINE_RE = re.compile(r"^\s*([^:\[\]]+?)\s*:\s*\[(.*)\]\s*$")


@dataclass(frozen=True)
class PromptTemplate:
    event_type: str
    template_tokens: tuple[str, ...]
    slot_layout: tuple[tuple[int, str], ...]  # (token position, role)

    @property
    def roles(self) -> tuple[str, ...]:
        """Unique roles in first-slot order."""
        seen: dict[str, None] = {}
        for _, role in self.slot_layout:
            seen.setdefault(role, None)
        return tuple(seen)

    def render(self) -> str:
        return " ".join(self.template_tokens)


def parse_template(event_type: str, template: str) -> PromptTemplate:
    tokens = tuple(template.split())
    slots = tuple((i, m.group(1)) for i, tok in enumerate(tokens) if (m := _SLOT_RE.match(tok)))
    if not slots:
        raise DataError(f"template for {event_type!r} has zero slots: {template!r}")
    return PromptTemplate(event_type=event_type, template_tokens=tokens, slot_layout=slots)


def load_templates(path: str | Path) -> dict[str, PromptTemplate]:
    templates: dict[str, PromptTemplate] = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: line {lineno}: invalid JSON: {exc.msg}") from exc
            event_type = str(record["event_type"])
            if event_type in templates:
                raise DataError(f"{path}: line {lineno}: duplicate event_type {event_type!r}")
            templates[event_type] = parse_template(event_type, str(record["template"]))
    return templates


def write_templates(templates: Mapping[str, PromptTemplate], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for tpl in templates.values():
            fh.write(json.dumps({"event_type": tpl.event_type, "template": tpl.render()}) + "\n")


def missing_event_types(corpus: Corpus, templates: Mapping[str, PromptTemplate]) -> list[str]:
    """Event types present in the corpus but absent from the templates."""
    seen: dict[str, None] = {}
    for _, events in corpus:
        for ev in events:
            if ev.event_type not in templates:
                seen.setdefault(ev.event_type, None)
    return list(seen)


def unknown_roles(corpus: Corpus, templates: Mapping[str, PromptTemplate]) -> list[tuple[str, str, str]]:
    """(doc_id, event_type, role) triples where a gold role is missing from
    the event type's template role list."""
    out = []
    for doc, events in corpus:
        for ev in events:
            tpl = templates.get(ev.event_type)
            if tpl is None:
                continue
            allowed = set(tpl.roles)
            for arg in ev.arguments:
                if arg.role not in allowed:
                    out.append((doc.doc_id, ev.event_type, arg.role))
    return out


def concat_co_prompts(instance: Instance, templates: Mapping[str, PromptTemplate]) -> list[str]:
    """Prompts of all events in the document, in co-event (trigger
    appearance) order, joined with the reserved separator token."""
    out: list[str] = []
    for pos, ev_idx in enumerate(instance.co_event_indices):
        ev = instance.events[ev_idx]
        tpl = templates.get(ev.event_type)
        if tpl is None:
            raise DataError(f"{instance.document.doc_id}: no template for event type {ev.event_type!r}")
        if pos > 0:
            out.append(PROMPT_SEPARATOR)
        out.extend(tpl.template_tokens)
    return out


def select_example(event_type: str, corpus: Corpus) -> Instance:
    """Training instance of the type with the most gold arguments; earliest
    corpus order wins ties."""
    best: Instance | None = None
    best_count = -1
    for inst in corpus_instances(corpus):
        if inst.target_event.event_type != event_type:
            continue
        count = len(inst.target_event.arguments)
        if count > best_count:
            best, best_count = inst, count
    if best is None:
        raise DataError(f"no training instance for event type {event_type!r}")
    return best


def build_example_bank(corpus: Corpus) -> dict[str, Instance]:
    types: dict[str, None] = {}
    for _, events in corpus:
        for ev in events:
            types.setdefault(ev.event_type, None)
    return {t: select_example(t, corpus) for t in types}


def render_gold_answer(instance: Instance, templates: Mapping[str, PromptTemplate]) -> str:
    ev = instance.target_event
    tpl = templates.get(ev.event_type)
    if tpl is None:
        raise DataError(f"{instance.document.doc_id}: no template for event type {ev.event_type!r}")
    doc = instance.document
    lines = []
    for role in tpl.roles:
        spans = sorted((a.span for a in ev.arguments if a.role == role), key=lambda s: (s.start, s.end))
        payload = " | ".join(doc.text(s) for s in spans)
        lines.append(f"{role}: [{payload}]")
    return "\n".join(lines)


def _marked_document_text(instance: Instance) -> str:
    """Document text with trigger markers for every event and the target
    trigger's sentence wrapped in sentence tags."""
    labeled = label_context(instance)
    tokens = list(labeled.labeled_tokens)
    start, end = labeled.trigger_sentence_range
    tokens.insert(end, SENT_CLOSE)
    tokens.insert(start, SENT_OPEN)
    return " ".join(tokens)


def render_question(instance: Instance, cs_mode: bool) -> str:
    body = _marked_document_text(instance) if cs_mode else " ".join(instance.document.tokens)
    return f"{DOC_OPEN} {body} {DOC_CLOSE}"


@dataclass(frozen=True)
class LlmPrompt:
    instruction: str
    example: str
    question: str
    cs_mode: bool

    @property
    def text(self) -> str:
        return "\n\n".join([self.instruction, self.example, self.question])


def split_llm_prompt(text: str) -> tuple[str, str, str]:
    """Split a rendered prompt back into its three sections."""
    ex = text.find(f"\n\n{EXAMPLE_HEADER}\n")
    qu = text.find(f"\n\n{QUESTION_HEADER}\n")
    if ex < 0 or qu < 0 or qu < ex:
        raise ValueError("prompt does not contain the three delimited sections")
    return text[:ex], text[ex + 2 : qu], text[qu + 2 :]


def build_llm_prompt(
    instance: Instance,
    templates: Mapping[str, PromptTemplate],
    example_bank: Mapping[str, Instance],
    cs_mode: bool,
) -> LlmPrompt:
    ev = instance.target_event
    tpl = templates.get(ev.event_type)
    if tpl is None:
        raise DataError(f"{instance.document.doc_id}: no template for event type {ev.event_type!r}")
    example_instance = example_bank.get(ev.event_type)
    if example_instance is None:
        raise DataError(f"no one-shot example for event type {ev.event_type!r}")

    trigger_text = instance.document.text(ev.trigger)
    roles = ", ".join(tpl.roles)
    parts = [
        f"Extract the arguments of the {ev.event_type} event triggered by \"{trigger_text}\".",
        f"Possible roles: {roles}.",
        'Answer with one line per role, formatted as "Role: [argument | argument]"; write [] when a role has no argument.',
    ]
    if cs_mode:
        parts.append(
            "In the document, every event trigger is wrapped in numbered trigger tags, "
            "the target trigger is wrapped in the tags for index -1, and the sentence "
            "containing the target trigger is wrapped in target-sentence tags; focus on "
            "the marked trigger and its sentence."
        )
    instruction = " ".join(parts)

    example = "\n".join(
        [
            EXAMPLE_HEADER,
            render_question(example_instance, cs_mode=False),
            render_gold_answer(example_instance, templates),
        ]
    )
    question = "\n".join([QUESTION_HEADER, render_question(instance, cs_mode), "Answer:"])
    return LlmPrompt(instruction=instruction, example=example, question=question, cs_mode=cs_mode)


@dataclass
class ParsedOutput:
    arguments: list[tuple[str, TokenSpan]]
    unmatched: int
    errors: list[str]


def find_token_subsequence(tokens: Sequence[str], needle: Sequence[str]) -> TokenSpan | None:
    if not needle or len(needle) > len(tokens):
        return None
    first = needle[0]
    for i in range(len(tokens) - len(needle) + 1):
        if tokens[i] == first and list(tokens[i : i + len(needle)]) == list(needle):
            return TokenSpan(i, i + len(needle) - 1)
    return None


def parse_llm_output(text: str, event: EventMention, document: Document) -> ParsedOutput:
    """Parse canonical answer lines and ground argument strings to the
    earliest matching token span. Unmatched strings are dropped and counted;
    malformed lines are collected without aborting."""
    arguments: list[tuple[str, TokenSpan]] = []
    unmatched = 0
    errors: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        m = _ANSWER_LINE_RE.match(line)
        if m is None:
            errors.append(f"line {lineno}: not in 'role: [..]' format: {line!r}")
            continue
        role = m.group(1).strip()
        payload = m.group(2).strip()
        if not payload:
            continue
        for piece in payload.split("|"):
            needle = piece.strip().split()
            span = find_token_subsequence(document.tokens, needle)
            if span is None:
                unmatched += 1
            else:
                arguments.append((role, span))
    return ParsedOutput(arguments=arguments, unmatched=unmatched, errors=errors)


def export_sft(
    corpora: Sequence[Corpus],
    templates: Mapping[str, PromptTemplate],
    cs_mode: bool,
    out_path: str | Path,
) -> int:
    """Write one SFT record per instance across all corpora, in corpus order.

    Records are JSONL {"instruction", "input", "output"}; the output is the
    canonical gold answer rendering.
    """
    written = 0
    with Path(out_path).open("w", encoding="utf-8") as fh:
        for corpus in corpora:
            if not corpus:
                continue
            bank = build_example_bank(corpus)
            for inst in corpus_instances(corpus):
                prompt = build_llm_prompt(inst, templates, bank, cs_mode)
                record = {
                    "instruction": prompt.instruction,
                    "input": prompt.example + "\n\n" + prompt.question,
                    "output": render_gold_answer(inst, templates),
                }
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
                written += 1
    return written
