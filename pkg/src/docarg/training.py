"""Seeded training loop, prediction, and checkpoint round trips."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .backbone import AdamW, ModelConfig, load_checkpoint, save_checkpoint
from .config import RunConfig
from .corpus import Corpus, corpus_instances
from .decoding import CandidateSet, assign_gold_to_slots, predict_event
from .errors import DataError, NumericError
from .metrics import Prediction
from .network import EncodedInstance, ExtractionModel, SlotSelector, selection_loss
from .templates import PromptTemplate, missing_event_types, parse_template, unknown_roles
from .vocab import Vocab, build_vocab


def check_corpus_against_templates(corpus: Corpus, templates: Mapping[str, PromptTemplate]) -> None:
    missing = missing_event_types(corpus, templates)
    if missing:
        raise DataError(f"event types without templates: {', '.join(missing)}")
    bad_roles = unknown_roles(corpus, templates)
    if bad_roles:
        doc_id, event_type, role = bad_roles[0]
        raise DataError(
            f"{len(bad_roles)} gold arguments use roles missing from their template, "
            f"first: doc {doc_id!r} type {event_type!r} role {role!r}"
        )


def batch_targets(
    enc: EncodedInstance, selectors: Sequence[SlotSelector]
) -> tuple[list, int]:
    """Per-slot training targets via optimal per-role assignment.

    Returns targets aligned with the selector order and the number of gold
    arguments dropped because a role had more golds than slots.
    """
    by_role: dict[str, list[SlotSelector]] = {}
    for sel in selectors:
        by_role.setdefault(sel.role, []).append(sel)
    target_by_slot: dict[int, object] = {}
    dropped = 0
    for role, sels in by_role.items():
        assignment = assign_gold_to_slots(sels, enc.gold_labeled.get(role, []))
        dropped += assignment.dropped_golds
        for sel, span in zip(sels, assignment.targets):
            target_by_slot[sel.slot_index] = span
    return [target_by_slot[sel.slot_index] for sel in selectors], dropped


class Trainer:
    def __init__(
        self,
        corpus: Corpus,
        templates: Mapping[str, PromptTemplate],
        config: RunConfig,
    ):
        check_corpus_against_templates(corpus, templates)
        self.config = config
        self.templates = dict(templates)
        self.vocab: Vocab = build_vocab([corpus], templates)
        self.model = ExtractionModel(config.model_config(vocab_size=len(self.vocab)), self.vocab)
        self.instances = [
            self.model.encode_instance(inst, templates) for inst in corpus_instances(corpus)
        ]
        if not self.instances:
            raise DataError("training corpus has no event instances")
        self.optimizer = AdamW(
            self.model.params, lr=config.lr, weight_decay=config.weight_decay
        )
        self.losses: list[float] = []
        self.dropped_golds = 0
        self._cursor = 0

    def _next_batch(self) -> list[EncodedInstance]:
        batch = []
        for _ in range(min(self.config.batch_size, len(self.instances))):
            batch.append(self.instances[self._cursor])
            self._cursor = (self._cursor + 1) % len(self.instances)
        return batch

    def step(self) -> float:
        total = None
        for enc in self._next_batch():
            _, selectors = self.model.forward(
                enc, use_structure=self.config.use_structure, use_co=self.config.use_co
            )
            targets, dropped = batch_targets(enc, selectors)
            self.dropped_golds += dropped
            loss = selection_loss(selectors, targets)
            total = loss if total is None else total + loss
        value = float(total.data)
        if not np.isfinite(value):
            raise NumericError(f"non-finite loss at step {len(self.losses)}: {value}")
        self.optimizer.zero_grad()
        total.backward()
        self.optimizer.step()
        self.losses.append(value)
        return value

    def train(self, steps: int | None = None, on_step: Callable[[int, float], None] | None = None) -> list[float]:
        steps = self.config.steps if steps is None else steps
        for _ in range(steps):
            loss = self.step()
            if on_step is not None:
                on_step(len(self.losses) - 1, loss)
        return self.losses

    def predict(self, corpus: Corpus | None = None) -> list[Prediction]:
        if corpus is None:
            encoded = self.instances
        else:
            encoded = [self.model.encode_instance(i, self.templates) for i in corpus_instances(corpus)]
        return predict_instances(self.model, encoded, self.config)


def predict_instances(
    model: ExtractionModel, encoded: Sequence[EncodedInstance], config: RunConfig
) -> list[Prediction]:
    out: list[Prediction] = []
    for enc in encoded:
        _, selectors = model.forward(
            enc, use_structure=config.use_structure, use_co=config.use_co
        )
        candidates = CandidateSet.for_context(enc.labeled, config.l_max)
        for role, span in predict_event(selectors, candidates, enc.labeled):
            out.append(
                Prediction(
                    doc_id=enc.doc_id,
                    event_index=enc.event_index,
                    role=role,
                    span=span,
                    text=enc.instance.document.text(span),
                )
            )
    return out


# ---------------------------------------------------------------------------
# checkpoint round trip


def save_model(
    path: str | Path,
    model: ExtractionModel,
    templates: Mapping[str, PromptTemplate],
    run_config: RunConfig,
) -> None:
    meta = {
        "model_config": model.config.to_dict(),
        "vocab": list(model.vocab.tokens),
        "templates": {t: tpl.render() for t, tpl in templates.items()},
        "run_config": run_config.to_dict(),
    }
    save_checkpoint(path, model.params, meta)


@dataclass
class LoadedModel:
    model: ExtractionModel
    templates: dict[str, PromptTemplate]
    run_config: RunConfig


def load_model(path: str | Path) -> LoadedModel:
    arrays, meta = load_checkpoint(path)
    config = ModelConfig.from_dict(meta["model_config"])
    vocab = Vocab(tokens=tuple(meta["vocab"]))
    model = ExtractionModel(config, vocab)
    expected = set(model.params)
    found = set(arrays)
    if expected != found:
        missing = expected - found
        extra = found - expected
        raise DataError(f"checkpoint parameter mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
    for name, arr in arrays.items():
        if model.params[name].data.shape != arr.shape:
            raise DataError(f"checkpoint parameter {name!r} has shape {arr.shape}, expected {model.params[name].data.shape}")
        model.params[name].data = arr.astype(np.float64)
    templates = {t: parse_template(t, s) for t, s in meta["templates"].items()}
    run_config = RunConfig(**meta["run_config"])
    return LoadedModel(model=model, templates=templates, run_config=run_config)
