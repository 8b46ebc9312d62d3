from __future__ import annotations

import numpy as np
import pytest
from hypothesis import strategies as st

from docarg.autodiff import Tensor
from docarg.corpus import Argument, Document, EventMention, TokenSpan, make_instances
from docarg.fixtures import analysis_corpus, analysis_templates, overfit_corpus, overfit_templates
from docarg.network import SlotSelector, _np_log_softmax


@pytest.fixture(scope="session")
def fixture_corpus():
    return analysis_corpus()


@pytest.fixture(scope="session")
def fixture_templates():
    return analysis_templates()


@pytest.fixture(scope="session")
def train_corpus():
    return overfit_corpus()


@pytest.fixture(scope="session")
def train_templates():
    return overfit_templates()


def make_selector(start_logits, end_logits, role="Role", slot_index=0) -> SlotSelector:
    start = np.asarray(start_logits, dtype=np.float64)
    end = np.asarray(end_logits, dtype=np.float64)
    return SlotSelector(
        slot_index=slot_index,
        role=role,
        psi=Tensor(np.zeros(1)),
        start_logits=Tensor(start),
        end_logits=Tensor(end),
        start_log_probs=_np_log_softmax(start),
        end_log_probs=_np_log_softmax(end),
    )


def random_document(rng: np.random.Generator, max_tokens: int = 40, max_events: int = 4):
    """Random document whose triggers are distinct single tokens (plus an
    occasional duplicated trigger span for the nesting rule)."""
    n = int(rng.integers(4, max_tokens + 1))
    n_sentences = int(rng.integers(1, min(6, n) + 1))
    cuts = sorted(rng.choice(np.arange(1, n), size=n_sentences - 1, replace=False).tolist()) if n_sentences > 1 else []
    bounds = [0] + cuts + [n]
    sentences = tuple((bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1))
    tokens = tuple(f"w{i}" for i in range(n))
    doc = Document(doc_id=f"rand-{rng.integers(1 << 30)}", tokens=tokens, sentences=sentences)

    n_events = int(rng.integers(1, max_events + 1))
    positions = rng.choice(n, size=min(n_events, n), replace=False)
    events = []
    for i, pos in enumerate(positions):
        events.append(
            EventMention(event_type=f"type{i % 2}", trigger=TokenSpan(int(pos), int(pos)))
        )
    if len(events) >= 1 and rng.random() < 0.3:
        events.append(events[0])  # identical trigger span, second event
    return doc, tuple(events)


def token_strategy():
    return st.text(alphabet="abcdexyz", min_size=1, max_size=4)
