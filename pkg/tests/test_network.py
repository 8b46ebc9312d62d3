from __future__ import annotations

import math

import numpy as np
import pytest

from docarg.autodiff import Tensor
from docarg.backbone import ModelConfig, grad_check
from docarg.corpus import Document, EventMention, NULL_SPAN, TokenSpan, make_instances
from docarg.fixtures import analysis_corpus, analysis_templates
from docarg.network import AwarenessEmbedding, ExtractionModel, selection_loss
from docarg.templates import PROMPT_SEPARATOR
from docarg.training import batch_targets
from docarg.vocab import build_vocab

from conftest import make_selector


def tiny_model(corpus, templates, **overrides) -> ExtractionModel:
    vocab = build_vocab([corpus], templates)
    base = dict(hidden=8, layers=2, heads=2, ffn=16, vocab_size=len(vocab), max_context=96, prefix_len=4, seed=0)
    base.update(overrides)
    return ExtractionModel(ModelConfig(**base), vocab)


@pytest.fixture(scope="module")
def model_and_instances():
    corpus = analysis_corpus()
    templates = analysis_templates()
    model = tiny_model(corpus, templates)
    doc, events = corpus[0]
    encoded = [model.encode_instance(i, templates) for i in make_instances(doc, events)]
    return model, templates, corpus, encoded


# ---------------------------------------------------------------------------
# awareness embeddings


def test_wc_single_event_length(model_and_instances):
    model, templates, corpus, _ = model_and_instances
    doc = Document(doc_id="one", tokens=("Anna", "crashed", "."), sentences=((0, 3),))
    events = (EventMention(event_type="Conflict.Attack.Crash", trigger=TokenSpan(1, 1)),)
    enc = model.encode_instance(make_instances(doc, events)[0], templates)
    wc = model.compute_wc(enc)
    assert wc.kind == "co_occurrence"
    assert wc.matrix.shape == (len(templates["Conflict.Attack.Crash"].template_tokens), model.config.hidden)


def test_wc_four_event_length(model_and_instances):
    model, templates, _, encoded = model_and_instances
    enc = encoded[0]
    wc = model.compute_wc(enc)
    expected = sum(len(templates[ev.event_type].template_tokens) for ev in enc.instance.events) + 3
    assert wc.matrix.shape == (expected, model.config.hidden)


def test_wc_stable_under_file_permutation(model_and_instances):
    model, templates, corpus, encoded = model_and_instances
    doc, events = corpus[0]
    base = model.compute_wc(encoded[3]).matrix.data
    permuted_events = (events[1], events[3], events[0], events[2])
    target_index = permuted_events.index(events[3])
    inst = make_instances(doc, permuted_events)[target_index]
    other = model.compute_wc(model.encode_instance(inst, templates)).matrix.data
    assert np.array_equal(base, other)


def test_wc_truncates_with_warning_count(model_and_instances):
    model, templates, _, encoded = model_and_instances
    small = tiny_model(analysis_corpus(), templates, max_context=5)
    enc = small.encode_instance(encoded[0].instance, templates)
    before = small.truncations
    wc = small.compute_wc(enc)
    assert wc.matrix.shape[0] == 5
    assert small.truncations == before + 1


def test_ws_single_sentence_equals_unmasked(model_and_instances):
    model, templates, *_ = model_and_instances
    doc = Document(doc_id="one", tokens=("Anna", "crashed", "into", "Ben"), sentences=((0, 4),))
    events = (EventMention(event_type="Conflict.Attack.Crash", trigger=TokenSpan(1, 1)),)
    enc = model.encode_instance(make_instances(doc, events)[0], templates)
    assert (enc.structure_additive == 0.0).all()
    ws = model.compute_ws(enc)
    hidden = model.backbone.encoder_forward(enc.labeled_ids, additive_mask=None)
    unmasked = model.backbone.decoder_forward(hidden, memory=hidden)
    assert np.allclose(ws.matrix.data, unmasked.data, atol=1e-12)


def test_ws_encoder_rows_obey_zero_blocks(model_and_instances):
    model, templates, corpus, encoded = model_and_instances
    enc = encoded[0]  # four-sentence document
    capture: list = []
    model.backbone.encoder_forward(enc.labeled_ids, additive_mask=enc.structure_additive, capture=capture)
    labeled = enc.labeled
    trigger = labeled.trigger_sentence_index
    sents = labeled.labeled_sentences
    for weights in capture:
        for a, (sa, ea) in enumerate(sents):
            for b, (sb, eb) in enumerate(sents):
                if a == b or a == trigger or b == trigger:
                    continue
                assert (weights[:, sa:ea, sb:eb] == 0.0).all()


def test_ws_gradient(model_and_instances):
    model, templates, *_ = model_and_instances
    doc = Document(doc_id="g", tokens=("Anna", "crashed", ".", "Ben", "fled", "."), sentences=((0, 3), (3, 6)))
    events = (EventMention(event_type="Conflict.Attack.Crash", trigger=TokenSpan(1, 1)),)
    enc = model.encode_instance(make_instances(doc, events)[0], templates)
    proj = np.random.default_rng(0).normal(size=(len(enc.labeled_ids), model.config.hidden))

    def loss_fn():
        return (model.compute_ws(enc).matrix * Tensor(proj)).sum()

    err = grad_check(loss_fn, list(model.params.values()), epsilon=1e-6, sample_size=220)
    assert err <= 1e-4


# ---------------------------------------------------------------------------
# prefix compression


def test_compress_prefix_shapes():
    corpus = analysis_corpus()
    templates = analysis_templates()
    model = tiny_model(corpus, templates, hidden=32, heads=4, ffn=32, prefix_len=40, layers=2)
    w = AwarenessEmbedding(kind="co_occurrence", matrix=Tensor(np.random.default_rng(0).normal(size=(7, 32))))
    pack = model.compress_prefix(w)
    assert len(pack.layers) == 2
    for k, v in pack.layers:
        assert k.shape == (40, 32)
        assert v.shape == (40, 32)


@pytest.mark.parametrize("rows", [1, 2, 5, 17])
def test_compress_prefix_segment_count_independent_of_rows(rows):
    corpus = analysis_corpus()
    templates = analysis_templates()
    model = tiny_model(corpus, templates, layers=3)
    w = AwarenessEmbedding(kind="structure", matrix=Tensor(np.random.default_rng(rows).normal(size=(rows, 8))))
    pack = model.compress_prefix(w)
    assert len(pack.layers) == model.config.layers
    for k, v in pack.layers:
        assert k.shape == (model.config.prefix_len, model.config.hidden)


def test_compress_prefix_single_row_attention_weight_one():
    corpus = analysis_corpus()
    templates = analysis_templates()
    model = tiny_model(corpus, templates)
    row = np.random.default_rng(1).normal(size=(1, 8))
    w = AwarenessEmbedding(kind="co_occurrence", matrix=Tensor(row))
    from docarg.backbone import attention

    query = model.params["compress.co.query"]
    capture: list = []
    pooled = attention(query, w.matrix, w.matrix, heads=model.config.heads, capture=capture)
    assert (capture[0] == 1.0).all()
    assert np.array_equal(pooled.data, np.broadcast_to(row, pooled.shape))


def test_compress_prefix_depends_on_input():
    corpus = analysis_corpus()
    templates = analysis_templates()
    model = tiny_model(corpus, templates)
    rng = np.random.default_rng(2)
    w1 = AwarenessEmbedding(kind="structure", matrix=Tensor(rng.normal(size=(5, 8))))
    w2 = AwarenessEmbedding(kind="structure", matrix=Tensor(rng.normal(size=(5, 8))))
    p1 = model.compress_prefix(w1)
    p2 = model.compress_prefix(w2)
    assert not np.array_equal(p1.layers[0][0].data, p2.layers[0][0].data)


# ---------------------------------------------------------------------------
# forward pass


def test_forward_shapes_and_prob_normalization(model_and_instances):
    model, templates, _, encoded = model_and_instances
    enc = encoded[3]
    reps, selectors = model.forward(enc)
    L = len(enc.labeled_ids)
    assert reps.h_enc.shape == (L, model.config.hidden)
    assert reps.h_ctx.shape == (L, model.config.hidden)
    assert reps.h_prompt.shape == (len(enc.prompt_ids), model.config.hidden)
    assert len(selectors) == len(enc.slot_layout)
    for sel in selectors:
        assert sel.start_logits.shape == (L,)
        assert sel.end_logits.shape == (L,)
        assert abs(sel.start_probs.sum() - 1.0) <= 1e-12
        assert abs(sel.end_probs.sum() - 1.0) <= 1e-12


def test_ablation_identity_bitwise(model_and_instances):
    """use_structure=False and use_co=False must equal a pipeline with the
    prefix code paths removed."""
    model, templates, _, encoded = model_and_instances
    enc = encoded[1]
    reps, selectors = model.forward(enc, use_structure=False, use_co=False)

    # independently wired prefix-free pipeline
    h_enc = model.backbone.encoder_forward(enc.labeled_ids)
    h_ctx = model.backbone.decoder_forward(h_enc, memory=h_enc)
    prompt = model.backbone.embed_tokens(enc.prompt_ids)
    h_prompt = model.backbone.decoder_forward(prompt, memory=h_enc)
    assert np.array_equal(reps.h_enc.data, h_enc.data)
    assert np.array_equal(reps.h_ctx.data, h_ctx.data)
    assert np.array_equal(reps.h_prompt.data, h_prompt.data)

    w_start = model.params["selector.w_start"].data
    for sel, (pos, role) in zip(selectors, enc.slot_layout):
        expected = h_ctx.data @ (h_prompt.data[pos] * w_start)
        assert np.array_equal(sel.start_logits.data, expected)


def test_forward_ablation_flags_change_outputs(model_and_instances):
    model, templates, _, encoded = model_and_instances
    enc = encoded[0]
    base, _ = model.forward(enc, use_structure=False, use_co=False)
    with_s, _ = model.forward(enc, use_structure=True, use_co=False)
    with_c, _ = model.forward(enc, use_structure=False, use_co=True)
    assert not np.array_equal(base.h_enc.data, with_s.h_enc.data)
    assert np.array_equal(base.h_enc.data, with_c.h_enc.data)  # co prefix enters at the decoder
    assert not np.array_equal(base.h_ctx.data, with_c.h_ctx.data)


def test_selector_bilinearity(model_and_instances):
    """Scaling the start weight by a power of two scales start logits exactly;
    joint positive scaling leaves the span argmax unchanged."""
    model, templates, _, encoded = model_and_instances
    enc = encoded[2]
    _, selectors = model.forward(enc)
    base_start = [sel.start_logits.data.copy() for sel in selectors]
    base_end = [sel.end_logits.data.copy() for sel in selectors]

    w_start = model.params["selector.w_start"]
    w_end = model.params["selector.w_end"]
    w_start.data *= 2.0
    w_end.data *= 2.0
    try:
        _, scaled = model.forward(enc)
        for sel, s0, e0 in zip(scaled, base_start, base_end):
            assert np.array_equal(sel.start_logits.data, 2.0 * s0)
            assert np.array_equal(sel.end_logits.data, 2.0 * e0)
        from docarg.decoding import CandidateSet, select_span, span_scores

        candidates = CandidateSet.for_context(enc.labeled, max_length=10)
        for sel, s0, e0 in zip(scaled, base_start, base_end):
            before = select_span(candidates, span_scores(make_selector(s0, e0), candidates))
            after = select_span(candidates, span_scores(sel, candidates))
            assert before == after
    finally:
        w_start.data /= 2.0
        w_end.data /= 2.0


# ---------------------------------------------------------------------------
# loss


def test_loss_uniform_probs_closed_form():
    sel = make_selector(np.zeros(4), np.zeros(4))
    loss = selection_loss([sel], [TokenSpan(2, 3)])
    assert loss.item() == pytest.approx(2 * math.log(4), abs=1e-12)


def test_loss_probability_one_is_zero():
    start = np.full(5, -np.inf)
    end = np.full(5, -np.inf)
    start[1] = 0.0
    end[2] = 0.0
    sel = make_selector(start, end)
    loss = selection_loss([sel], [TokenSpan(1, 2)])
    assert loss.item() == 0.0


def test_loss_additivity(model_and_instances):
    model, templates, _, encoded = model_and_instances
    per_instance = []
    combined = None
    for enc in encoded[:2]:
        _, selectors = model.forward(enc)
        targets, _ = batch_targets(enc, selectors)
        loss = selection_loss(selectors, targets)
        per_instance.append(loss.item())
        combined = loss if combined is None else combined + loss
    assert combined.item() == pytest.approx(sum(per_instance), rel=1e-15)


def test_loss_gradient_full_pipeline(model_and_instances):
    model, templates, _, encoded = model_and_instances
    enc = encoded[2]
    _, selectors = model.forward(enc)
    frozen_targets, _ = batch_targets(enc, selectors)

    def loss_fn():
        _, sels = model.forward(enc)
        return selection_loss(sels, frozen_targets)

    err = grad_check(loss_fn, list(model.params.values()), epsilon=1e-5, sample_size=200)
    assert err <= 1e-4


def test_loss_mismatched_lengths():
    sel = make_selector(np.zeros(3), np.zeros(3))
    with pytest.raises(ValueError):
        selection_loss([sel], [])
